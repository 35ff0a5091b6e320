"""
A collection of useful decorator functions.
"""

import functools
import logging
import time

_LOGGER = logging.getLogger(__name__)


def timer(*, level: int = logging.DEBUG, precision: int = 4):
    """
    Log the runtime of the decorated function.

    Args:
        level: the logging level for the time message [default=DEBUG]
        precision: the number of decimals for the time [default=4]
    """

    def actual_decorator(func):
        @functools.wraps(func)
        def wrapper_timer(*args, **kwargs):
            start_time = time.perf_counter()
            value = func(*args, **kwargs)
            end_time = time.perf_counter()
            run_time = end_time - start_time
            _LOGGER.log(level, f"Finished {func.__name__!r} in {run_time:.{precision}f} secs")
            return value

        return wrapper_timer

    return actual_decorator


def log_refusal(func):
    """
    Log a RefusalError at WARNING level before it propagates.

    Refusals are expected outcomes of the mathematics, e.g. an uncontrollable pair, and are
    reported to the user. The log line keeps the name of the function that refused.
    """
    from relq.exceptions import RefusalError

    @functools.wraps(func)
    def wrapper_refusal(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except RefusalError as exc:
            _LOGGER.warning(f"{func.__name__} refused: {exc}")
            raise

    return wrapper_refusal
