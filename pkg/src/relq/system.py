"""
Small helpers shared by the relq modules: a wall clock timer for the experiments, the
dictionary type that carries the settings groups and the merge of local settings.
"""

from __future__ import annotations

import logging
import time

from rich.tree import Tree

logger = logging.getLogger(__name__)

REPR_ITEMS = 10


class Timer:
    """
    Context manager that measures the wall clock time of a block and logs it on exit.

        >>> with Timer("riccati sweep") as timer:
        ...     _ = sum(range(1000))
        >>> timer.elapsed >= 0.0
        True

    Calling the timer inside the block returns the seconds spent so far, after the block it
    returns the total.
    """

    def __init__(self, name: str = "Timer", precision: int = 3, log_level: int = logging.DEBUG):
        self.name = name
        self.precision = precision
        self.log_level = log_level
        self._start: float | None = None
        self._stop: float | None = None

    def __enter__(self) -> Timer:
        self._start = time.perf_counter()
        self._stop = None
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        self._stop = time.perf_counter()
        logger.log(self.log_level, f"{self.name}: {self.elapsed:0.{self.precision}f} seconds")
        return False

    def __call__(self) -> float:
        return self.elapsed

    @property
    def elapsed(self) -> float:
        if self._start is None:
            return 0.0
        stop = self._stop if self._stop is not None else time.perf_counter()
        return stop - self._start


class AttributeDict(dict):
    """
    A dictionary whose keys are also readable and writable as attributes, so a settings group
    reads as ``tolerances.SYMMETRY``.

        >>> group = AttributeDict({"SYMMETRY": 1e-12}, label="Tolerances")
        >>> group.SYMMETRY == group["SYMMETRY"]
        True
        >>> group.PSD = 1e-10
        >>> group["PSD"]
        1e-10

    The optional label is the root of the tree when the dictionary is printed with rich.
    """

    def __init__(self, *args, label: str | None = None, **kwargs):
        super().__init__(*args, **kwargs)
        object.__setattr__(self, "_label", label)

    def __getattr__(self, key):
        try:
            return self[key]
        except KeyError:
            raise AttributeError(key) from None

    def __setattr__(self, key, value):
        self[key] = value

    def __delattr__(self, key):
        try:
            del self[key]
        except KeyError:
            raise AttributeError(key) from None

    def __rich__(self) -> Tree:
        tree = Tree(self._label or type(self).__name__, guide_style="dim")
        _add_branches(tree, self)
        return tree

    def __repr__(self):
        shown = list(self.items())[:REPR_ITEMS]
        body = ", ".join(f"{key!r}: {value!r}" for key, value in shown)
        more = ", ..." if len(self) > REPR_ITEMS else ""
        return f"{type(self).__name__}({{{body}{more}}})"


def _add_branches(tree: Tree, mapping: dict):
    for key, value in mapping.items():
        if isinstance(value, dict):
            _add_branches(tree.add(f"[purple]{key}"), value)
        else:
            tree.add(f"[medium_purple1]{key}[/]: {value}")


def recursive_dict_update(this: dict, other: dict) -> dict:
    """
    Merge ``other`` into ``this`` in place. Nested groups are merged key by key, any other
    value in ``other`` replaces the one in ``this``.

    >>> defaults = {"Tolerances": {"PSD": 1e-10, "SYMMETRY": 1e-12}, "Report": {"SCHEMA_VERSION": 1}}
    >>> recursive_dict_update(defaults, {"Tolerances": {"PSD": 1e-8}})
    {'Tolerances': {'PSD': 1e-08, 'SYMMETRY': 1e-12}, 'Report': {'SCHEMA_VERSION': 1}}

    Raises:
        ValueError: when one of the arguments is not a dictionary.
    """

    if not (isinstance(this, dict) and isinstance(other, dict)):
        raise ValueError("Expected arguments of type dict.")

    for key, value in other.items():
        current = this.get(key)
        if isinstance(value, dict) and isinstance(current, dict):
            recursive_dict_update(current, value)
        else:
            this[key] = value

    return this
