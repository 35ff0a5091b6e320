"""
The configuration record with all numerical thresholds and solver knobs.

The defaults come from the groups ``Tolerances``, ``Riccati`` and ``Analysis`` in the packaged
``settings.yaml``, updated with the file named by ``RELQ_CONFIG``. Individual values can then be
overridden, which is what the ``--tol-override key=value`` option of the ``relq`` command does.

    >>> from relq.config import get_tolerances
    >>> tol = get_tolerances({"condition_limit": 1e10})
    >>> tol.condition_limit
    10000000000.0

Every function that makes a numerical decision accepts a ``tol`` argument and falls back to
`get_tolerances()` when it is None.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Mapping
from typing import Optional
from typing import Tuple

from relq.settings import Settings
from relq.settings import SettingsError

logger = logging.getLogger(__name__)

RICCATI_METHODS = ("fixed_point", "doubling")


@dataclass(frozen=True)
class Tolerances:
    symmetry: float = 1e-12
    psd: float = 1e-10
    stability_margin: float = 1e-8
    distinct: float = 1e-7
    imag_residual: float = 1e-8
    controllability_rtol: float = 1e-12
    condition_limit: float = 1e12
    rank_rtol: float = 1e-10
    mirror: float = 1e-6
    manifold: float = 1e-8
    riccati_step: float = 1e-12
    riccati_residual: float = 1e-9
    stabilizing_margin: float = 1e-10
    foc: float = 1e-8
    placement: float = 1e-6
    phi_mu_min: float = 1e-10
    map_gap: float = 1e-8
    path_identity: float = 1e-10
    moment_change: float = 1e-6
    divergence_norm: float = 1e12
    max_iter: int = 100_000
    method: str = "fixed_point"
    horizon: int = 500
    min_boundedness_horizon: int = 50
    retries: int = 5
    seed: int = 0
    perturbation: float = 0.1
    reset_time: int = 5
    max_workers: int = 1

    def replace(self, **changes) -> "Tolerances":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        """Returns the fields in declaration order, used for the 'config' section of reports."""
        return {field.name: getattr(self, field.name) for field in dataclasses.fields(self)}


_FIELD_TYPES = {field.name: field.type for field in dataclasses.fields(Tolerances)}


def _convert(key: str, value):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            as_float = float(value)
            if not as_float.is_integer():
                raise ValueError(f"{value!r} is not an integer")
            return int(as_float)
        if kind == "str":
            value = str(value)
            if key == "method" and value not in RICCATI_METHODS:
                raise ValueError(f"expected one of {', '.join(RICCATI_METHODS)}")
            return value
        return float(value)
    except (TypeError, ValueError) as exc:
        raise SettingsError(f"Invalid value {value!r} for '{key}': {exc}") from exc


def _settings_values() -> dict:
    values = {}
    for group in ("Tolerances", "Riccati", "Analysis"):
        for name, value in Settings.load(group).items():
            key = name.lower()
            if key not in _FIELD_TYPES:
                logger.warning(f"Ignoring unknown setting {group}.{name}")
                continue
            values[key] = _convert(key, value)
    return values


def get_tolerances(overrides: Optional[Mapping[str, object]] = None) -> Tolerances:
    """
    Returns the Tolerances from the settings, with the given overrides applied.

    Args:
        overrides: mapping of field name (case-insensitive) to value

    Raises:
        SettingsError when an override names an unknown field or has an invalid value.
    """
    values = _settings_values()

    for name, value in (overrides or {}).items():
        key = name.lower().replace("-", "_")
        if key not in _FIELD_TYPES:
            raise SettingsError(f"Unknown tolerance '{name}', expected one of {', '.join(_FIELD_TYPES)}")
        values[key] = _convert(key, value)
        logger.debug(f"Tolerance override {key} = {values[key]!r}")

    return Tolerances(**values)


def parse_override(text: str) -> Tuple[str, str]:
    """Splits 'key=value' into its parts."""
    key, sep, value = text.partition("=")
    if not sep or not key.strip() or not value.strip():
        raise SettingsError(f"Expected key=value, got {text!r}")
    return key.strip(), value.strip()


def resolve(tol: Optional[Tolerances]) -> Tolerances:
    return get_tolerances() if tol is None else tol
