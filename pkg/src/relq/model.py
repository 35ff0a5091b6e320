"""
The linear-quadratic rational expectations policy problem.

A model has ``n`` predetermined variables ``k`` and ``m`` non-predetermined (jump) variables ``q``,
stacked into the state ``y = (k, q)``. With one instrument ``r`` the state evolves as

    y_{t+1} = A y_t + B r_t (+ gamma z_t)

and the policy maker minimises the discounted loss ``sum_t beta^t (y_t' Q y_t + rho r_t^2)``. All
quantities are deviations from the targets ``k_star``, ``q_star`` and ``r_star``. A linear feedback
rule ``r_t = -F y_t`` is represented by a `PolicyRule`.

Model files are JSON documents with the keys ``n``, ``m``, ``beta``, ``rho``, ``A``, ``B``, ``Q`` and
the optional keys ``gamma``, ``z_path``, ``k_star``, ``q_star``, ``r_star`` and ``var_names``.
Use `load_model()` to read and validate a file and `save_model()` to write its canonical form.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np

from relq.config import Tolerances
from relq.config import resolve
from relq.exceptions import InvalidInputError
from relq.exceptions import ModelFileError
from relq.exceptions import ModelValidationError
from relq.serialize import dumps

logger = logging.getLogger(__name__)

RULE_KINDS = ("adhoc", "quasi_optimal", "commitment_as_if")

REQUIRED_FIELDS = ("n", "m", "beta", "rho", "A", "B", "Q")
OPTIONAL_FIELDS = ("gamma", "z_path", "k_star", "q_star", "r_star", "var_names")


def _frozen(value, *, ndim: int = None) -> Optional[np.ndarray]:
    if value is None:
        return None
    array = np.array(value, dtype=float)
    if ndim == 2 and array.ndim == 1:
        array = array.reshape(-1, 1)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """
    The primitives of one policy problem.

    Arrays are copied and made read-only on construction. ``B`` may be given as a vector and is
    stored as a column. Targets default to vectors of ones, i.e. deviations read as levels.
    """

    n: int
    m: int
    beta: float
    rho: float
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    gamma: Optional[np.ndarray] = None
    z_path: Optional[np.ndarray] = None
    k_star: Optional[np.ndarray] = None
    q_star: Optional[np.ndarray] = None
    r_star: float = 0.0
    var_names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "rho", float(self.rho))
        object.__setattr__(self, "A", _frozen(self.A))
        object.__setattr__(self, "B", _frozen(self.B, ndim=2))
        object.__setattr__(self, "Q", _frozen(self.Q))
        object.__setattr__(self, "gamma", _frozen(self.gamma, ndim=2))
        object.__setattr__(self, "z_path", _frozen(self.z_path, ndim=2))
        object.__setattr__(self, "k_star", _frozen(np.ones(self.n) if self.k_star is None else self.k_star))
        object.__setattr__(self, "q_star", _frozen(np.ones(self.m) if self.q_star is None else self.q_star))
        object.__setattr__(self, "r_star", float(self.r_star))
        if self.var_names is not None:
            object.__setattr__(self, "var_names", tuple(str(name) for name in self.var_names))

    @property
    def d(self) -> int:
        """The dimension n + m of the state."""
        return self.n + self.m

    # The partitions below are views on the read-only arrays

    @property
    def A_nn(self):
        return self.A[: self.n, : self.n]

    @property
    def A_nm(self):
        return self.A[: self.n, self.n:]

    @property
    def A_mn(self):
        return self.A[self.n:, : self.n]

    @property
    def A_mm(self):
        return self.A[self.n:, self.n:]

    @property
    def B_n(self):
        return self.B[: self.n, :]

    @property
    def B_m(self):
        return self.B[self.n:, :]

    @property
    def Q_nn(self):
        return self.Q[: self.n, : self.n]

    @property
    def Q_nm(self):
        return self.Q[: self.n, self.n:]

    @property
    def Q_mn(self):
        return self.Q[self.n:, : self.n]

    @property
    def Q_mm(self):
        return self.Q[self.n:, self.n:]

    @property
    def targets(self) -> np.ndarray:
        return np.concatenate([self.k_star, self.q_star])

    def labels(self) -> List[str]:
        """Returns the variable names, or k1..kn, q1..qm when the model does not define them."""
        if self.var_names is not None:
            return list(self.var_names)
        return [f"k{idx + 1}" for idx in range(self.n)] + [f"q{idx + 1}" for idx in range(self.m)]

    def closed_loop(self, rule: "PolicyRule") -> np.ndarray:
        """Returns A - B F for the given rule."""
        if rule.n != self.n or rule.m != self.m:
            raise InvalidInputError(
                f"Rule with n={rule.n}, m={rule.m} does not fit a model with n={self.n}, m={self.m}"
            )
        return self.A - self.B @ rule.as_row()[np.newaxis, :]

    def with_changes(self, **changes) -> "ModelSpec":
        """Returns a copy of this model with the given fields replaced."""
        values = {name: getattr(self, name) for name in self.__dataclass_fields__}
        values.update(changes)
        return ModelSpec(**values)

    def perturb_cross_weights(self, delta: float) -> "ModelSpec":
        """Returns a copy with `delta` added to every element of Q_nm and Q_mn."""
        Q = np.array(self.Q)
        Q[: self.n, self.n:] += delta
        Q[self.n:, : self.n] += delta
        return self.with_changes(Q=Q)


@dataclass(frozen=True, eq=False)
class PolicyRule:
    """
    A linear feedback rule ``r_t - r* = -F_1n k_t - F_1m q_t``, applied to date-t deviations.
    """

    F_1n: np.ndarray
    F_1m: np.ndarray
    kind: str = "adhoc"

    def __post_init__(self):
        F_1n = _frozen(np.atleast_1d(np.asarray(self.F_1n, dtype=float)).ravel())
        F_1m = _frozen(np.atleast_1d(np.asarray(self.F_1m, dtype=float)).ravel())
        object.__setattr__(self, "F_1n", F_1n)
        object.__setattr__(self, "F_1m", F_1m)
        if self.kind not in RULE_KINDS:
            raise InvalidInputError(f"Unknown rule kind {self.kind!r}, expected one of {', '.join(RULE_KINDS)}")

    @classmethod
    def from_row(cls, row: Sequence[float], n: int, kind: str = "adhoc") -> "PolicyRule":
        """Splits a row F of length n + m into (F_1n, F_1m)."""
        row = np.asarray(row, dtype=float).ravel()
        if not 0 <= n <= len(row):
            raise InvalidInputError(f"Can not split a row of length {len(row)} at n={n}")
        return cls(row[:n], row[n:], kind)

    @classmethod
    def zero(cls, n: int, m: int, kind: str = "adhoc") -> "PolicyRule":
        return cls(np.zeros(n), np.zeros(m), kind)

    @property
    def n(self) -> int:
        return len(self.F_1n)

    @property
    def m(self) -> int:
        return len(self.F_1m)

    @property
    def restricted(self) -> bool:
        """True when the rule does not respond to the non-predetermined variables."""
        return not np.any(self.F_1m)

    def as_row(self) -> np.ndarray:
        return np.concatenate([self.F_1n, self.F_1m])

    def instrument(self, k, q) -> float:
        """Returns the instrument deviation r - r* for the given deviations k and q."""
        return float(-(self.F_1n @ np.asarray(k, dtype=float)) - (self.F_1m @ np.asarray(q, dtype=float)))

    def __repr__(self):
        return f"PolicyRule(F_1n={self.F_1n.tolist()}, F_1m={self.F_1m.tolist()}, kind={self.kind!r})"


@dataclass(frozen=True)
class BoundednessReport:
    """
    The no-bubble condition as a single growth exponent.

    ``bound_satisfied`` is true when the per-period log-growth of the state norm stays below
    ``log(1/sqrt(beta))`` by at least the stability margin.
    """

    growth_exponent: float
    bound_satisfied: bool
    bound: float
    horizon: int


@dataclass
class ValidationReport:
    violations: List[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.valid

    def raise_if_invalid(self):
        if self.violations:
            raise ModelValidationError(self.violations)


def _shape_violation(name: str, array: Optional[np.ndarray], shape: tuple) -> Optional[str]:
    if array is None:
        return None
    if array.shape != shape:
        expected = "x".join(str(x) for x in shape)
        actual = "x".join(str(x) for x in array.shape)
        return f"{name} has dimension {actual}, expected {expected}"
    if not np.all(np.isfinite(array)):
        return f"{name} contains non-finite values"
    return None


def validate_model(spec: ModelSpec, tol: Tolerances = None) -> ValidationReport:
    """
    Checks the invariants of a model and returns every violation. The model is not changed.
    """
    tol = resolve(tol)
    violations = []

    n, m = spec.n, spec.m
    if n < 1:
        violations.append(f"n must be at least 1, got {n}")
    if m < 1:
        violations.append(f"m must be at least 1, got {m}")

    if not (0.0 < spec.beta <= 1.0):
        violations.append(f"discount factor beta={spec.beta!r} out of range (0, 1]")
    if not (spec.rho > 0.0) or not np.isfinite(spec.rho):
        violations.append(f"instrument weight rho={spec.rho!r} must be positive")

    d = n + m
    kz = None if spec.gamma is None else spec.gamma.shape[1]
    checks = [
        ("A", spec.A, (d, d)),
        ("B", spec.B, (d, 1)),
        ("Q", spec.Q, (d, d)),
        ("k_star", spec.k_star, (n,)),
        ("q_star", spec.q_star, (m,)),
    ]
    if spec.gamma is not None:
        checks.append(("gamma", spec.gamma, (d, kz)))
    if spec.z_path is not None:
        if spec.gamma is None:
            violations.append("z_path is given without gamma")
        else:
            checks.append(("z_path", spec.z_path, (spec.z_path.shape[0], kz)))

    dimension_errors = [msg for msg in (_shape_violation(*check) for check in checks) if msg]
    violations.extend(dimension_errors)

    if not np.isfinite(spec.r_star):
        violations.append("r_star is not finite")

    if spec.var_names is not None and len(spec.var_names) != d:
        violations.append(f"var_names has {len(spec.var_names)} names, expected {d}")

    if not any(msg.startswith("Q ") for msg in dimension_errors) and spec.Q.ndim == 2:
        asymmetry = float(np.max(np.abs(spec.Q - spec.Q.T))) if spec.Q.size else 0.0
        if asymmetry > tol.symmetry:
            violations.append(f"Q is asymmetric (max |Q - Q'| = {asymmetry:.3g}), Q_mn must equal Q_nm'")
        else:
            smallest = float(np.min(np.linalg.eigvalsh((spec.Q + spec.Q.T) / 2))) if spec.Q.size else 0.0
            if smallest < -tol.psd:
                violations.append(f"Q is not positive semi-definite (smallest eigenvalue {smallest:.3g})")

    for msg in violations:
        logger.debug(f"Model violation: {msg}")

    return ValidationReport(violations)


# Deviations --------------------------------------------------------------------------------------


def deviation_modes(spec: ModelSpec) -> Tuple[str, ...]:
    """
    Returns per state variable how deviations are measured: 'relative', i.e. (x - x*)/x*, or
    'absolute', i.e. x - x*, for the components with a zero target.
    """
    modes = tuple("absolute" if target == 0.0 else "relative" for target in spec.targets)
    for name, mode in zip(spec.labels(), modes):
        if mode == "absolute":
            logger.warning(f"Target of {name} is zero, using absolute deviations for this variable.")
    return modes


def to_deviations(spec: ModelSpec, levels) -> np.ndarray:
    """Converts state levels (last axis of length n + m) into deviations from the targets."""
    levels = np.asarray(levels, dtype=float)
    targets = spec.targets
    if levels.shape[-1] != spec.d:
        raise InvalidInputError(f"Expected {spec.d} state levels, got {levels.shape[-1]}")
    zero = targets == 0.0
    scale = np.where(zero, 1.0, targets)
    return (levels - targets) / scale


def to_levels(spec: ModelSpec, deviations) -> np.ndarray:
    """The inverse of `to_deviations()`."""
    deviations = np.asarray(deviations, dtype=float)
    targets = spec.targets
    if deviations.shape[-1] != spec.d:
        raise InvalidInputError(f"Expected {spec.d} state deviations, got {deviations.shape[-1]}")
    zero = targets == 0.0
    scale = np.where(zero, 1.0, targets)
    return targets + deviations * scale


def predetermined_to_deviations(spec: ModelSpec, k_levels) -> np.ndarray:
    """Converts levels of the predetermined variables only."""
    k_levels = np.asarray(k_levels, dtype=float)
    scale = np.where(spec.k_star == 0.0, 1.0, spec.k_star)
    return (k_levels - spec.k_star) / scale


# Model files -------------------------------------------------------------------------------------


def _line_of_field(text: str, name: str) -> Optional[int]:
    needle = json.dumps(name)
    for lineno, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return lineno
    return None


def _as_matrix(doc: dict, name: str, path, text: str, *, allow_vector: bool = False) -> np.ndarray:
    value = doc[name]
    line = _line_of_field(text, name)

    if not isinstance(value, list) or not value:
        raise ModelFileError("expected a non-empty array of rows", path=path, line=line, field=name)

    if allow_vector and all(_is_number(x) for x in value):
        return np.array(value, dtype=float).reshape(-1, 1)

    if not all(isinstance(row, list) for row in value):
        raise ModelFileError("expected an array of rows", path=path, line=line, field=name)
    widths = {len(row) for row in value}
    if len(widths) != 1:
        raise ModelFileError(f"rows have different lengths {sorted(widths)}", path=path, line=line, field=name)
    if not all(_is_number(x) for row in value for x in row):
        raise ModelFileError("matrix entries must be numbers", path=path, line=line, field=name)
    return np.array(value, dtype=float)


def _as_vector(doc: dict, name: str, path, text: str) -> np.ndarray:
    value = doc[name]
    if not isinstance(value, list) or not all(_is_number(x) for x in value):
        raise ModelFileError("expected an array of numbers", path=path, line=_line_of_field(text, name), field=name)
    return np.array(value, dtype=float)


def _as_number(doc: dict, name: str, path, text: str, *, integer: bool = False):
    value = doc[name]
    if not _is_number(value) or (integer and not isinstance(value, int)):
        kind = "an integer" if integer else "a number"
        raise ModelFileError(f"expected {kind}, got {value!r}", path=path, line=_line_of_field(text, name), field=name)
    return value


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def parse_model(text: str, path=None, tol: Tolerances = None) -> ModelSpec:
    """
    Parses the JSON text of a model file, checks dimensions and validates the model.

    Raises:
        ModelFileError: for JSON syntax errors, missing or unknown fields and dimension mismatches.
        ModelValidationError: when the model violates one or more of its invariants.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(exc.msg, path=path, line=exc.lineno, column=exc.colno) from exc

    if not isinstance(doc, dict):
        raise ModelFileError("expected a JSON object at the top level", path=path, line=1)

    for name in REQUIRED_FIELDS:
        if name not in doc:
            raise ModelFileError("missing required field", path=path, field=name)

    for name in doc:
        if name not in REQUIRED_FIELDS + OPTIONAL_FIELDS:
            raise ModelFileError("unknown field", path=path, line=_line_of_field(text, name), field=name)

    n = _as_number(doc, "n", path, text, integer=True)
    m = _as_number(doc, "m", path, text, integer=True)
    d = n + m

    values = dict(
        n=n,
        m=m,
        beta=_as_number(doc, "beta", path, text),
        rho=_as_number(doc, "rho", path, text),
        A=_as_matrix(doc, "A", path, text),
        B=_as_matrix(doc, "B", path, text, allow_vector=True),
        Q=_as_matrix(doc, "Q", path, text),
    )

    if "gamma" in doc:
        values["gamma"] = _as_matrix(doc, "gamma", path, text, allow_vector=True)
    if "z_path" in doc:
        values["z_path"] = _as_matrix(doc, "z_path", path, text)
    if "k_star" in doc:
        values["k_star"] = _as_vector(doc, "k_star", path, text)
    if "q_star" in doc:
        values["q_star"] = _as_vector(doc, "q_star", path, text)
    if "r_star" in doc:
        values["r_star"] = _as_number(doc, "r_star", path, text)
    if "var_names" in doc:
        names = doc["var_names"]
        if not isinstance(names, list) or not all(isinstance(x, str) for x in names):
            raise ModelFileError(
                "expected an array of strings", path=path, line=_line_of_field(text, "var_names"), field="var_names"
            )
        values["var_names"] = names

    expected = {"A": (d, d), "B": (d, 1), "Q": (d, d)}
    if "gamma" in values:
        expected["gamma"] = (d, values["gamma"].shape[1])
    if "k_star" in values:
        expected["k_star"] = (n,)
    if "q_star" in values:
        expected["q_star"] = (m,)
    for name, shape in expected.items():
        if values[name].shape != shape:
            actual = "x".join(str(x) for x in values[name].shape)
            raise ModelFileError(
                f"dimension error: got {actual}, expected {'x'.join(str(x) for x in shape)} for n={n}, m={m}",
                path=path,
                line=_line_of_field(text, name),
                field=name,
            )

    spec = ModelSpec(**values)
    validate_model(spec, tol).raise_if_invalid()
    deviation_modes(spec)

    return spec


def load_model(path: str | Path, tol: Tolerances = None) -> ModelSpec:
    """
    Reads a JSON model file and validates the model.

    Raises:
        ModelFileError: when the file can not be read or parsed.
        ModelValidationError: when the model is invalid, all violations are listed.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ModelFileError(f"can not read file: {exc.strerror}", path=path) from exc

    logger.debug(f"Loading model from {path}")

    return parse_model(text, path=path, tol=tol)


def model_document(spec: ModelSpec) -> dict:
    """Returns the model as a dictionary with the canonical key order."""
    doc = {
        "n": spec.n,
        "m": spec.m,
        "beta": spec.beta,
        "rho": spec.rho,
        "A": spec.A,
        "B": spec.B,
        "Q": spec.Q,
    }
    if spec.gamma is not None:
        doc["gamma"] = spec.gamma
    if spec.z_path is not None:
        doc["z_path"] = spec.z_path
    doc["k_star"] = spec.k_star
    doc["q_star"] = spec.q_star
    doc["r_star"] = spec.r_star
    if spec.var_names is not None:
        doc["var_names"] = list(spec.var_names)
    return doc


def dumps_model(spec: ModelSpec) -> str:
    """Returns the canonical JSON text of the model."""
    return dumps(model_document(spec))


def save_model(spec: ModelSpec, path: str | Path):
    """Writes the canonical JSON text of the model to the given file."""
    Path(path).write_text(dumps_model(spec))


def model_digest(spec: ModelSpec) -> str:
    """Returns the sha256 hex digest of the canonical serialization."""
    return hashlib.sha256(dumps_model(spec).encode()).hexdigest()
