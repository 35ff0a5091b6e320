"""
Canonical JSON output for model files and reports.

The output is deterministic: keys keep their insertion order, floats are written with 17
significant digits, complex numbers become ``[re, im]`` pairs and non-finite numbers are written
as the strings ``"inf"``, ``"-inf"`` and ``"nan"``. Lists of numbers are written on one line and
a list of lists, i.e. a matrix, is written one row per line.

    >>> print(dumps({"beta": 0.5, "A": [[1.0, 0.0], [0.0, 1.0]]}), end="")
    {
      "beta": 0.5,
      "A": [
        [1, 0],
        [0, 1]
      ]
    }
"""

from __future__ import annotations

import dataclasses
import json
import math
from numbers import Integral
from numbers import Real
from typing import Any

import numpy as np

INDENT = "  "


def format_float(value: float) -> str:
    if math.isnan(value):
        return '"nan"'
    if math.isinf(value):
        return '"inf"' if value > 0 else '"-inf"'
    text = format(value, ".17g")
    if text == "-0":
        return "0"
    return text


def to_jsonable(obj: Any) -> Any:
    """Converts numpy values, complex numbers, tuples and dataclasses into plain JSON structures."""

    if obj is None or isinstance(obj, (bool, str)):
        return obj
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return to_jsonable(obj.item())
    if isinstance(obj, complex):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, Integral):
        return int(obj)
    if isinstance(obj, Real):
        return float(obj)
    if isinstance(obj, dict):
        return {str(key): to_jsonable(value) for key, value in obj.items()}
    if isinstance(obj, (list, tuple, set, frozenset)):
        items = sorted(obj) if isinstance(obj, (set, frozenset)) else obj
        return [to_jsonable(item) for item in items]
    if dataclasses.is_dataclass(obj):
        return {field.name: to_jsonable(getattr(obj, field.name)) for field in dataclasses.fields(obj)}
    raise TypeError(f"Object of type {type(obj).__name__} can not be serialized")


def _is_scalar(value) -> bool:
    return value is None or isinstance(value, (bool, int, float, str))


def _emit(value, level: int) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format_float(value)
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)

    pad = INDENT * (level + 1)
    end = INDENT * level

    if isinstance(value, list):
        if not value:
            return "[]"
        if all(_is_scalar(item) for item in value):
            return "[" + ", ".join(_emit(item, level + 1) for item in value) + "]"
        rows = ",\n".join(pad + _emit(item, level + 1) for item in value)
        return "[\n" + rows + "\n" + end + "]"

    if isinstance(value, dict):
        if not value:
            return "{}"
        rows = ",\n".join(f"{pad}{json.dumps(key)}: {_emit(item, level + 1)}" for key, item in value.items())
        return "{\n" + rows + "\n" + end + "}"

    raise TypeError(f"Object of type {type(value).__name__} can not be serialized")


def dumps(obj: Any) -> str:
    """Returns the canonical JSON text for `obj`, terminated by a newline."""
    return _emit(to_jsonable(obj), 0) + "\n"
