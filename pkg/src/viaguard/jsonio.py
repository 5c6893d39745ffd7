"""Deterministic JSON serialization for result and summary documents.

Floats are written with 17 significant digits so that every stored value
round-trips exactly and re-runs with identical inputs produce
byte-identical documents.  Keys keep insertion order.
"""

from __future__ import annotations

import json
import math

import numpy as np

__all__ = ["dumps_stable", "format_float"]


def format_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        raise ValueError(f"non-finite number {x!r} cannot be serialized")
    text = format(x, ".17g")
    # keep a float marker so the value reads back as a float
    if "e" not in text and "." not in text:
        text += ".0"
    return text


def _emit(obj, indent: int, level: int) -> str:
    pad = " " * (indent * level)
    pad_in = " " * (indent * (level + 1))
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad_in}{json.dumps(str(k))}: {_emit(v, indent, level + 1)}'
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(np.asarray(obj).tolist()) if isinstance(obj, np.ndarray) else list(obj)
        if not seq:
            return "[]"
        items = [f"{pad_in}{_emit(v, indent, level + 1)}" for v in seq]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(bool(obj) if obj is not None else None)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    raise TypeError(f"cannot serialize value of type {type(obj).__name__}")


def dumps_stable(obj, indent: int = 2) -> str:
    return _emit(obj, indent, 0) + "\n"
