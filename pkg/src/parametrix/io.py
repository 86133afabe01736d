"""JSON documents for plants, FIR transfer matrices and results."""

from __future__ import annotations

import json
import math
from typing import Any

import numpy as np

from .coprime import DoublyCoprimeFactors
from .lti import FIR, StateSpacePlant
from .maps import IopQuadruple, SlpQuadruple, YoulaParam
from .qi import SparsityPattern

PLANT_KEYS = ("A", "B1", "B2", "C1", "C2", "D11", "D12", "D21")


class DocumentError(ValueError):
    """A JSON document does not describe the expected object."""


# ---------------------------------------------------------------------------
# Serialization (17 significant digits, deterministic key order as built)
# ---------------------------------------------------------------------------


def _fmt_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        return json.dumps(None) if math.isnan(x) else ("1e999" if x > 0 else "-1e999")
    if x == 0:
        return "0.0" if math.copysign(1.0, x) > 0 else "-0.0"
    s = f"{x:.17g}"
    if "e" not in s and "." not in s:
        s += ".0"
    return s


def _encode(obj: Any, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist(), indent, level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj: Any, indent: int = 1) -> str:
    return _encode(obj, indent, 0) + "\n"


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def load_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DocumentError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise DocumentError(f"{path}: top level must be an object")
    return doc


def _matrix(v, name: str) -> np.ndarray:
    try:
        m = np.array(v, dtype=float)
    except (TypeError, ValueError) as exc:
        raise DocumentError(f"{name}: not a numeric array") from exc
    if m.ndim == 0:
        m = m.reshape(1, 1)
    if m.ndim != 2:
        raise DocumentError(f"{name}: expected a matrix")
    return m


def fir_to_doc(g: FIR) -> dict:
    d = {"coeffs": g.coeffs.tolist()}
    if g.residual:
        d["residual"] = g.residual
    return d


def fir_from_doc(d, name: str = "fir") -> FIR:
    if isinstance(d, dict):
        if "coeffs" not in d:
            raise DocumentError(f"{name}: missing 'coeffs'")
        c = d["coeffs"]
        res = float(d.get("residual", 0.0))
    else:
        c, res = d, 0.0
    try:
        arr = np.array(c, dtype=float)
    except (TypeError, ValueError) as exc:
        raise DocumentError(f"{name}: coefficients are not numeric") from exc
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[0] == 0:
        raise DocumentError(f"{name}: coeffs must be a non-empty list of matrices")
    return FIR(arr, res)


def plant_to_doc(P: StateSpacePlant) -> dict:
    d = {k: getattr(P, k).tolist() for k in PLANT_KEYS}
    if P.name:
        d["name"] = P.name
    return d


def plant_from_doc(doc: dict) -> StateSpacePlant:
    from .synthesis import example1_plant

    if "D22" in doc and np.any(np.array(doc["D22"], dtype=float) != 0):
        raise DocumentError("D22 must be absent or zero")
    if "A" not in doc and "graph" in doc:
        return example1_plant(graph_adjacency=_matrix(doc["graph"], "graph"))
    missing = [k for k in ("A", "B1", "B2", "C1", "C2") if k not in doc]
    if missing:
        raise DocumentError(f"plant is missing {', '.join(missing)}")
    kw = {k: _matrix(doc[k], k) for k in PLANT_KEYS if k in doc}
    return StateSpacePlant(name=str(doc.get("name", "")), **kw)


def pattern_from_doc(doc) -> SparsityPattern:
    mask = doc.get("mask", doc.get("pattern")) if isinstance(doc, dict) else doc
    if mask is None:
        raise DocumentError("pattern document needs a 'mask'")
    try:
        return SparsityPattern(np.array(mask))
    except ValueError as exc:
        raise DocumentError(str(exc)) from exc


def params_to_doc(params) -> dict:
    if isinstance(params, (YoulaParam, IopQuadruple, SlpQuadruple)):
        return {k: fir_to_doc(g) for k, g in params.items()}
    if isinstance(params, DoublyCoprimeFactors):
        return {k: fir_to_doc(g) for k, g in params.items()}
    if isinstance(params, dict):
        return {k: fir_to_doc(g) if isinstance(g, FIR) else g for k, g in params.items()}
    raise TypeError(f"unsupported parameter object {type(params).__name__}")


def params_from_doc(doc: dict, kind: str):
    def get(k):
        if k not in doc:
            raise DocumentError(f"{kind} parameters need '{k}'")
        return fir_from_doc(doc[k], k)

    if kind == "youla":
        return YoulaParam(get("Q"))
    if kind == "iop":
        return IopQuadruple(*(get(k) for k in "YUWZ"))
    if kind == "slp":
        return SlpQuadruple(*(get(k) for k in "RMNL"))
    if kind == "factors":
        return DoublyCoprimeFactors(**{k: get(k) for k in ("Ul", "Vl", "Nl", "Ml", "Ur", "Vr", "Nr", "Mr")},
                                    kind=str(doc.get("kind", "file")))
    raise DocumentError(f"unknown parameter kind {kind!r}")
