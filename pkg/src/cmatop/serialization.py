"""Strict JSON documents for problem instances and reports.

Infinite values are written as {"inf": true} (or {"inf": true, "sign": -1}); NaN becomes null.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import CMatOpError, InstanceError
from .kkt import AffineMatrixMap, AffineVectorMap, KKTPoint, ProblemInstance, QuadraticFunction
from .pwa import SymmetricPWA, slater_margin
from .symmat import SymMat

SCHEMA = 1
CLASSES = ("affine-matrix", "separable-prox", "custom-quadratic")
SLATER_DELTA = 1e-6


def encode(value):
    """Recursively turn numpy data and extended reals into strict JSON values."""
    if isinstance(value, dict):
        return {str(k): encode(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [encode(v) for v in value]
    if isinstance(value, np.ndarray):
        return encode(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return {"inf": True} if v > 0 else {"inf": True, "sign": -1}
        return v
    return value


def decode_real(value, field: str) -> float:
    if isinstance(value, dict) and value.get("inf") is True:
        return -math.inf if value.get("sign", 1) == -1 else math.inf
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InstanceError(f"{field}: expected a number or {{\"inf\": true}}")
    return float(value)


def dumps(doc) -> str:
    return json.dumps(encode(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


def loads(text: str):
    try:
        return json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise InstanceError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _reject_constant(name):
    raise InstanceError(f"non-standard JSON constant {name}; use {{\"inf\": true}}")


# Field readers ------------------------------------------------------------------------


def _get(doc: dict, key: str, where: str):
    if key not in doc:
        raise InstanceError(f"{where}{key}: missing field")
    return doc[key]


def _vector(value, field: str, length: int | None = None) -> np.ndarray:
    if not isinstance(value, list):
        raise InstanceError(f"{field}: expected a list of numbers")
    out = np.array([decode_real(v, f"{field}[{i}]") for i, v in enumerate(value)], dtype=float)
    if length is not None and out.size != length:
        raise InstanceError(f"{field}: expected length {length}, got {out.size}")
    return out


def _matrix(value, field: str, rows: int, cols: int) -> np.ndarray:
    if not isinstance(value, list) or len(value) != rows:
        raise InstanceError(f"{field}: expected {rows} rows")
    out = np.zeros((rows, cols))
    for i, row in enumerate(value):
        out[i] = _vector(row, f"{field}[{i}]", cols)
    return out


def _symmat(value, field: str, n: int) -> np.ndarray:
    M = SymMat.from_json(value, field_name=field).entries
    if M.shape[0] != n:
        raise InstanceError(f"{field}.n: expected {n}, got {M.shape[0]}")
    return M


def _matrix_map(doc, field: str, m: int, n: int) -> AffineMatrixMap | None:
    if doc is None:
        return None
    if not isinstance(doc, dict):
        raise InstanceError(f"{field}: expected an object or null")
    coeffs = _get(doc, "coeffs", f"{field}.")
    if not isinstance(coeffs, list) or len(coeffs) != m:
        raise InstanceError(f"{field}.coeffs: expected {m} matrices")
    return AffineMatrixMap(_symmat(_get(doc, "A0", f"{field}."), f"{field}.A0", n),
                           tuple(_symmat(c, f"{field}.coeffs[{i}]", n) for i, c in enumerate(coeffs)))


def _symmat_doc(M) -> dict:
    M = np.asarray(M, dtype=float)
    return {"n": int(M.shape[0]), "rows": (0.5 * (M + M.T)).tolist()}  # reading symmetrizes too


def _point_doc(prob: ProblemInstance, pt: KKTPoint) -> dict:
    return {"x": pt.x.tolist(), "y": pt.y.tolist(), "Y": _symmat_doc(pt.Y), "Z": _symmat_doc(pt.Z)}


def _point(doc, field: str, prob: ProblemInstance) -> KKTPoint:
    if not isinstance(doc, dict):
        raise InstanceError(f"{field}: expected an object")
    n = prob.n
    zero = {"n": n, "rows": np.zeros((n, n)).tolist()}
    return KKTPoint(_vector(_get(doc, "x", f"{field}."), f"{field}.x", prob.m),
                    _vector(doc.get("y", [0.0] * prob.k), f"{field}.y", prob.k),
                    _symmat(doc.get("Y", zero), f"{field}.Y", n),
                    _symmat(doc.get("Z", zero), f"{field}.Z", n))


# Instances --------------------------------------------------------------------------


class InstanceDocument:
    """A parsed instance file: the problem, its class tag and optional start and reference points."""

    def __init__(self, problem: ProblemInstance, cls: str, start: KKTPoint | None = None,
                 solution: KKTPoint | None = None):
        self.problem = problem
        self.cls = cls
        self.start = start
        self.solution = solution

    def to_json(self) -> dict:
        p = self.problem
        doc = {
            "schema": SCHEMA,
            "class": self.cls,
            "name": p.name,
            "m": p.m,
            "n": p.n,
            "f": {"Q": p.f.Q.tolist(), "q": p.f.q.tolist(), "const": float(p.f.const)},
            "h": None if p.h is None else {"M": p.h.M.tolist(), "c": p.h.c.tolist()},
            "g1": None if p.g1 is None else {"A0": _symmat_doc(p.g1.A0), "coeffs": [_symmat_doc(A) for A in p.g1.coeffs]},
            "g2": None if p.g2 is None else {"A0": _symmat_doc(p.g2.A0), "coeffs": [_symmat_doc(A) for A in p.g2.coeffs]},
            "phi": p.phi.to_json(),
        }
        if self.start is not None:
            doc["start"] = _point_doc(p, self.start)
        if self.solution is not None:
            doc["solution"] = _point_doc(p, self.solution)
        return doc

    @classmethod
    def from_json(cls, doc) -> "InstanceDocument":
        if not isinstance(doc, dict):
            raise InstanceError("document: expected a JSON object")
        if _get(doc, "schema", "") != SCHEMA:
            raise InstanceError(f"schema: expected {SCHEMA}")
        tag = _get(doc, "class", "")
        if tag not in CLASSES:
            raise InstanceError(f"class: expected one of {', '.join(CLASSES)}")
        m, n = _get(doc, "m", ""), _get(doc, "n", "")
        for key, val in (("m", m), ("n", n)):
            if isinstance(val, bool) or not isinstance(val, int) or val <= 0:
                raise InstanceError(f"{key}: expected a positive integer")
        phi = SymmetricPWA.from_json(_get(doc, "phi", ""))
        if phi.n != n:
            raise InstanceError(f"phi: generators have length {phi.n}, expected n = {n}")
        if phi.has_faces and slater_margin(phi) < SLATER_DELTA:
            raise InstanceError("phi.faces: the domain has no strictly feasible point")
        fdoc = _get(doc, "f", "")
        if not isinstance(fdoc, dict):
            raise InstanceError("f: expected an object")
        f = QuadraticFunction(_matrix(_get(fdoc, "Q", "f."), "f.Q", m, m), _vector(_get(fdoc, "q", "f."), "f.q", m),
                              decode_real(fdoc.get("const", 0.0), "f.const"))
        h = None
        hdoc = doc.get("h")
        if hdoc is not None:
            if not isinstance(hdoc, dict):
                raise InstanceError("h: expected an object or null")
            c = _vector(_get(hdoc, "c", "h."), "h.c")
            h = AffineVectorMap(_matrix(_get(hdoc, "M", "h."), "h.M", c.size, m), c)
        g1 = _matrix_map(doc.get("g1"), "g1", m, n)
        g2 = _matrix_map(doc.get("g2"), "g2", m, n)
        try:
            problem = ProblemInstance(f, phi, g1=g1, h=h, g2=g2, name=str(doc.get("name", "")))
        except CMatOpError as exc:
            raise InstanceError(f"document: {exc}") from None
        start = _point(doc["start"], "start", problem) if doc.get("start") is not None else None
        solution = _point(doc["solution"], "solution", problem) if doc.get("solution") is not None else None
        return cls(problem, tag, start, solution)


def load_instance(path) -> InstanceDocument:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InstanceError(f"{path}: {exc.strerror}") from None
    return InstanceDocument.from_json(loads(text))


def save_instance(inst: InstanceDocument, path) -> None:
    Path(path).write_text(dumps(inst.to_json()))
