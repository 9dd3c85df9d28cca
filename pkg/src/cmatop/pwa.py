"""Symmetric convex piecewise-affine functions on R^n and their proximal calculus.

A function is stored through sorted generators: pieces (a, c) give
phi1(x) = max over pieces and permutations Q of <Q a, x> - c, and faces (b, d)
describe the domain {x : <Q b, x> <= d for all Q}. The rearrangement inequality
turns every orbit maximum into <a sorted, x sorted>.
"""
from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import (
    CMatOpError,
    DimensionMismatch,
    InfeasiblePoint,
    InstanceError,
    NotASubgradient,
    QPFailure,
)
from .qp import solve_qp

ETA_TOL = 1e-8
REP_TOL = 1e-8
CERT_TOL = 1e-8
PATTERN_CAP = 20000

_LP_OPTIONS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


def feas_tol(x) -> float:
    x = np.asarray(x, dtype=float)
    return 1e-9 * max(1.0, float(np.max(np.abs(x), initial=0.0)))


def _sorted_rows(M, n):
    M = np.asarray(M, dtype=float).reshape(-1, n)
    return -np.sort(-M, axis=1)


def _dedupe(M, v):
    seen, keep = set(), []
    for i, (row, val) in enumerate(zip(M, v)):
        key = (tuple(row.tolist()), float(val))
        if key not in seen:
            seen.add(key)
            keep.append(i)
    return M[keep], v[keep]


@dataclass(frozen=True)
class SymmetricPWA:
    """phi = phi1 + phi2 with pieces (a, c) and domain faces (b, d), generators sorted."""

    A: np.ndarray
    c: np.ndarray
    B: np.ndarray = None
    d: np.ndarray = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[1]
        c = np.asarray(self.c, dtype=float).reshape(-1)
        if A.shape[0] == 0:
            raise InstanceError("at least one piece is required")
        if c.shape[0] != A.shape[0]:
            raise DimensionMismatch("pieces and offsets differ in count")
        B = np.zeros((0, n)) if self.B is None else np.asarray(self.B, dtype=float).reshape(-1, n)
        d = np.zeros(0) if self.d is None else np.asarray(self.d, dtype=float).reshape(-1)
        if d.shape[0] != B.shape[0]:
            raise DimensionMismatch("faces and offsets differ in count")
        for name, arr in (("pieces", A), ("offsets", c), ("faces", B), ("face offsets", d)):
            if not np.all(np.isfinite(arr)):
                raise InstanceError(f"{name} must be finite")
        A, c = _dedupe(_sorted_rows(A, n), c)
        B, d = _dedupe(_sorted_rows(B, n), d)
        for arr in (A, c, B, d):
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "d", d)

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def p(self) -> int:
        return self.A.shape[0]

    @property
    def q(self) -> int:
        return self.B.shape[0]

    @property
    def has_faces(self) -> bool:
        return self.q > 0

    def pieces_only(self) -> "SymmetricPWA":
        return SymmetricPWA(self.A, self.c)

    def faces_only(self) -> "SymmetricPWA":
        """Indicator of the domain, written with a single zero piece."""
        return SymmetricPWA(np.zeros((1, self.n)), np.zeros(1), self.B, self.d)

    @classmethod
    def max_entry(cls, n: int) -> "SymmetricPWA":
        a = np.zeros(n)
        a[0] = 1.0
        return cls(a[None, :], [0.0])

    @classmethod
    def nonpositive_max(cls, n: int) -> "SymmetricPWA":
        """Indicator of {x : max x <= 0}; its spectral version is the NSD cone."""
        b = np.zeros(n)
        b[0] = 1.0
        return cls(np.zeros((1, n)), [0.0], b[None, :], [0.0])

    def to_json(self) -> dict:
        return {
            "pieces": [{"a": a.tolist(), "c": float(c)} for a, c in zip(self.A, self.c)],
            "faces": [{"b": b.tolist(), "d": float(d)} for b, d in zip(self.B, self.d)],
        }

    @classmethod
    def from_json(cls, doc, *, field_name: str = "phi") -> "SymmetricPWA":
        if not isinstance(doc, dict) or not isinstance(doc.get("pieces"), list):
            raise InstanceError(f"{field_name}.pieces: expected a list")
        faces = doc.get("faces", [])
        if not isinstance(faces, list):
            raise InstanceError(f"{field_name}.faces: expected a list")

        def rows(items, vec, off, where):
            out_v, out_o = [], []
            for k, item in enumerate(items):
                if not isinstance(item, dict) or vec not in item or off not in item:
                    raise InstanceError(f"{field_name}.{where}[{k}]: expected keys '{vec}' and '{off}'")
                try:
                    out_v.append([float(t) for t in item[vec]])
                    out_o.append(float(item[off]))
                except (TypeError, ValueError):
                    raise InstanceError(f"{field_name}.{where}[{k}]: non-numeric entry") from None
            return out_v, out_o

        a, c = rows(doc["pieces"], "a", "c", "pieces")
        b, d = rows(faces, "b", "d", "faces")
        if not a:
            raise InstanceError(f"{field_name}.pieces: at least one piece is required")
        n = len(a[0])
        if any(len(r) != n for r in a + b):
            raise InstanceError(f"{field_name}: generators must all have length {n}")
        return cls(np.array(a), np.array(c), np.array(b).reshape(-1, n), np.array(d))


def _check_dim(phi: SymmetricPWA, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != phi.n:
        raise DimensionMismatch(f"vector of length {x.shape[0]} for a function on R^{phi.n}")
    return x


def piece_values(phi: SymmetricPWA, xs: np.ndarray) -> np.ndarray:
    """<a_i sorted, xs> - c_i for a non-increasing xs."""
    return phi.A @ xs - phi.c


def face_values(phi: SymmetricPWA, xs: np.ndarray) -> np.ndarray:
    return phi.B @ xs - phi.d


def eval_phi1(phi: SymmetricPWA, x) -> float:
    xs = -np.sort(-_check_dim(phi, x))
    return float(np.max(piece_values(phi, xs)))


def in_domain(phi: SymmetricPWA, x) -> bool:
    x = _check_dim(phi, x)
    if not phi.has_faces:
        return True
    return bool(np.max(face_values(phi, -np.sort(-x))) <= feas_tol(x))


def eval_phi(phi: SymmetricPWA, x) -> float:
    """phi(x), or +inf outside the domain."""
    if not in_domain(phi, x):
        return math.inf
    return eval_phi1(phi, x)


# Sorted frames -------------------------------------------------------------


def _runs(keys) -> tuple[range, ...]:
    out, start = [], 0
    for i in range(1, len(keys) + 1):
        if i == len(keys) or keys[i] != keys[start]:
            out.append(range(start, i))
            start = i
    return tuple(out)


def _tie_labels(values: np.ndarray, tol: float) -> list[int]:
    """Chain grouping of a non-increasing sequence into labels."""
    labels, cur = [], 0
    for i in range(len(values)):
        if i and values[i - 1] - values[i] > tol:
            cur += 1
        labels.append(cur)
    return labels


@dataclass(frozen=True)
class Frame:
    """Sorted coordinates for a point x and a companion vector y.

    order sorts x non-increasingly (ties broken by y non-increasing); coarse
    blocks are ties of x, fine blocks are ties of (x, y).
    """

    order: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    coarse: tuple[range, ...]
    fine: tuple[range, ...]

    @property
    def n(self) -> int:
        return len(self.xs)

    def to_sorted(self, v) -> np.ndarray:
        return np.asarray(v, dtype=float)[self.order]

    def from_sorted(self, vs) -> np.ndarray:
        out = np.empty_like(np.asarray(vs, dtype=float))
        out[self.order] = vs
        return out

    def permutation_matrix(self) -> np.ndarray:
        """Pi with Pi @ v = v[order]."""
        n = self.n
        P = np.zeros((n, n))
        P[np.arange(n), self.order] = 1.0
        return P


def make_frame(x, y=None, *, tol: float | None = None) -> Frame:
    x = np.asarray(x, dtype=float)
    y = np.zeros_like(x) if y is None else np.asarray(y, dtype=float)
    tol = feas_tol(np.concatenate([x, y])) if tol is None else tol
    order = np.lexsort((-y, -x))
    xs, ys = x[order], y[order]
    xl = _tie_labels(xs, tol)
    coarse = _runs(xl)
    keys = []
    for b in coarse:
        yl = _tie_labels(ys[b.start:b.stop], tol)
        keys.extend((xl[b.start], t) for t in yl)
    return Frame(order, xs, ys, coarse, _runs(keys))


def frame_from_blocks(xs, ys, coarse, fine) -> Frame:
    """Frame for data that is already sorted with externally chosen blocks."""
    n = len(xs)
    return Frame(np.arange(n), np.asarray(xs, float), np.asarray(ys, float), tuple(coarse), tuple(fine))


def active_pieces(phi: SymmetricPWA, xs: np.ndarray, tol: float | None = None) -> np.ndarray:
    vals = piece_values(phi, xs)
    tol = feas_tol(xs) if tol is None else tol
    return np.flatnonzero(vals >= vals.max() - tol)


def active_faces(phi: SymmetricPWA, xs: np.ndarray, tol: float | None = None) -> np.ndarray:
    if not phi.has_faces:
        return np.zeros(0, dtype=int)
    tol = feas_tol(xs) if tol is None else tol
    vals = face_values(phi, xs)
    if vals.max() > tol:
        raise InfeasiblePoint(f"point violates a domain face by {vals.max():.3e}")
    return np.flatnonzero(np.abs(vals) <= tol)


def _distinct_perms(vals) -> list[tuple]:
    return sorted(set(itertools.permutations(vals)), reverse=True)


def orbit_vectors(g: np.ndarray, frame: Frame, blocks=None) -> list[np.ndarray]:
    """Distinct rearrangements of a sorted generator within blocks, in original coordinates."""
    blocks = frame.coarse if blocks is None else blocks
    per_block = [_distinct_perms(tuple(g[b.start:b.stop])) for b in blocks]
    total = math.prod(len(p) for p in per_block)
    if total > PATTERN_CAP:
        raise CMatOpError(f"orbit of size {total} exceeds the enumeration cap {PATTERN_CAP}")
    out = []
    for combo in itertools.product(*per_block):
        vs = np.concatenate([np.array(c, dtype=float) for c in combo]) if combo else np.zeros(0)
        out.append(frame.from_sorted(vs))
    return out


@dataclass(frozen=True)
class ActiveSets:
    frame: Frame
    iota1: tuple[int, ...]
    iota2: tuple[int, ...]
    eta1: tuple = ()
    eta2: tuple = ()
    xi1: tuple[int, ...] = ()

    def piece_vectors(self, phi: SymmetricPWA) -> list[np.ndarray]:
        return _unique([v for i in self.iota1 for v in orbit_vectors(phi.A[i], self.frame)])

    def face_vectors(self, phi: SymmetricPWA) -> list[np.ndarray]:
        return _unique([v for j in self.iota2 for v in orbit_vectors(phi.B[j], self.frame)])


def _unique(vectors):
    seen, out = set(), []
    for v in vectors:
        key = tuple(np.round(v, 15).tolist())
        if key not in seen:
            seen.add(key)
            out.append(v)
    return out


def active_sets(phi: SymmetricPWA, x) -> ActiveSets:
    """Active pieces and faces at x (their orbits are the within-tie rearrangements)."""
    x = _check_dim(phi, x)
    frame = make_frame(x)
    faces = active_faces(phi, frame.xs)
    return ActiveSets(frame, tuple(active_pieces(phi, frame.xs).tolist()), tuple(faces.tolist()))


def _block_sorted_dot(g: np.ndarray, hs: np.ndarray, blocks) -> float:
    total = 0.0
    for b in blocks:
        total += float(g[b.start:b.stop] @ -np.sort(-hs[b.start:b.stop]))
    return total


def dir_deriv_phi(phi: SymmetricPWA, x, h) -> tuple[float, float]:
    """(phi1'(x; h), psi'(x; h)); psi' is -inf when no face is active."""
    h = _check_dim(phi, h)
    act = active_sets(phi, x)
    hs = act.frame.to_sorted(h)
    d1 = max(_block_sorted_dot(phi.A[i], hs, act.frame.coarse) for i in act.iota1)
    d2 = max((_block_sorted_dot(phi.B[j], hs, act.frame.coarse) for j in act.iota2), default=-math.inf)
    return d1, d2


def subgradient_polytope(phi: SymmetricPWA, x) -> tuple[np.ndarray, np.ndarray]:
    """Vertices generating the subdifferential of phi1 and rays generating the normal cone."""
    act = active_sets(phi, x)
    verts = act.piece_vectors(phi)
    rays = act.face_vectors(phi)
    return np.array(verts).reshape(-1, phi.n), np.array(rays).reshape(-1, phi.n)


# Membership certificate ------------------------------------------------------


def majorization_gap(phi, xs, ys, blocks, pieces, faces, *, use_pieces=True, use_faces=True) -> float:
    """Smallest violation of ys in sum u_i P(a_i) + cone{P(b_j)} blockwise, sum u = 1.

    The Minkowski sum of permutohedra of sorted vectors is the permutohedron of their
    sum, so membership reduces to prefix-sum (majorization) inequalities per block.
    """
    pieces = list(pieces) if use_pieces else []
    faces = list(faces) if use_faces else []
    npv, nfv = len(pieces), len(faces)
    nv = npv + nfv + 1
    rows, rhs, eq_rows, eq_rhs = [], [], [], []
    for b in blocks:
        yb = -np.sort(-ys[b.start:b.stop])
        ycum = np.cumsum(yb)
        gens = [phi.A[i][b.start:b.stop] for i in pieces] + [phi.B[j][b.start:b.stop] for j in faces]
        cums = np.array([np.cumsum(gb) for gb in gens]).reshape(len(gens), len(b))
        for k in range(len(b)):
            coeff = np.zeros(nv)
            coeff[: npv + nfv] = -cums[:, k]
            coeff[-1] = -1.0
            rows.append(coeff)
            rhs.append(-ycum[k])
            if k == len(b) - 1:
                coeff2 = -coeff
                coeff2[-1] = -1.0
                rows.append(coeff2)
                rhs.append(ycum[k])
    if npv:
        e = np.zeros(nv)
        e[:npv] = 1.0
        eq_rows.append(e)
        eq_rhs.append(1.0)
    cost = np.zeros(nv)
    cost[-1] = 1.0
    res = linprog(
        cost,
        A_ub=np.array(rows),
        b_ub=np.array(rhs),
        A_eq=np.array(eq_rows) if eq_rows else None,
        b_eq=np.array(eq_rhs) if eq_rhs else None,
        bounds=[(0, None)] * nv,
        method="highs",
        options=_LP_OPTIONS,
    )
    if res.status != 0:
        raise QPFailure(f"membership LP failed: {res.message}")
    return float(res.x[-1])


def subgradient_gap(phi: SymmetricPWA, x, y, *, part: str = "both") -> float:
    """Certificate gap for y in the subdifferential of phi (or of phi1 / phi2 alone) at x."""
    x = _check_dim(phi, x)
    y = _check_dim(phi, y)
    frame = make_frame(x, y)
    faces = active_faces(phi, frame.xs)
    pieces = active_pieces(phi, frame.xs)
    return majorization_gap(
        phi, frame.xs, frame.ys, frame.coarse, pieces, faces,
        use_pieces=part in ("both", "pieces"), use_faces=part in ("both", "faces"),
    )


# Patterns and positive-weight sets ----------------------------------------------


@dataclass(frozen=True)
class Pattern:
    """A generator together with the multiset of its entries placed in each fine block."""

    kind: str
    index: int
    parts: tuple[tuple[float, ...], ...]
    centroid: np.ndarray = field(repr=False, compare=False)
    nonconstant: tuple[bool, ...] = field(repr=False, compare=False)

    def vectors(self, frame: Frame) -> list[np.ndarray]:
        per_block = [_distinct_perms(p) for p in self.parts]
        return [
            frame.from_sorted(np.concatenate([np.array(c, dtype=float) for c in combo]))
            for combo in itertools.product(*per_block)
        ]


def _sub_multisets(values: tuple, size: int):
    return sorted(set(itertools.combinations(values, size)), reverse=True)


def _distributions(values: tuple, sizes: list[int]):
    if not sizes:
        yield ()
        return
    for combo in _sub_multisets(values, sizes[0]):
        rest = Counter(values)
        rest.subtract(combo)
        remaining = tuple(sorted(rest.elements(), reverse=True))
        for tail in _distributions(remaining, sizes[1:]):
            yield (combo,) + tail


def enumerate_patterns(g: np.ndarray, kind: str, index: int, frame: Frame) -> list[Pattern]:
    per_coarse = []
    for cb in frame.coarse:
        subs = [fb for fb in frame.fine if cb.start <= fb.start < cb.stop]
        per_coarse.append(list(_distributions(tuple(g[cb.start:cb.stop].tolist()), [len(s) for s in subs])))
    total = math.prod(len(p) for p in per_coarse)
    if total > PATTERN_CAP:
        raise CMatOpError(f"{total} patterns exceed the enumeration cap {PATTERN_CAP}")
    out = []
    for combo in itertools.product(*per_coarse):
        parts = tuple(part for block in combo for part in block)
        cent = np.empty(frame.n)
        for fb, part in zip(frame.fine, parts):
            cent[fb.start:fb.stop] = np.mean(part)
        nonconst = tuple(max(part) != min(part) for part in parts)
        out.append(Pattern(kind, index, parts, cent, nonconst))
    return out


@dataclass(frozen=True)
class PatternAnalysis:
    frame: Frame
    patterns: tuple[Pattern, ...]
    members: tuple[bool, ...]
    residual: float
    weights: tuple[float, ...] = ()

    def weights_total(self, kind: str) -> float:
        """Total weight of one kind of pattern in the phase-one representation."""
        return float(sum(w for p, w in zip(self.patterns, self.weights) if p.kind == kind))

    def member_patterns(self) -> list[Pattern]:
        return [p for p, m in zip(self.patterns, self.members) if m]

    def all_members(self) -> bool:
        return all(self.members)

    def positive_fine_blocks(self) -> list[int]:
        """Fine blocks on which some member pattern is non-constant."""
        out = []
        for k in range(len(self.frame.fine)):
            if any(p.nonconstant[k] for p in self.member_patterns()):
                out.append(k)
        return out


def analyze_patterns(phi, frame: Frame, target, pieces, faces, *, use_pieces=True, use_faces=True,
                     rep_tol: float = REP_TOL, eta_tol: float = ETA_TOL) -> PatternAnalysis:
    """Decide which patterns carry positive weight in some representation of target.

    target (sorted frame) is written as sum_p U_p centroid_p + sum_q V_q centroid_q with
    sum U = 1 when pieces are used. Averaging a representation over the permutations that
    fix the frame shows that pattern centroids represent exactly the same set.
    """
    target = np.asarray(target, dtype=float)
    pats = []
    if use_pieces:
        for i in pieces:
            pats.extend(enumerate_patterns(phi.A[i], "piece", int(i), frame))
    if use_faces:
        for j in faces:
            pats.extend(enumerate_patterns(phi.B[j], "face", int(j), frame))
    if len(pats) > PATTERN_CAP:
        raise CMatOpError(f"{len(pats)} patterns exceed the enumeration cap {PATTERN_CAP}")
    n, k = frame.n, len(pats)
    npieces = sum(p.kind == "piece" for p in pats)
    nv = k + 2 * n
    C = np.array([p.centroid for p in pats]).reshape(k, n).T
    A_eq = np.hstack([C, np.eye(n), -np.eye(n)])
    b_eq = target.copy()
    if npieces:
        row = np.zeros(nv)
        row[:npieces] = 1.0
        A_eq = np.vstack([A_eq, row])
        b_eq = np.append(b_eq, 1.0)
    slack_cost = np.zeros(nv)
    slack_cost[k:] = 1.0
    bounds = [(0, None)] * nv
    res = linprog(slack_cost, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs", options=_LP_OPTIONS)
    if res.status != 0:
        raise NotASubgradient(f"representation LP failed: {res.message}")
    scale = max(1.0, float(np.max(np.abs(target), initial=0.0)))
    resid = float(res.fun)
    if resid > rep_tol * scale:
        raise NotASubgradient(f"no representation within tolerance (residual {resid:.3e})")
    members = np.zeros(k, dtype=bool)
    members[: k] = res.x[:k] > eta_tol
    cap_row = slack_cost[None, :]
    cap = np.array([resid + 1e-11 * scale])
    for idx in range(k):
        if members[idx]:
            continue
        cost = np.zeros(nv)
        cost[idx] = -1.0
        r = linprog(cost, A_ub=cap_row, b_ub=cap, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                    method="highs", options=_LP_OPTIONS)
        if r.status == 3:
            members[idx] = True
        elif r.status == 0:
            members |= np.r_[r.x[:k] > eta_tol]
        else:
            raise QPFailure(f"positivity LP failed: {r.message}")
    return PatternAnalysis(frame, tuple(pats), tuple(bool(m) for m in members), resid,
                           tuple(float(w) for w in res.x[:k]))


def eta_sets(phi: SymmetricPWA, x, ybar, zbar=None) -> ActiveSets:
    """Active sets together with the positive-weight patterns for ybar (pieces) and zbar (faces)."""
    x = _check_dim(phi, x)
    ybar = _check_dim(phi, ybar)
    zbar = np.zeros(phi.n) if zbar is None else _check_dim(phi, zbar)
    frame1 = make_frame(x, ybar)
    pieces = active_pieces(phi, frame1.xs)
    faces = active_faces(phi, frame1.xs)
    an1 = analyze_patterns(phi, frame1, frame1.ys, pieces, faces, use_faces=False)
    eta2 = ()
    if phi.has_faces:
        frame2 = make_frame(x, zbar)
        an2 = analyze_patterns(phi, frame2, frame2.ys, pieces, faces, use_pieces=False)
        eta2 = tuple(an2.member_patterns())
    return ActiveSets(frame1, tuple(pieces.tolist()), tuple(faces.tolist()), tuple(an1.member_patterns()), eta2)


# Proximal map -------------------------------------------------------------------


@dataclass(frozen=True)
class ProxResult:
    w: np.ndarray
    frame: Frame
    ws: np.ndarray
    pieces: np.ndarray
    faces: np.ndarray
    certificate_gap: float


def slater_margin(phi: SymmetricPWA) -> float:
    """Largest s <= 1 with <b sorted, w> + s <= d for some non-increasing w."""
    if not phi.has_faces:
        return 1.0
    n = phi.n
    A_ub = [np.append(b, 1.0) for b in phi.B]
    b_ub = list(phi.d)
    for k in range(n - 1):
        row = np.zeros(n + 1)
        row[k], row[k + 1] = -1.0, 1.0
        A_ub.append(row)
        b_ub.append(0.0)
    cost = np.zeros(n + 1)
    cost[-1] = -1.0
    res = linprog(cost, A_ub=np.array(A_ub), b_ub=np.array(b_ub),
                  bounds=[(None, None)] * n + [(None, 1.0)], method="highs", options=_LP_OPTIONS)
    if res.status != 0:
        raise QPFailure(f"domain LP failed: {res.message}")
    return float(-res.fun)


def _interior_sorted_point(phi: SymmetricPWA) -> np.ndarray:
    n = phi.n
    A_ub = [np.append(b, 1.0) for b in phi.B]
    b_ub = list(phi.d)
    for k in range(n - 1):
        row = np.zeros(n + 1)
        row[k], row[k + 1] = -1.0, 1.0
        A_ub.append(row)
        b_ub.append(0.0)
    cost = np.zeros(n + 1)
    cost[-1] = -1.0
    res = linprog(cost, A_ub=np.array(A_ub), b_ub=np.array(b_ub),
                  bounds=[(-1e6, 1e6)] * n + [(None, 1.0)], method="highs", options=_LP_OPTIONS)
    if res.status != 0 or -res.fun <= 0:
        raise InfeasiblePoint("the domain has no Slater point")
    return res.x[:n]


def _epigraph_qp(phi: SymmetricPWA, zs: np.ndarray):
    n, p = phi.n, phi.p
    G = np.zeros((n + 1, n + 1))
    G[:n, :n] = np.eye(n)
    g = np.append(-zs, 1.0)
    rows = [np.append(a, -1.0) for a in phi.A]
    rhs = list(phi.c)
    rows += [np.append(b, 0.0) for b in phi.B]
    rhs += list(phi.d)
    for k in range(n - 1):
        row = np.zeros(n + 1)
        row[k], row[k + 1] = -1.0, 1.0
        rows.append(row)
        rhs.append(0.0)
    A = np.array(rows).reshape(-1, n + 1)
    b = np.array(rhs)
    w0 = _interior_sorted_point(phi) if phi.has_faces else zs.copy()
    vals = piece_values(phi, w0)
    top = int(np.argmax(vals))
    v0 = np.append(w0, vals[top])
    res = solve_qp(G, g, A, b, v0, working=(top,))
    return res.v[:n]


def prox_details(phi: SymmetricPWA, z) -> ProxResult:
    z = _check_dim(phi, z)
    order = np.argsort(-z, kind="stable")
    zs = z[order]
    ws = _epigraph_qp(phi, zs)
    ys = zs - ws
    tol = feas_tol(np.concatenate([zs, ws]))
    wlabels = _tie_labels(ws, 10 * tol)
    coarse = _runs(wlabels)
    zlabels = _tie_labels(zs, tol)
    fine = _runs(list(zip(wlabels, zlabels)))
    wframe = Frame(order, ws, ys, coarse, fine)
    pieces = active_pieces(phi, ws, 10 * tol)
    faces = active_faces(phi, ws, 10 * tol)
    gap = majorization_gap(phi, ws, ys, coarse, pieces, faces)
    scale = max(1.0, float(np.max(np.abs(z))))
    if gap > CERT_TOL * scale:
        raise QPFailure(f"prox optimality certificate failed (gap {gap:.3e})")
    return ProxResult(_unsort(order, ws), wframe, ws, pieces, faces, gap)


def _unsort(order, vs):
    out = np.empty_like(vs)
    out[order] = vs
    return out


def prox_pwa(phi: SymmetricPWA, z) -> np.ndarray:
    """argmin_w phi(w) + 1/2 ||w - z||^2."""
    return prox_details(phi, z).w


def prox_face(phi: SymmetricPWA, z) -> np.ndarray:
    """Euclidean projection onto the domain of phi."""
    return prox_pwa(phi.faces_only(), z)


# Directional derivative of the prox ----------------------------------------------


def cone_constraints(phi: SymmetricPWA, frame: Frame, pieces, faces) -> np.ndarray:
    """Rows R with the critical cone (within the sorted chamber) equal to {d : R d <= 0}."""
    rows = [phi.A[i] - frame.ys for i in pieces]
    rows += [phi.B[j] for j in faces]
    rows = [r for r in rows if np.max(np.abs(r)) > 1e-12 * max(1.0, float(np.max(np.abs(frame.ys), initial=0.0)))]
    for b in frame.coarse:
        for k in range(b.start, b.stop - 1):
            row = np.zeros(frame.n)
            row[k], row[k + 1] = -1.0, 1.0
            rows.append(row)
    return np.array(rows).reshape(-1, frame.n)


def sort_within(frame: Frame, hs: np.ndarray) -> np.ndarray:
    """Permutation (in sorted coordinates) that sorts hs non-increasingly inside fine blocks."""
    perm = np.arange(frame.n)
    for b in frame.fine:
        perm[b.start:b.stop] = b.start + np.argsort(-hs[b.start:b.stop], kind="stable")
    return perm


def project_critical_cone(phi: SymmetricPWA, frame: Frame, pieces, faces, hs: np.ndarray):
    """Projection of hs onto the critical cone, all in sorted coordinates.

    Returns the projection and the rows of constraints that are active with positive multiplier.
    """
    perm = sort_within(frame, hs)
    h_local = hs[perm]
    R = cone_constraints(phi, frame, pieces, faces)
    res = solve_qp(np.eye(frame.n), -h_local, R, np.zeros(R.shape[0]), np.zeros(frame.n))
    d = np.empty(frame.n)
    d[perm] = res.v
    return d, R, res, perm


def prox_dir_deriv(phi: SymmetricPWA, z, h) -> np.ndarray:
    """Pr'(z; h): projection of h onto the critical cone at the prox point."""
    h = _check_dim(phi, h)
    pr = prox_details(phi, z)
    d, *_ = project_critical_cone(phi, pr.frame, pr.pieces, pr.faces, pr.frame.to_sorted(h))
    return pr.frame.from_sorted(d)


def span_projector(analysis: PatternAnalysis, ys: np.ndarray) -> np.ndarray:
    """Orthogonal projector (sorted coordinates) onto the linear span of the critical cone.

    The span is cut out by: constancy on fine blocks where a member pattern is non-constant,
    <centroid - y, d> = 0 for member piece patterns and <centroid, d> = 0 for member faces.
    """
    frame = analysis.frame
    n = frame.n
    rows = []
    for k in analysis.positive_fine_blocks():
        fb = frame.fine[k]
        for i in range(fb.start, fb.stop - 1):
            r = np.zeros(n)
            r[i], r[i + 1] = 1.0, -1.0
            rows.append(r)
    for p in analysis.member_patterns():
        rows.append(p.centroid - ys if p.kind == "piece" else p.centroid)
    return nullspace_projector(np.array(rows).reshape(-1, n), n)


def relative_interior_margin(R: np.ndarray, v: np.ndarray) -> float:
    """Largest t <= 1 with v = R^T lam and lam >= t: positive iff v is in ri cone(rows of R)."""
    k = R.shape[0]
    if k == 0:
        return 1.0 if np.max(np.abs(v), initial=0.0) <= 1e-12 else -1.0
    A_eq = np.hstack([R.T, np.zeros((R.shape[1], 1))])
    A_ub = np.hstack([-np.eye(k), np.ones((k, 1))])
    cost = np.zeros(k + 1)
    cost[-1] = -1.0
    res = linprog(cost, A_ub=A_ub, b_ub=np.zeros(k), A_eq=A_eq, b_eq=v,
                  bounds=[(0, None)] * k + [(None, 1.0)], method="highs", options=_LP_OPTIONS)
    return float(-res.fun) if res.status == 0 else -1.0


def nullspace_projector(R: np.ndarray, n: int, rtol: float = 1e-10) -> np.ndarray:
    if R.size == 0:
        return np.eye(n)
    _, s, Vt = np.linalg.svd(R)
    rank = int(np.sum(s > rtol * max(1.0, s[0])))
    N = Vt[rank:].T
    return N @ N.T


def prox_patterns(phi: SymmetricPWA, pr: ProxResult) -> PatternAnalysis:
    return analyze_patterns(phi, pr.frame, pr.frame.ys, pr.pieces, pr.faces)


def prox_fdiff_test(phi: SymmetricPWA, z) -> tuple[bool, np.ndarray | None]:
    """Whether the prox is F-differentiable at z, and then its derivative (a projector)."""
    pr = prox_details(phi, z)
    an = prox_patterns(phi, pr)
    if not an.all_members():
        return False, None
    P = span_projector(an, pr.frame.ys)
    Pi = pr.frame.permutation_matrix()
    return True, Pi.T @ P @ Pi
