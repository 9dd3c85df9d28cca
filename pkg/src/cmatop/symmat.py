"""Dense symmetric matrices, grouped eigendecompositions and pseudoinverse shifts."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import AsymmetricInput, DimensionMismatch, InstanceError, NonConvergence

SYMMETRY_TOL = 1e-12


def as_symmetric(X, *, name: str = "matrix") -> np.ndarray:
    """Validate symmetry and return a float copy with the two triangles averaged."""
    A = np.array(X, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if A.size and np.max(np.abs(A - A.T)) > SYMMETRY_TOL * scale:
        raise AsymmetricInput(f"{name} is not symmetric (max asymmetry {np.max(np.abs(A - A.T)):.3e})")
    return 0.5 * (A + A.T)


@dataclass(frozen=True)
class SymMat:
    """Immutable symmetric matrix with the JSON form {"n": int, "rows": [[...]]}."""

    entries: np.ndarray

    def __post_init__(self):
        A = as_symmetric(self.entries)
        A.setflags(write=False)
        object.__setattr__(self, "entries", A)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    def to_json(self) -> dict:
        return {"n": self.n, "rows": self.entries.tolist()}

    @classmethod
    def from_json(cls, doc, *, field_name: str = "matrix") -> "SymMat":
        if not isinstance(doc, dict) or "rows" not in doc or "n" not in doc:
            raise InstanceError(f"{field_name}: expected an object with 'n' and 'rows'")
        n, rows = doc["n"], doc["rows"]
        if not isinstance(n, int) or n <= 0:
            raise InstanceError(f"{field_name}.n: expected a positive integer")
        if not isinstance(rows, list) or len(rows) != n or any(
            not isinstance(r, list) or len(r) != n for r in rows
        ):
            raise InstanceError(f"{field_name}.rows: expected {n} rows of length {n}")
        try:
            A = np.array(rows, dtype=float)
        except (TypeError, ValueError) as exc:
            raise InstanceError(f"{field_name}.rows: non-numeric entry ({exc})") from None
        if not np.all(np.isfinite(A)):
            raise InstanceError(f"{field_name}.rows: entries must be finite")
        try:
            return cls(A)
        except AsymmetricInput as exc:
            raise InstanceError(f"{field_name}.rows: {exc}") from None


@dataclass(frozen=True)
class BlockPartition:
    """Groups of equal eigenvalues: blocks[l] is a contiguous index range in sorted order."""

    blocks: tuple[range, ...]
    values: np.ndarray
    rank: np.ndarray = field(repr=False)
    trailing: np.ndarray = field(repr=False)

    @property
    def r(self) -> int:
        return len(self.blocks)

    def block_of(self, i: int) -> int:
        for l, b in enumerate(self.blocks):
            if i in b:
                return l
        raise IndexError(i)

    def labels(self) -> np.ndarray:
        out = np.empty(sum(len(b) for b in self.blocks), dtype=int)
        for l, b in enumerate(self.blocks):
            out[b.start:b.stop] = l
        return out


@dataclass(frozen=True)
class EigenSystem:
    lambdas: np.ndarray
    U: np.ndarray
    group_tol: float

    @property
    def n(self) -> int:
        return len(self.lambdas)

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.lambdas) @ self.U.T


def group_sorted(values: np.ndarray, tol: float) -> BlockPartition:
    """Chain-group a non-increasing sequence: a new block starts where a gap exceeds tol."""
    values = np.asarray(values, dtype=float)
    n = len(values)
    starts = [0] + [i for i in range(1, n) if values[i - 1] - values[i] > tol]
    bounds = starts + [n]
    blocks = tuple(range(bounds[k], bounds[k + 1]) for k in range(len(starts)))
    means = np.array([values[b.start:b.stop].mean() for b in blocks])
    rank = np.empty(n, dtype=int)
    trailing = np.empty(n, dtype=int)
    for b in blocks:
        for pos, i in enumerate(b):
            rank[i] = pos + 1
            trailing[i] = len(b) - pos - 1
    return BlockPartition(blocks, means, rank, trailing)


def default_group_tol(X: np.ndarray) -> float:
    return 1e-8 * max(1.0, float(np.max(np.abs(X)))) if X.size else 1e-8


def canonical_block_basis(Ub: np.ndarray) -> np.ndarray:
    """Basis of span(Ub) that depends only on the span: pivoted QR of the projector."""
    k = Ub.shape[1]
    if k == 1:
        v = Ub[:, 0]
        return (v * (1.0 if v[np.argmax(np.abs(v))] >= 0 else -1.0))[:, None]
    P = Ub @ Ub.T
    Q, _, _ = scipy.linalg.qr(P, pivoting=True)
    B = Q[:, :k]
    signs = np.sign(B[np.argmax(np.abs(B), axis=0), np.arange(k)])
    signs[signs == 0] = 1.0
    return B * signs


def eig_decompose(X, group_tol: float | None = None) -> tuple[EigenSystem, BlockPartition]:
    """Eigenvalues in non-increasing order with deterministic eigenvectors inside each block."""
    A = as_symmetric(X)
    tol = default_group_tol(A) if group_tol is None else float(group_tol)
    if tol < 0:
        raise ValueError("group_tol must be nonnegative")
    try:
        w, V = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise NonConvergence(f"eigensolver failed: {exc}") from None
    lam = w[::-1].copy()
    U = V[:, ::-1].copy()
    part = group_sorted(lam, tol)
    for b in part.blocks:
        U[:, b.start:b.stop] = canonical_block_basis(U[:, b.start:b.stop])
    return EigenSystem(lam, U, tol), part


def pseudo_shift(E: EigenSystem, P: BlockPartition, l: int) -> np.ndarray:
    """(X - v_l I)^dagger for the l-th block (0-based)."""
    if not 0 <= l < P.r:
        raise IndexError(f"block index {l} out of range 0..{P.r - 1}")
    d = np.zeros(E.n)
    v = P.values[l]
    for m, b in enumerate(P.blocks):
        if m != l:
            d[b.start:b.stop] = 1.0 / (P.values[m] - v)
    return (E.U * d) @ E.U.T


def ky_fan_gap(Y, Z) -> float:
    """lambda(Y)^T lambda(Z) - <Y, Z>, nonnegative by Ky Fan's inequality."""
    Y = as_symmetric(Y, name="Y")
    Z = as_symmetric(Z, name="Z")
    if Y.shape != Z.shape:
        raise DimensionMismatch(f"shapes {Y.shape} and {Z.shape} differ")
    ly = np.linalg.eigvalsh(Y)
    lz = np.linalg.eigvalsh(Z)
    return float(ly @ lz - np.sum(Y * Z))


# Orthonormal coordinates on S^n: off-diagonal entries scaled by sqrt(2).

def svec_dim(n: int) -> int:
    return n * (n + 1) // 2


def svec(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    iu = np.triu_indices(X.shape[0])
    scale = np.where(iu[0] == iu[1], 1.0, np.sqrt(2.0))
    return X[iu] * scale


def smat(v, n: int | None = None) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if n is None:
        n = int(round((np.sqrt(8 * len(v) + 1) - 1) / 2))
    if svec_dim(n) != len(v):
        raise DimensionMismatch(f"vector of length {len(v)} is not svec of an {n}x{n} matrix")
    iu = np.triu_indices(n)
    scale = np.where(iu[0] == iu[1], 1.0, 1.0 / np.sqrt(2.0))
    X = np.zeros((n, n))
    X[iu] = v * scale
    return X + np.triu(X, 1).T


def svec_basis(n: int) -> list[np.ndarray]:
    """Orthonormal basis of S^n matching svec coordinates."""
    return [smat(e, n) for e in np.eye(svec_dim(n))]


def congruence_matrix(U: np.ndarray) -> np.ndarray:
    """Matrix of H -> U^T H U in svec coordinates (orthogonal when U is)."""
    n = U.shape[0]
    cols = [svec(U.T @ B @ U) for B in svec_basis(n)]
    return np.column_stack(cols)


def random_symmetric(rng: np.random.Generator, n: int, scale: float = 1.0) -> np.ndarray:
    G = rng.standard_normal((n, n)) * scale
    return 0.5 * (G + G.T)


def random_orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))
