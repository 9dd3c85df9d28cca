"""First and second directional derivatives of the ordered eigenvalue map."""
from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch
from .symmat import BlockPartition, EigenSystem, as_symmetric, canonical_block_basis, group_sorted, pseudo_shift


def _check_dim(E: EigenSystem, M: np.ndarray, name: str) -> None:
    if M.shape != (E.n, E.n):
        raise DimensionMismatch(f"{name} has shape {M.shape}, expected {(E.n, E.n)}")


def inner_tol(E: EigenSystem, inner: np.ndarray) -> float:
    scale = float(np.max(np.abs(inner))) if inner.size else 0.0
    return E.group_tol * max(1.0, scale)


def inner_eigensystem(E: EigenSystem, inner: np.ndarray):
    """Sorted eigen-system of an inner block matrix with nested grouping."""
    w, R = np.linalg.eigh(inner)
    w, R = w[::-1].copy(), R[:, ::-1].copy()
    part = group_sorted(w, inner_tol(E, inner))
    for b in part.blocks:
        R[:, b.start:b.stop] = canonical_block_basis(R[:, b.start:b.stop])
    return w, R, part


def eig_dir_deriv(E: EigenSystem, P: BlockPartition, H) -> np.ndarray:
    """lambda'(X; H): on each block, the sorted eigenvalues of U_l^T H U_l."""
    H = as_symmetric(H, name="H")
    _check_dim(E, H, "H")
    out = np.empty(E.n)
    for b in P.blocks:
        Ub = E.U[:, b.start:b.stop]
        out[b.start:b.stop] = np.linalg.eigvalsh(Ub.T @ H @ Ub)[::-1]
    return out


def eig_second_dir_deriv(E: EigenSystem, P: BlockPartition, H, W) -> np.ndarray:
    """Parabolic second-order derivative of lambda along X + tH + t^2/2 W."""
    H = as_symmetric(H, name="H")
    W = as_symmetric(W, name="W")
    _check_dim(E, H, "H")
    _check_dim(E, W, "W")
    out = np.empty(E.n)
    for l, b in enumerate(P.blocks):
        Ub = E.U[:, b.start:b.stop]
        _, R, inner = inner_eigensystem(E, Ub.T @ H @ Ub)
        T = Ub.T @ (W - 2.0 * H @ pseudo_shift(E, P, l) @ H) @ Ub
        for ib in inner.blocks:
            Rj = R[:, ib.start:ib.stop]
            seg = np.linalg.eigvalsh(Rj.T @ T @ Rj)[::-1]
            out[b.start + ib.start:b.start + ib.stop] = seg
    return out
