"""Dense primal active-set method for convex quadratic programs with inequality constraints."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import QPFailure


@dataclass(frozen=True)
class QPResult:
    v: np.ndarray
    multipliers: np.ndarray
    working: tuple[int, ...]
    iterations: int


def _equality_solve(G, g, A, b, working):
    """Minimizer of the quadratic on {A_W v = b_W} and its multipliers."""
    n = G.shape[0]
    Aw = A[list(working)]
    k = len(working)
    K = np.zeros((n + k, n + k))
    K[:n, :n] = G
    K[:n, n:] = Aw.T
    K[n:, :n] = Aw
    rhs = np.concatenate([-g, b[list(working)]])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        raise QPFailure(f"singular KKT system with working set {sorted(working)}") from None
    if not np.all(np.isfinite(sol)):
        raise QPFailure("non-finite KKT solution")
    return sol[:n], sol[n:]


def solve_qp(G, g, A, b, v0, working=(), *, max_iter: int | None = None, tol: float = 1e-12) -> QPResult:
    """min 1/2 v'Gv + g'v  s.t.  A v <= b, from a feasible v0.

    G must be positive definite on the null space of every working set reached; the
    initial working set must consist of linearly independent constraints active at v0.
    """
    G = np.asarray(G, dtype=float)
    g = np.asarray(g, dtype=float)
    A = np.asarray(A, dtype=float).reshape(-1, G.shape[0])
    b = np.asarray(b, dtype=float)
    v = np.array(v0, dtype=float)
    m = A.shape[0]
    scale = max(1.0, float(np.max(np.abs(b), initial=0.0)), float(np.max(np.abs(v), initial=0.0)))
    if m and np.max(A @ v - b) > 1e-8 * scale:
        raise QPFailure("starting point is infeasible")
    W = list(working)
    limit = max_iter if max_iter is not None else 50 * (G.shape[0] + m + 1)
    for it in range(limit):
        target, lam = _equality_solve(G, g, A, b, W)
        p = target - v
        if np.max(np.abs(p), initial=0.0) <= 1e-13 * scale:
            v = target
            if not W or lam.min() >= -tol * scale:
                mult = np.zeros(m)
                mult[W] = np.maximum(lam, 0.0)
                return QPResult(v, mult, tuple(W), it)
            W.pop(int(np.argmin(lam)))
            continue
        step, blocking = 1.0, None
        Ap = A @ p
        slack = b - A @ v
        in_w = np.zeros(m, dtype=bool)
        in_w[W] = True
        for i in np.flatnonzero(~in_w & (Ap > 1e-14 * max(1.0, float(np.max(np.abs(p)))))):
            ratio = max(slack[i], 0.0) / Ap[i]
            if ratio < step:
                step, blocking = ratio, int(i)
        v = v + step * p
        if blocking is not None:
            W.append(blocking)
    raise QPFailure(f"active-set method did not terminate within {limit} iterations")
