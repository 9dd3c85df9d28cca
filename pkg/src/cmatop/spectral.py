"""Spectral functions phi(lambda(X)): values, subgradients, proximal maps and their Jacobians."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .eigcalc import eig_dir_deriv, eig_second_dir_deriv
from .errors import DimensionMismatch, InfeasiblePoint, InvalidSelection, NotASubgradient
from .pwa import (
    SymmetricPWA,
    active_faces,
    active_pieces,
    analyze_patterns,
    eval_phi,
    frame_from_blocks,
    majorization_gap,
    project_critical_cone,
    prox_pwa,
    span_projector,
    nullspace_projector,
    relative_interior_margin,
)
from .symmat import (
    BlockPartition,
    EigenSystem,
    as_symmetric,
    eig_decompose,
    group_sorted,
    ky_fan_gap,
    svec,
    svec_basis,
    svec_dim,
)

MEM_TOL = 1e-7


def spectral_prox(phi: SymmetricPWA, X, eig_tol: float | None = None) -> np.ndarray:
    """U Diag(prox of phi at lambda(X)) U^T."""
    E, _ = eig_decompose(X, eig_tol)
    return (E.U * prox_pwa(phi, E.lambdas)) @ E.U.T


def prox_theta1(phi: SymmetricPWA, X, eig_tol: float | None = None) -> np.ndarray:
    return spectral_prox(phi.pieces_only(), X, eig_tol)


def project_K(phi: SymmetricPWA, X, eig_tol: float | None = None) -> np.ndarray:
    """Projection onto K = {X : lambda(X) in the domain of phi}."""
    return spectral_prox(phi.faces_only(), X, eig_tol)


def theta_value(phi: SymmetricPWA, X) -> float:
    return eval_phi(phi, np.linalg.eigvalsh(as_symmetric(X))[::-1])


def _block_average(v: np.ndarray, blocks) -> np.ndarray:
    out = v.copy()
    for b in blocks:
        out[b.start:b.stop] = v[b.start:b.stop].mean()
    return out


@dataclass(frozen=True)
class SpectralPair:
    """A primal-dual pair (Xbar, Ybar) sharing the eigenbasis of S = Xbar + Ybar.

    x = prox(lambda(S)) and y = lambda(S) - x; alpha groups equal entries of x
    (eigenvalue blocks of Xbar) and beta groups equal eigenvalues of S, which refine alpha.
    """

    phi: SymmetricPWA
    U: np.ndarray
    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    alpha: tuple[range, ...]
    beta: tuple[range, ...]
    tol: float

    @property
    def n(self) -> int:
        return len(self.s)

    @property
    def Xbar(self) -> np.ndarray:
        return (self.U * self.x) @ self.U.T

    @property
    def Ybar(self) -> np.ndarray:
        return (self.U * self.y) @ self.U.T

    @cached_property
    def frame(self):
        return frame_from_blocks(self.x, self.y, self.alpha, self.beta)

    @cached_property
    def pieces(self) -> np.ndarray:
        return active_pieces(self.phi, self.x, self._active_tol)

    @cached_property
    def faces(self) -> np.ndarray:
        return active_faces(self.phi, self.x, self._active_tol)

    @property
    def _active_tol(self) -> float:
        return 10 * self.tol

    @cached_property
    def patterns(self):
        return analyze_patterns(self.phi, self.frame, self.y, self.pieces, self.faces)

    def eigensystem(self) -> tuple[EigenSystem, BlockPartition]:
        """Eigen-structure of Xbar in the shared basis."""
        part = group_sorted(self.x, self.tol)
        return EigenSystem(self.x, self.U, self.tol), part

    def alpha_of_beta(self) -> list[int]:
        return [next(l for l, a in enumerate(self.alpha) if a.start <= b.start < a.stop) for b in self.beta]

    def positive_beta(self) -> list[int]:
        """Beta blocks on which some positive-weight pattern is non-constant."""
        return self.patterns.positive_fine_blocks()

    def tilde_alpha(self) -> list[int]:
        """Alpha blocks where some active generator slice is non-constant."""
        gens = [self.phi.A[i] for i in self.pieces] + [self.phi.B[j] for j in self.faces]
        return [l for l, a in enumerate(self.alpha) if any(len(set(g[a.start:a.stop].tolist())) > 1 for g in gens)]

    def hat(self, H) -> np.ndarray:
        return self.U.T @ as_symmetric(H, name="H") @ self.U


def pair_from_sum(phi: SymmetricPWA, S, eig_tol: float | None = None) -> SpectralPair:
    """Pair (Pr(S), S - Pr(S)) for the spectral function of phi."""
    E, P = eig_decompose(S, eig_tol)
    tol = E.group_tol
    x = _block_average(prox_pwa(phi, E.lambdas), P.blocks)
    alpha = group_sorted(x, tol).blocks
    x = _block_average(x, alpha)
    return SpectralPair(phi, E.U, E.lambdas, x, E.lambdas - x, alpha, P.blocks, tol)


def pair_from_primal_dual(phi: SymmetricPWA, X, Y, eig_tol: float | None = None) -> SpectralPair:
    """Pair for Y in the subdifferential of the spectral function at X; raises otherwise."""
    X = as_symmetric(X, name="X")
    Y = as_symmetric(Y, name="Y")
    if X.shape != Y.shape:
        raise DimensionMismatch("X and Y differ in shape")
    pair = pair_from_sum(phi, X + Y, eig_tol)
    scale = max(1.0, float(np.max(np.abs(X))), float(np.max(np.abs(Y))))
    err = float(np.max(np.abs(pair.Xbar - X)))
    if err > 1e-7 * scale:
        raise NotASubgradient(f"Y is not a subgradient at X (prox mismatch {err:.3e})")
    return pair


def subdiff_membership(phi: SymmetricPWA, X, W, *, part: str = "pieces") -> tuple[bool, SpectralPair | None]:
    """Whether W lies in the subdifferential of phi(lambda(.)) at X.

    part="pieces" tests theta1 = phi1(lambda), part="faces" the normal cone of K.
    """
    X = as_symmetric(X, name="X")
    W = as_symmetric(W, name="W")
    fn = phi.pieces_only() if part == "pieces" else phi.faces_only()
    lx = np.linalg.eigvalsh(X)[::-1]
    if not np.isfinite(eval_phi(fn, lx)):
        raise InfeasiblePoint("lambda(X) is outside the domain")
    lw = np.linalg.eigvalsh(W)[::-1]
    scale = max(1.0, float(np.linalg.norm(X) * np.linalg.norm(W)), float(np.max(np.abs(X))), float(np.max(np.abs(W))))
    if ky_fan_gap(X, W) > MEM_TOL * scale:
        return False, None
    tol = 1e-8 * max(1.0, float(np.max(np.abs(lx))))
    blocks = group_sorted(lx, tol).blocks
    pieces = active_pieces(fn, lx, 10 * tol)
    faces = active_faces(fn, lx, 10 * tol)
    gap = majorization_gap(fn, lx, lw, blocks, pieces, faces)
    if gap > MEM_TOL * scale:
        return False, None
    try:
        return True, pair_from_primal_dual(fn, X, W)
    except NotASubgradient:
        return False, None


def divided_difference(pair: SpectralPair) -> np.ndarray:
    """Gap ratios (x_i - x_j)/(s_i - s_j) off the ties of S, zero on them."""
    n = pair.n
    labels = np.empty(n, dtype=int)
    for k, b in enumerate(pair.beta):
        labels[b.start:b.stop] = k
    ds = pair.s[:, None] - pair.s[None, :]
    dx = pair.x[:, None] - pair.x[None, :]
    A = np.zeros((n, n))
    mask = labels[:, None] != labels[None, :]
    A[mask] = dx[mask] / ds[mask]
    return np.clip(A, 0.0, 1.0)


@dataclass(frozen=True)
class JacobianElement:
    """H -> U [M o (U^T H U) + Diag(P diag(U^T H U))] U^T."""

    U: np.ndarray
    M: np.ndarray
    P: np.ndarray
    label: str = ""

    def apply(self, H) -> np.ndarray:
        Hh = self.U.T @ np.asarray(H, dtype=float) @ self.U
        inner = self.M * Hh
        np.fill_diagonal(inner, self.P @ np.diag(Hh))
        return self.U @ inner @ self.U.T

    def matrix(self) -> np.ndarray:
        """Representation in svec coordinates."""
        n = self.U.shape[0]
        return np.column_stack([svec(self.apply(B)) for B in svec_basis(n)]) if n else np.zeros((0, 0))


def _within_beta_mask(pair: SpectralPair) -> np.ndarray:
    n = pair.n
    mask = np.zeros((n, n), dtype=bool)
    for b in pair.beta:
        mask[b.start:b.stop, b.start:b.stop] = True
    return mask


def directional_element(pair: SpectralPair, G) -> JacobianElement:
    """B-subdifferential element obtained as the limit along S + t U' Diag(mu) U'^T.

    U' rotates each beta block to diagonalize G there and mu holds the rotated diagonal.
    """
    G = as_symmetric(G, name="G")
    U = pair.U.copy()
    mu = np.empty(pair.n)
    for b in pair.beta:
        Ub = U[:, b.start:b.stop]
        w, R = np.linalg.eigh(Ub.T @ G @ Ub)
        U[:, b.start:b.stop] = Ub @ R[:, ::-1]
        mu[b.start:b.stop] = w[::-1]
    frame = pair.frame
    d, R, res, perm = project_critical_cone(pair.phi, frame, pair.pieces, pair.faces, mu)
    scale = max(1.0, float(np.max(np.abs(mu))))
    d_local = res.v
    h_local = mu[perm]
    act = np.abs(R @ d_local) <= 1e-9 * scale
    if relative_interior_margin(R[act], h_local - d_local) <= 1e-9 * scale:
        raise InvalidSelection("direction meets the critical cone at a weakly active constraint")
    P_local = nullspace_projector(R[act], pair.n)
    Pi = np.zeros((pair.n, pair.n))
    Pi[np.arange(pair.n), perm] = 1.0
    P = Pi.T @ P_local @ Pi
    M = divided_difference(pair)
    for b in pair.beta:
        sl = slice(b.start, b.stop)
        dm = mu[sl][:, None] - mu[sl][None, :]
        dd = d[sl][:, None] - d[sl][None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            block = np.where(np.abs(dm) > 1e-12 * scale, dd / dm, 0.0)
        if np.any(np.abs(dm[~np.eye(len(b), dtype=bool)]) <= 1e-12 * scale):
            raise InvalidSelection("direction has repeated eigenvalues inside a block")
        np.fill_diagonal(block, 0.0)
        M[sl, sl] = np.clip(block, 0.0, 1.0)
    return JacobianElement(U, M, P, "directional")


def affine_hull_element(pair: SpectralPair) -> JacobianElement:
    """Element built from the projector onto the span of the critical cone."""
    M = divided_difference(pair)
    positive = set(pair.positive_beta())
    for k, b in enumerate(pair.beta):
        sl = slice(b.start, b.stop)
        M[sl, sl] = 0.0 if k in positive else 1.0
        np.fill_diagonal(M[sl, sl], 0.0)
    P = span_projector(pair.patterns, pair.y)
    return JacobianElement(pair.U.copy(), M, P, "affine-hull")


def generic_direction(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((n, n))
    return 0.5 * (G + G.T)


def jacobian_element(pair: SpectralPair, selection="directional", seed: int = 0, attempts: int = 8) -> JacobianElement:
    """A concrete element of the generalized Jacobian of the spectral prox at S."""
    if selection == "affine-hull":
        return affine_hull_element(pair)
    if selection != "directional":
        return directional_element(pair, selection)
    last = None
    for k in range(attempts):
        try:
            return directional_element(pair, generic_direction(pair.n, seed + 7919 * k))
        except InvalidSelection as exc:
            last = exc
    raise last


def theta1_second_dir_deriv(phi: SymmetricPWA, pair: SpectralPair, H, W) -> float:
    """max over pieces attaining phi1'(lambda; lambda') of <a, lambda''(X; H, W)>."""
    E, P = pair.eigensystem()
    lam1 = eig_dir_deriv(E, P, H)
    lam2 = eig_second_dir_deriv(E, P, H, W)
    pieces = active_pieces(phi.pieces_only(), pair.x, 10 * pair.tol)
    scores = phi.A[pieces] @ lam1
    tol = 10 * E.group_tol * max(1.0, float(np.max(np.abs(lam1)))) * max(1.0, float(np.max(np.abs(phi.A))))
    xi = pieces[scores >= scores.max() - tol]
    return float(np.max(phi.A[xi] @ lam2))


def operator_matrix(fn, n: int) -> np.ndarray:
    """Matrix of a linear map on S^n in svec coordinates."""
    return np.column_stack([svec(fn(B)) for B in svec_basis(n)]) if svec_dim(n) else np.zeros((0, 0))
