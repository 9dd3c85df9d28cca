"""Lineality spaces, critical cones, their affine hulls and the sigma terms of spectral functions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eigcalc import eig_dir_deriv, eig_second_dir_deriv
from .errors import InfeasiblePoint, NotInCriticalCone
from .pwa import SymmetricPWA, active_faces, active_pieces, face_values, project_critical_cone, span_projector
from .spectral import SpectralPair
from .symmat import as_symmetric, congruence_matrix, eig_decompose, random_orthogonal, smat, svec, svec_dim

SUBSPACE_RTOL = 1e-10


def cone_tol(H) -> float:
    return 1e-8 * max(1.0, float(np.linalg.norm(H)))


@dataclass(frozen=True)
class LinearSubspace:
    """Subspace of S^n given by an orthonormal basis in svec coordinates (columns)."""

    n: int
    basis: np.ndarray
    description: str = ""

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def project(self, H) -> np.ndarray:
        v = svec(H)
        return smat(self.basis @ (self.basis.T @ v), self.n)

    def residual(self, H) -> float:
        H = np.asarray(H, dtype=float)
        return float(np.linalg.norm(H - self.project(H)))

    def contains(self, H, tol: float | None = None) -> bool:
        return self.residual(H) <= (cone_tol(H) if tol is None else tol)

    def matrices(self) -> list[np.ndarray]:
        return [smat(b, self.n) for b in self.basis.T]


def nullspace_basis(rows: np.ndarray, dim: int) -> np.ndarray:
    if rows.size == 0:
        return np.eye(dim)
    _, s, Vt = np.linalg.svd(rows)
    rank = int(np.sum(s > SUBSPACE_RTOL * max(1.0, s[0])))
    return Vt[rank:].T


def _hat_rows(n: int):
    """Index helpers for svec coordinates of the rotated matrix."""
    iu = np.triu_indices(n)
    pos = {(int(i), int(j)): k for k, (i, j) in enumerate(zip(*iu))}
    return pos


def _subspace_from_hat_rows(U: np.ndarray, hat_rows: list[np.ndarray], n: int, description: str) -> LinearSubspace:
    """Subspace {H : R svec(U^T H U) = 0}."""
    dim = svec_dim(n)
    R = np.array(hat_rows).reshape(-1, dim)
    T = congruence_matrix(U)
    return LinearSubspace(n, nullspace_basis(R @ T, dim), description)


def _scalar_block_rows(block: range, pos, dim) -> list[np.ndarray]:
    rows = []
    idx = list(block)
    for a in range(len(idx)):
        for b in range(a + 1, len(idx)):
            r = np.zeros(dim)
            r[pos[(idx[a], idx[b])]] = 1.0
            rows.append(r)
    for a in range(len(idx) - 1):
        r = np.zeros(dim)
        r[pos[(idx[a], idx[a])]] = 1.0
        r[pos[(idx[a + 1], idx[a + 1])]] = -1.0
        rows.append(r)
    return rows


def _trace_row(coeffs_by_block, blocks, pos, dim) -> np.ndarray:
    r = np.zeros(dim)
    for coef, b in zip(coeffs_by_block, blocks):
        for i in b:
            r[pos[(i, i)]] += coef
    return r


def _lineality(gens: np.ndarray, E, P, constant_rows) -> list[np.ndarray]:
    """Rows forcing scalar blocks where some generator slice varies, plus one trace row per coefficient row."""
    n = E.n
    dim = svec_dim(n)
    pos = _hat_rows(n)
    blocks = P.blocks
    rows = []
    for b in blocks:
        if any(np.ptp(g[b.start:b.stop]) > 0 for g in gens):
            rows += _scalar_block_rows(b, pos, dim)
    means = np.array([[np.mean(g[b.start:b.stop]) for b in blocks] for g in gens]).reshape(len(gens), len(blocks))
    for coeffs in constant_rows(means):
        rows.append(_trace_row(coeffs, blocks, pos, dim))
    return rows


def lineality_theta1(phi: SymmetricPWA, X, eig_tol: float | None = None) -> LinearSubspace:
    """{H : theta1'(X; H) = -theta1'(X; -H)}."""
    E, P = eig_decompose(X, eig_tol)
    pieces = active_pieces(phi, E.lambdas, 10 * E.group_tol)
    rows = _lineality(phi.A[pieces], E, P, lambda means: means[1:] - means[0])
    return _subspace_from_hat_rows(E.U, rows, E.n, "lineality of the tangent cone to epi theta1")


def zeta_value(phi: SymmetricPWA, X) -> float:
    """max over faces of <b, lambda(X)> - d, or -inf without faces."""
    if not phi.has_faces:
        return -np.inf
    lam = np.linalg.eigvalsh(as_symmetric(X))[::-1]
    return float(np.max(face_values(phi, lam)))


def lineality_K(phi: SymmetricPWA, X, eig_tol: float | None = None) -> LinearSubspace:
    """Lineality space of the tangent cone to K at X."""
    X = as_symmetric(X)
    n = X.shape[0]
    z = zeta_value(phi, X)
    tol = 1e-8 * max(1.0, float(np.max(np.abs(X))))
    if z > tol:
        raise InfeasiblePoint(f"X lies outside K (zeta = {z:.3e})")
    if z < -tol:
        return LinearSubspace(n, np.eye(svec_dim(n)), "interior point: whole space")
    E, P = eig_decompose(X, eig_tol)
    faces = active_faces(phi, E.lambdas, 10 * tol)
    rows = _lineality(phi.B[faces], E, P, lambda means: means)
    return _subspace_from_hat_rows(E.U, rows, E.n, "lineality of the tangent cone to K")


def theta1_dir_deriv(phi: SymmetricPWA, X, H, eig_tol: float | None = None) -> float:
    """theta1'(X; H) = phi1'(lambda(X); lambda'(X; H))."""
    E, P = eig_decompose(X, eig_tol)
    lam1 = eig_dir_deriv(E, P, H)
    pieces = active_pieces(phi, E.lambdas, 10 * E.group_tol)
    return float(np.max(phi.A[pieces] @ lam1))


def zeta_dir_deriv(phi: SymmetricPWA, X, H, eig_tol: float | None = None) -> float:
    """zeta'(X; H) over the active faces (-inf if none is active)."""
    E, P = eig_decompose(X, eig_tol)
    tol = 10 * E.group_tol
    vals = face_values(phi, E.lambdas)
    act = np.flatnonzero(vals >= vals.max() - tol) if phi.has_faces else []
    if len(act) == 0:
        return -np.inf
    return float(np.max(phi.B[act] @ eig_dir_deriv(E, P, H)))


# Critical cones -------------------------------------------------------------------


@dataclass(frozen=True)
class CriticalCone:
    """Critical cone of the subdifferential (kind "theta") or of the normal cone to K (kind "cone")."""

    pair: SpectralPair
    kind: str

    def _lam1(self, H):
        E, P = self.pair.eigensystem()
        return eig_dir_deriv(E, P, H)

    def member(self, H) -> bool:
        H = as_symmetric(H, name="H")
        lam1 = self._lam1(H)
        tol = cone_tol(H)
        pair = self.pair
        if self.kind == "theta":
            value = float(np.max(pair.phi.A[pair.pieces] @ lam1))
            return abs(value - float(np.sum(pair.Ybar * H))) <= tol
        if len(pair.faces):
            if float(np.max(pair.phi.B[pair.faces] @ lam1)) > tol:
                return False
        return abs(float(np.sum(pair.Ybar * H))) <= tol

    def affine_hull(self) -> LinearSubspace:
        """Beta-block-diagonal inside each alpha block, scalar on positive blocks, diag in the vector span."""
        pair = self.pair
        n = pair.n
        dim = svec_dim(n)
        pos = _hat_rows(n)
        rows = []
        beta_alpha = pair.alpha_of_beta()
        for k1, b1 in enumerate(pair.beta):
            for k2, b2 in enumerate(pair.beta):
                if k1 < k2 and beta_alpha[k1] == beta_alpha[k2]:
                    for i in b1:
                        for j in b2:
                            r = np.zeros(dim)
                            r[pos[(i, j)]] = 1.0
                            rows.append(r)
        for k in pair.positive_beta():
            rows += _scalar_block_rows(pair.beta[k], pos, dim)
        Pvec = span_projector(pair.patterns, pair.y)
        for r_vec in np.linalg.svd(np.eye(n) - Pvec)[2][: int(round(np.trace(np.eye(n) - Pvec)))]:
            r = np.zeros(dim)
            for i in range(n):
                r[pos[(i, i)]] = r_vec[i]
            rows.append(r)
        return _subspace_from_hat_rows(pair.U, rows, n, f"affine hull of the {self.kind} critical cone")

    def sample(self, rng: np.random.Generator, *, in_hull: bool = False, cross_scale: float = 1.0) -> np.ndarray:
        """Random element of the cone (or of its affine hull)."""
        pair = self.pair
        n = pair.n
        mu = rng.standard_normal(n)
        if in_hull:
            delta = span_projector(pair.patterns, pair.y) @ mu
        else:
            delta, *_ = project_critical_cone(pair.phi, pair.frame, pair.pieces, pair.faces, mu)
        U = pair.U.copy()
        positive = set(pair.positive_beta())
        for k, b in enumerate(pair.beta):
            if k not in positive and len(b) > 1:
                U[:, b.start:b.stop] = U[:, b.start:b.stop] @ random_orthogonal(rng, len(b))
        Hh = np.diag(delta)
        alpha_label = np.empty(n, dtype=int)
        for l, a in enumerate(pair.alpha):
            alpha_label[a.start:a.stop] = l
        cross = rng.standard_normal((n, n)) * cross_scale
        cross = 0.5 * (cross + cross.T)
        Hh = Hh + np.where(alpha_label[:, None] != alpha_label[None, :], cross, 0.0)
        return U @ Hh @ U.T


def critical_cone(pair: SpectralPair, kind: str = "theta") -> CriticalCone:
    if kind not in ("theta", "cone"):
        raise ValueError("kind must be 'theta' or 'cone'")
    return CriticalCone(pair, kind)


# Sigma terms ----------------------------------------------------------------------


def _cross_weights(pair: SpectralPair) -> np.ndarray:
    """(y_i - y_j)/(x_i - x_j) on pairs from different alpha blocks, zero elsewhere."""
    n = pair.n
    lab = np.empty(n, dtype=int)
    for l, a in enumerate(pair.alpha):
        lab[a.start:a.stop] = l
    dx = pair.x[:, None] - pair.x[None, :]
    dy = pair.y[:, None] - pair.y[None, :]
    mask = lab[:, None] != lab[None, :]
    w = np.zeros((n, n))
    w[mask] = dy[mask] / dx[mask]
    return w


def upsilon(pair: SpectralPair, H) -> float:
    """2 sum_l <Lambda(Y)_ll, U_l^T H (X - v_l I)^+ H U_l>."""
    return upsilon_bilinear(pair, H, H)


def upsilon_bilinear(pair: SpectralPair, H1, H2) -> float:
    Hh1, Hh2 = pair.hat(H1), pair.hat(H2)
    total = 0.0
    for a in pair.alpha:
        v = pair.x[a.start]
        d = np.zeros(pair.n)
        outside = np.ones(pair.n, dtype=bool)
        outside[a.start:a.stop] = False
        d[outside] = 1.0 / (pair.x[outside] - v)
        block = (Hh1[a.start:a.stop] * d) @ Hh2[:, a.start:a.stop] + (Hh2[a.start:a.stop] * d) @ Hh1[:, a.start:a.stop]
        total += float(pair.y[a.start:a.stop] @ np.diag(block))
    return total


def upsilon_gap_form(pair: SpectralPair, H) -> float:
    """-2 sum over pairs from different blocks of gap ratio times squared entry."""
    Hh = pair.hat(H)
    return float(-np.sum(np.triu(_cross_weights(pair) * Hh**2, 1)) * 2.0)


def upsilon_matrix(pair: SpectralPair) -> np.ndarray:
    """Matrix of H -> Upsilon(H) in svec coordinates."""
    n = pair.n
    w = _cross_weights(pair)
    iu = np.triu_indices(n)
    diag = np.where(iu[0] == iu[1], 0.0, -w[iu])
    T = congruence_matrix(pair.U)
    return T.T @ np.diag(diag) @ T


def second_dir_deriv(pair: SpectralPair, H, W, kind: str = "theta") -> float:
    """theta1''(X; H, W) (kind "theta") or zeta''(X; H, W) (kind "cone")."""
    E, P = pair.eigensystem()
    lam1 = eig_dir_deriv(E, P, H)
    lam2 = eig_second_dir_deriv(E, P, H, W)
    gens = pair.phi.A[pair.pieces] if kind == "theta" else pair.phi.B[pair.faces]
    if len(gens) == 0:
        return -np.inf  # interior point of K
    scores = gens @ lam1
    tol = 10 * E.group_tol * max(1.0, float(np.max(np.abs(lam1)))) * max(1.0, float(np.max(np.abs(gens))))
    xi = scores >= scores.max() - tol
    return float(np.max(gens[xi] @ lam2))


@dataclass(frozen=True)
class SigmaCertificate:
    upsilon: float
    candidate_value: float
    worst_sample_excess: float
    samples: int
    passed: bool


def candidate_maximizer(pair: SpectralPair, H) -> np.ndarray:
    """W with U_l^T W U_l = 2 U_l^T H (X - v_l I)^+ H U_l on every block, zero across blocks."""
    Hh = pair.hat(H)
    Wh = np.zeros((pair.n, pair.n))
    for a in pair.alpha:
        v = pair.x[a.start]
        d = np.zeros(pair.n)
        outside = np.ones(pair.n, dtype=bool)
        outside[a.start:a.stop] = False
        d[outside] = 1.0 / (pair.x[outside] - v)
        Wh[a.start:a.stop, a.start:a.stop] = 2.0 * (Hh[a.start:a.stop] * d) @ Hh[:, a.start:a.stop]
    return pair.U @ Wh @ pair.U.T


def dual_weight(pair: SpectralPair, kind: str) -> float:
    """Total multiplier mass in a representation of the dual eigenvalues."""
    if kind == "theta":
        return 1.0
    return float(pair.patterns.weights_total("face"))


def sigma_conjugate_check(pair: SpectralPair, H, *, kind: str = "theta", samples: int = 200,
                          seed: int = 0, tol: float = 1e-7) -> SigmaCertificate:
    """Certify sup_W <W, Y> - w * second(W) = Upsilon(Y, H) by a maximizer and random W."""
    if not critical_cone(pair, kind).member(H):
        raise NotInCriticalCone("H is not in the critical cone")
    ups = upsilon(pair, H)
    weight = dual_weight(pair, kind)
    Yb = pair.Ybar
    W_hat = candidate_maximizer(pair, H)

    def value(W):
        curvature = weight * second_dir_deriv(pair, H, W, kind) if weight > 0 else 0.0
        return float(np.sum(W * Yb)) - curvature

    cand = value(W_hat)
    rng = np.random.default_rng(seed)
    scale = max(1.0, abs(ups))
    worst = -np.inf
    for _ in range(samples):
        G = rng.standard_normal((pair.n, pair.n)) * rng.choice([0.1, 1.0, 10.0])
        W = W_hat + 0.5 * (G + G.T)
        worst = max(worst, value(W) - ups)
    ok = abs(cand - ups) <= tol * scale and (samples == 0 or worst <= tol * scale)
    return SigmaCertificate(ups, cand, worst if samples else 0.0, samples, ok)
