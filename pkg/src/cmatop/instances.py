"""Built-in problem instances: the separable example, a certified largest-eigenvalue family and degenerate controls."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kkt import AffineMatrixMap, AffineVectorMap, KKTPoint, ProblemInstance, QuadraticFunction
from .pwa import SymmetricPWA
from .symmat import random_orthogonal, random_symmetric


@dataclass(frozen=True)
class BuiltInstance:
    problem: ProblemInstance
    solution: KKTPoint
    start: KKTPoint
    tag: str


def separable_instance() -> BuiltInstance:
    """minimize 1/2 |x - (3,1)|^2 + lambda_max(Diag(x)); solution x = (2,1), Y = Diag(1,0)."""
    z = np.array([3.0, 1.0])
    f = QuadraticFunction(np.eye(2), -z, 0.5 * float(z @ z))
    g = AffineMatrixMap(np.zeros((2, 2)), (np.diag([1.0, 0.0]), np.diag([0.0, 1.0])))
    prob = ProblemInstance(f, SymmetricPWA.max_entry(2), g1=g, name="separable")
    sol = KKTPoint(np.array([2.0, 1.0]), np.zeros(0), np.diag([1.0, 0.0]), np.zeros((2, 2)))
    return BuiltInstance(prob, sol, KKTPoint.zeros(prob, z), "separable-prox")


def _lambda1_problem(rng, n, r, m, k, *, Q=None, h_matrix=None, name=""):
    """Largest-eigenvalue problem with a prescribed KKT point of top multiplicity r."""
    U = random_orthogonal(rng, n)
    lower = np.sort(rng.uniform(-2.0, 0.0, size=n - r))[::-1]
    lam = np.r_[np.ones(r), lower]
    Xbar = (U * lam) @ U.T
    V = rng.standard_normal((r, r))
    Wd = V @ V.T + np.eye(r)
    Wd /= np.trace(Wd)
    Ybar = U[:, :r] @ Wd @ U[:, :r].T
    xbar = rng.standard_normal(m)
    coeffs = tuple(random_symmetric(rng, n) for _ in range(m))
    A0 = Xbar - sum(xi * A for xi, A in zip(xbar, coeffs))
    g = AffineMatrixMap(A0, coeffs)
    if Q is None:
        B = rng.standard_normal((m, m))
        Q = B @ B.T + 0.5 * np.eye(m)
    ybar = rng.standard_normal(k)
    h = None
    grad = Q @ xbar + g.adjoint(xbar, Ybar)
    if k:
        M = rng.standard_normal((k, m)) if h_matrix is None else np.asarray(h_matrix, dtype=float)
        h = AffineVectorMap(M, -M @ xbar)
        grad = grad + M.T @ ybar
    f = QuadraticFunction(Q, -grad)
    prob = ProblemInstance(f, SymmetricPWA.max_entry(n), g1=g, h=h, name=name)
    sol = KKTPoint(xbar, ybar, Ybar, np.zeros((n, n)))
    return prob, sol


def _nearby_start(rng, prob: ProblemInstance, sol: KKTPoint, scale: float) -> KKTPoint:
    u = sol.to_vector(prob)
    return KKTPoint.from_vector(prob, u + scale * rng.standard_normal(u.size))


def certified_lambda1_instance(seed: int, start_scale: float = 0.3) -> BuiltInstance:
    """Nondegenerate instance with strict complementarity and a positive definite f.

    The variable count covers the quotient by the lineality space plus the equality
    constraints, so generic coefficients make the constraint map onto; Q > 0 gives SSOSC.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 6))
    r = int(rng.integers(1, 3))
    k = int(rng.integers(0, 2))
    extra = int(rng.integers(0, 3))
    m = r * (r + 1) // 2 - 1 + k + extra + 1
    prob, sol = _lambda1_problem(rng, n, r, m, k, name=f"certified-{seed}")
    return BuiltInstance(prob, sol, _nearby_start(rng, prob, sol, start_scale), "affine-matrix")


def certified_family(count: int = 30, base_seed: int = 1000) -> list[BuiltInstance]:
    return [certified_lambda1_instance(base_seed + i) for i in range(count)]


def degenerate_instances(base_seed: int = 500) -> list[BuiltInstance]:
    """Five KKT points where constraint nondegeneracy fails by construction."""
    out = []
    for i in range(3):
        rng = np.random.default_rng(base_seed + i)
        n = 3 + i
        prob, sol = _lambda1_problem(rng, n, 2, 1, 0, name=f"repeated-top-{i}")
        out.append(BuiltInstance(prob, sol, _nearby_start(rng, prob, sol, 1e-2), "affine-matrix"))
    rng = np.random.default_rng(base_seed + 3)
    prob, sol = _lambda1_problem(rng, 3, 1, 2, 2, h_matrix=[[1.0, -1.0], [0.0, 0.0]], name="zero-h-row")
    out.append(BuiltInstance(prob, sol, _nearby_start(rng, prob, sol, 1e-2), "affine-matrix"))
    rng = np.random.default_rng(base_seed + 4)
    prob, sol = _lambda1_problem(rng, 3, 1, 3, 2, h_matrix=[[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]], name="rank-one-h")
    out.append(BuiltInstance(prob, sol, _nearby_start(rng, prob, sol, 1e-2), "affine-matrix"))
    return out


def sigma_curvature_instance() -> BuiltInstance:
    """minimize lambda_max([[1, x], [x, 0]]): f is zero, all curvature comes from the sigma term."""
    g = AffineMatrixMap(np.diag([1.0, 0.0]), (np.array([[0.0, 1.0], [1.0, 0.0]]),))
    prob = ProblemInstance(QuadraticFunction(np.zeros((1, 1)), np.zeros(1)), SymmetricPWA.max_entry(2), g1=g,
                           name="sigma-curvature")
    sol = KKTPoint(np.zeros(1), np.zeros(0), np.diag([1.0, 0.0]), np.zeros((2, 2)))
    return BuiltInstance(prob, sol, KKTPoint.zeros(prob, [0.1]), "affine-matrix")


def flat_instance() -> BuiltInstance:
    """minimize lambda_max(Diag(1, x1)) with a second unused variable: flat in both directions near 0."""
    g = AffineMatrixMap(np.diag([1.0, 0.0]), (np.diag([0.0, 1.0]), np.zeros((2, 2))))
    prob = ProblemInstance(QuadraticFunction(np.zeros((2, 2)), np.zeros(2)), SymmetricPWA.max_entry(2), g1=g,
                           name="flat")
    sol = KKTPoint(np.zeros(2), np.zeros(0), np.diag([1.0, 0.0]), np.zeros((2, 2)))
    return BuiltInstance(prob, sol, KKTPoint.zeros(prob), "affine-matrix")


def nsd_constrained_instance() -> BuiltInstance:
    """minimize 1/2 |x - (1, -2)|^2 subject to Diag(x) negative semidefinite; solution x = (0, -2), Z = Diag(1, 0)."""
    z = np.array([1.0, -2.0])
    f = QuadraticFunction(np.eye(2), -z, 0.5 * float(z @ z))
    g = AffineMatrixMap(np.zeros((2, 2)), (np.diag([1.0, 0.0]), np.diag([0.0, 1.0])))
    phi = SymmetricPWA(np.zeros((1, 2)), np.zeros(1), np.array([[1.0, 0.0]]), np.zeros(1))
    prob = ProblemInstance(f, phi, g2=g, name="nsd-constrained")
    sol = KKTPoint(np.array([0.0, -2.0]), np.zeros(0), np.zeros((2, 2)), np.diag([1.0, 0.0]))
    return BuiltInstance(prob, sol, KKTPoint.zeros(prob, z), "custom-quadratic")


def shipped_instances() -> dict[str, BuiltInstance]:
    """The instances written to the repository's instances/ directory, keyed by file stem."""
    return {
        "separable": separable_instance(),
        "certified-1000": certified_lambda1_instance(1000),
        "repeated-top": degenerate_instances()[0],
        "nsd-constrained": nsd_constrained_instance(),
        "sigma-curvature": sigma_curvature_instance(),
        "flat": flat_instance(),
    }
