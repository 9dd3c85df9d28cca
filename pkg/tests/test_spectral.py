import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import random_pwa
from scipy.optimize import minimize

from cmatop.errors import InfeasiblePoint, NotASubgradient
from cmatop.pwa import SymmetricPWA
from cmatop.spectral import (affine_hull_element, divided_difference, jacobian_element, pair_from_primal_dual,
                             pair_from_sum, project_K, prox_theta1, spectral_prox, subdiff_membership,
                             theta1_second_dir_deriv, theta_value)
from cmatop.symmat import random_orthogonal, random_symmetric
from cmatop.varstruct import critical_cone, upsilon

seeds = st.integers(0, 2**32 - 1)
SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])
MAX2 = SymmetricPWA.max_entry(2)
NONPOS2 = SymmetricPWA.nonpositive_max(2)


def tied_matrix(rng, n, scale=1.0):
    """Rotation of a spectrum drawn from a few integer levels, so ties are frequent."""
    lam = rng.integers(-2, 3, size=n).astype(float) * scale
    if rng.random() < 0.5:
        lam = lam + 0.3 * rng.standard_normal(n)
    Q = random_orthogonal(rng, n)
    return Q @ np.diag(lam) @ Q.T


@st.composite
def spectral_cases(draw, max_n=4, faces=True):
    rng = np.random.default_rng(draw(seeds))
    n = draw(st.integers(1, max_n))
    phi = random_pwa(rng, n, draw(st.integers(1, 3)), draw(st.integers(0, 2)) if faces else 0,
                     integer=draw(st.booleans()))
    return rng, phi, tied_matrix(rng, n, scale=draw(st.sampled_from([0.5, 1.0, 2.0])))


# Values and membership ----------------------------------------------------------------


def test_theta_examples():
    assert theta_value(MAX2, np.diag([2.0, 1.0])) == 2
    assert theta_value(SymmetricPWA(np.array([[1.0, 0.0]]), [0.0], np.array([[1.0, 0.0]]), [0.0]),
                       np.diag([1.0, -1.0])) == np.inf
    rng = np.random.default_rng(0)
    X = random_symmetric(rng, 4)
    assert theta_value(SymmetricPWA(np.ones((1, 4)), [0.0]), X) == pytest.approx(np.trace(X))


@pytest.mark.parametrize("X, W, expected", [
    (np.diag([2.0, 1.0]), np.diag([1.0, 0.0]), True),
    (np.eye(2), np.diag([0.5, 0.5]), True),
    (np.diag([2.0, 1.0]), np.diag([0.0, 1.0]), False),
])
def test_membership_examples(X, W, expected):
    assert subdiff_membership(MAX2, X, W)[0] is expected


def test_membership_requires_domain():
    with pytest.raises(InfeasiblePoint):
        subdiff_membership(NONPOS2, np.diag([1.0, 0.0]), np.zeros((2, 2)), part="faces")


def test_pair_from_primal_dual_rejects_non_subgradient():
    with pytest.raises(NotASubgradient):
        pair_from_primal_dual(MAX2, np.diag([2.0, 1.0]), np.diag([0.0, 1.0]))


# Prox --------------------------------------------------------------------------------


def test_prox_examples():
    assert np.allclose(spectral_prox(MAX2, np.diag([3.0, 1.0])), np.diag([2.0, 1.0]))
    assert np.allclose(project_K(NONPOS2, np.diag([1.0, -2.0])), np.diag([0.0, -2.0]))
    # prox of max at the origin is the constant vector (-1/n, ..., -1/n), a scaled identity in any basis
    assert np.allclose(prox_theta1(SymmetricPWA.max_entry(3), np.zeros((3, 3))), -np.eye(3) / 3)


def _sym2(v):
    return np.array([[v[0], v[1]], [v[1], v[2]]])


def direct_prox_2x2(phi, X):
    """Grid search over symmetric 2x2 matrices near X, then local descent."""
    def objective(v):
        W = _sym2(v)
        return theta_value(phi, W) + 0.5 * np.sum((W - X) ** 2)

    base = np.array([X[0, 0], X[0, 1], X[1, 1]])
    grid = np.linspace(-2, 2, 9)
    best = min((base + np.array([a, b, c]) for a in grid for b in grid for c in grid), key=objective)
    res = minimize(objective, best, method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 20000, "maxfev": 40000})
    return _sym2(res.x)


@pytest.mark.parametrize("seed", range(8))
def test_prox_matches_direct_minimization_2x2(seed):
    rng = np.random.default_rng(seed)
    phi = random_pwa(rng, 2, 2, 0) if seed % 2 else MAX2
    X = random_symmetric(rng, 2, scale=2.0)
    assert np.max(np.abs(prox_theta1(phi, X) - direct_prox_2x2(phi, X))) <= 1e-5


@given(spectral_cases(max_n=5))
def test_prox_orthogonal_equivariance(case):
    rng, phi, X = case
    Q = random_orthogonal(rng, phi.n)
    assert np.max(np.abs(prox_theta1(phi, Q @ X @ Q.T) - Q @ prox_theta1(phi, X) @ Q.T)) <= 1e-9
    assert np.max(np.abs(project_K(phi, Q @ X @ Q.T) - Q @ project_K(phi, X) @ Q.T)) <= 1e-9


@given(spectral_cases())
def test_moreau_membership(case):
    _, phi, X = case
    P = prox_theta1(phi, X)
    assert subdiff_membership(phi, P, X - P)[0]
    if phi.has_faces:
        K = project_K(phi, X)
        assert subdiff_membership(phi, K, X - K, part="faces")[0]


@given(spectral_cases())
def test_matrix_prox_nonexpansive(case):
    rng, phi, X1 = case
    X2 = tied_matrix(rng, phi.n)
    gap = np.linalg.norm(X1 - X2)
    assert np.linalg.norm(prox_theta1(phi, X1) - prox_theta1(phi, X2)) <= gap + 1e-9
    assert np.linalg.norm(project_K(phi, X1) - project_K(phi, X2)) <= gap + 1e-9


# Jacobians ---------------------------------------------------------------------------


def test_divided_difference_examples():
    pair = pair_from_primal_dual(MAX2, np.diag([2.0, 1.0]), np.diag([1.0, 0.0]))
    assert divided_difference(pair)[0, 1] == pytest.approx(0.5)
    # Ybar = 0: ratio 1 off ties, 0 on ties
    pair = pair_from_sum(SymmetricPWA(np.zeros((1, 3)), [0.0]), np.diag([2.0, 2.0, 1.0]))
    A = divided_difference(pair)
    assert np.allclose(A, [[0, 0, 1], [0, 0, 1], [1, 1, 0]])
    pair = pair_from_primal_dual(MAX2, np.eye(2), np.diag([0.5, 0.5]))
    assert np.allclose(divided_difference(pair), 0)


def test_jacobian_hand_example():
    pair = pair_from_primal_dual(MAX2, np.diag([2.0, 1.0]), np.diag([1.0, 0.0]))
    for sel in ("directional", "affine-hull"):
        J = jacobian_element(pair, sel)
        assert np.allclose(J.apply(SWAP), 0.5 * SWAP)
        assert np.allclose(J.apply(np.zeros((2, 2))), 0)
    # finite-difference oracle at S = Diag(3, 1)
    t = 1e-6
    S = np.diag([3.0, 1.0])
    fd = (prox_theta1(MAX2, S + t * SWAP) - prox_theta1(MAX2, S)) / t
    assert np.allclose(fd, 0.5 * SWAP, atol=1e-6)


@given(spectral_cases(faces=False))
def test_jacobian_matches_differences_at_smooth_points(case):
    rng, phi, _ = case
    n = phi.n
    S = random_symmetric(rng, n, scale=2.0)  # generic: simple eigenvalues
    pair = pair_from_sum(phi, S)
    ok = pair.patterns.all_members()
    if not ok:
        return
    J = jacobian_element(pair)
    H = random_symmetric(rng, n)
    t = 1e-6
    fd = (prox_theta1(phi, S + t * H) - prox_theta1(phi, S)) / t
    assert np.max(np.abs(fd - J.apply(H))) <= 1e-6 * max(1.0, np.max(np.abs(H))) * 10


@given(spectral_cases())
def test_jacobian_output_in_affine_hull(case):
    rng, phi, S = case
    pair = pair_from_sum(phi.pieces_only(), S)
    hull = critical_cone(pair).affine_hull()
    for sel in ("directional", "affine-hull"):
        J = jacobian_element(pair, sel, seed=int(rng.integers(1000)))
        for _ in range(3):
            H = random_symmetric(rng, phi.n)
            assert hull.contains(J.apply(H), tol=1e-7 * max(1.0, np.linalg.norm(H)))


@given(spectral_cases())
def test_fixed_point_inequality(case):
    rng, phi, S = case
    pair = pair_from_sum(phi.pieces_only(), S)
    J = jacobian_element(pair, seed=int(rng.integers(1000)))
    for _ in range(5):
        H = random_symmetric(rng, phi.n)
        dX = J.apply(H)
        dY = H - dX
        assert np.sum(dX * dY) >= -upsilon(pair, dX) - 1e-8


def test_second_dir_deriv_simple_top():
    rng = np.random.default_rng(4)
    Q = random_orthogonal(rng, 3)
    lam = np.array([2.0, 0.5, -1.0])
    X = Q @ np.diag(lam) @ Q.T
    Y = np.outer(Q[:, 0], Q[:, 0])
    pair = pair_from_primal_dual(SymmetricPWA.max_entry(3), X, Y)
    H = random_symmetric(rng, 3)
    Hh = Q.T @ H @ Q
    closed = -2 * sum(Hh[0, j] ** 2 / (lam[j] - lam[0]) for j in (1, 2))
    val = theta1_second_dir_deriv(SymmetricPWA.max_entry(3), pair, H, np.zeros((3, 3)))
    assert val == pytest.approx(closed, rel=1e-10) and val >= 0
    # parabolic three-point oracle on lambda_max
    ts = [1e-2, 1e-3]
    top = lambda t: np.linalg.eigvalsh(X + t * H)[-1]
    fd = [(top(t) - lam[0] - t * Hh[0, 0]) / (0.5 * t * t) for t in ts]
    assert abs(fd[-1] - closed) < abs(fd[0] - closed) + 1e-9 and abs(fd[-1] - closed) < 1e-2
    assert theta1_second_dir_deriv(SymmetricPWA.max_entry(3), pair, np.zeros((3, 3)), np.zeros((3, 3))) == 0


def test_affine_hull_element_is_deterministic():
    pair = pair_from_sum(MAX2, np.eye(2))
    A, B = affine_hull_element(pair), affine_hull_element(pair)
    assert np.array_equal(A.matrix(), B.matrix())
