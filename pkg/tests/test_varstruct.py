import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import random_pwa

from cmatop.errors import InfeasiblePoint, NotInCriticalCone
from cmatop.pwa import SymmetricPWA
from cmatop.spectral import pair_from_primal_dual, pair_from_sum
from cmatop.symmat import random_orthogonal, random_symmetric, svec
from cmatop.varstruct import (candidate_maximizer, critical_cone, lineality_K, lineality_theta1, sigma_conjugate_check,
                              theta1_dir_deriv, upsilon, upsilon_bilinear, upsilon_gap_form, upsilon_matrix,
                              zeta_dir_deriv, zeta_value)

seeds = st.integers(0, 2**32 - 1)
SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])
MAX2 = SymmetricPWA.max_entry(2)
NONPOS2 = SymmetricPWA.nonpositive_max(2)


def tied_matrix(rng, n):
    lam = rng.integers(-2, 3, size=n).astype(float)
    Q = random_orthogonal(rng, n)
    return Q @ np.diag(lam) @ Q.T


def two_sided(fn, H):
    return fn(H) + fn(-H)


def both_sides(fn, H):
    return max(fn(H), fn(-H))


@st.composite
def pairs(draw, max_n=4, kind="theta"):
    rng = np.random.default_rng(draw(seeds))
    n = draw(st.integers(1, max_n))
    phi = random_pwa(rng, n, draw(st.integers(1, 3)), draw(st.integers(1, 2)) if kind == "cone" else 0,
                     integer=True)
    if kind == "cone":
        phi = phi.faces_only()
    return rng, pair_from_sum(phi, tied_matrix(rng, n))


# Lineality ---------------------------------------------------------------------------


def test_lineality_theta_examples():
    assert lineality_theta1(MAX2, np.diag([2.0, 1.0])).dim == 3
    L = lineality_theta1(MAX2, np.eye(2))
    assert L.dim == 1 and L.contains(np.eye(2))
    assert lineality_theta1(SymmetricPWA(np.ones((1, 3)), [0.0]), random_symmetric(np.random.default_rng(0), 3)).dim == 6


def test_lineality_K_examples():
    L = lineality_K(NONPOS2, np.diag([0.0, -1.0]))
    assert L.dim == 2
    assert L.contains(np.array([[0.0, 1.0], [1.0, 5.0]])) and not L.contains(np.diag([1.0, 0.0]))
    assert lineality_K(NONPOS2, -np.eye(2)).dim == 3
    # at the apex of the NSD cone the tangent cone is the cone itself, which contains no line
    assert lineality_K(NONPOS2, np.zeros((2, 2))).dim == 0
    with pytest.raises(InfeasiblePoint):
        lineality_K(NONPOS2, np.eye(2))


def _lineality_oracle_check(rng, n, L, gap):
    """gap(H) vanishes exactly on the lineality space."""
    for B in L.matrices():
        assert abs(gap(B)) <= 1e-9
    for _ in range(100):
        H = random_symmetric(rng, n)
        if L.residual(H) > 1e-3:
            assert gap(H) > 1e-6


@given(seeds, st.integers(1, 4))
def test_lineality_theta_by_directional_derivatives(seed, n):
    rng = np.random.default_rng(seed)
    phi = random_pwa(rng, n, int(rng.integers(1, 4)), 0, integer=True)
    X = tied_matrix(rng, n)

    def gap(H):
        return two_sided(lambda G: theta1_dir_deriv(phi, X, G), H)

    _lineality_oracle_check(rng, n, lineality_theta1(phi, X), gap)


@given(seeds, st.integers(1, 4))
def test_lineality_K_by_directional_derivatives(seed, n):
    rng = np.random.default_rng(seed)
    phi = random_pwa(rng, n, 1, int(rng.integers(1, 3)), integer=True).faces_only()
    X = tied_matrix(rng, n)
    z = zeta_value(phi, X)
    X = X - z * np.eye(n) / max(1e-12, float(np.sum(phi.B[np.argmax(phi.B.sum(1))])))
    if abs(zeta_value(phi, X)) > 1e-9:
        return  # shifting did not land on the boundary (face sums can vanish)
    # H and -H both tangent: zeta'(X; H) <= 0 and zeta'(X; -H) <= 0, with equality on a boundary point

    def gap(H):
        return both_sides(lambda G: zeta_dir_deriv(phi, X, G), H)

    _lineality_oracle_check(rng, n, lineality_K(phi, X), gap)


# Critical cones ----------------------------------------------------------------------


def test_critical_cone_simple_top_is_everything():
    pair = pair_from_primal_dual(MAX2, np.diag([2.0, 1.0]), np.diag([1.0, 0.0]))
    cone = critical_cone(pair)
    rng = np.random.default_rng(1)
    assert all(cone.member(random_symmetric(rng, 2)) for _ in range(20))
    assert cone.affine_hull().dim == 3
    assert cone.member(np.zeros((2, 2)))


def test_critical_cone_double_top():
    pair = pair_from_primal_dual(MAX2, np.eye(2), np.diag([1.0, 0.0]))
    cone = critical_cone(pair)
    hull = cone.affine_hull()
    # members are [[rho, 0], [0, free]] with rho the largest eigenvalue
    assert cone.member(np.diag([2.0, -1.0])) and not cone.member(np.diag([-1.0, 2.0]))
    assert not cone.member(SWAP)
    assert hull.dim == 2
    assert hull.contains(np.diag([-1.0, 2.0])) and not hull.contains(SWAP)


def test_critical_cone_for_K():
    pair = pair_from_primal_dual(NONPOS2.faces_only(), np.diag([0.0, -1.0]), np.diag([1.0, 0.0]))
    cone = critical_cone(pair, "cone")
    assert cone.member(np.array([[0.0, 1.0], [1.0, 3.0]]))
    assert not cone.member(np.diag([-1.0, 0.0]))
    assert cone.affine_hull().dim == 2
    with pytest.raises(ValueError):
        critical_cone(pair, "other")


@given(pairs())
def test_cone_inside_hull_theta(args):
    rng, pair = args
    cone, hull = critical_cone(pair), critical_cone(pair).affine_hull()
    for _ in range(5):
        H = cone.sample(rng)
        assert cone.member(H) and hull.contains(H)
        assert cone.member(float(rng.uniform(0.1, 10)) * H)
        assert hull.contains(cone.sample(rng, in_hull=True))


@given(pairs(kind="cone"))
def test_cone_inside_hull_K(args):
    rng, pair = args
    cone, hull = critical_cone(pair, "cone"), critical_cone(pair, "cone").affine_hull()
    for _ in range(5):
        H = cone.sample(rng)
        assert cone.member(H) and hull.contains(H)


# Sigma terms -------------------------------------------------------------------------


def test_upsilon_hand_example():
    pair = pair_from_primal_dual(MAX2, np.diag([2.0, 1.0]), np.diag([1.0, 0.0]))
    assert upsilon(pair, SWAP) == pytest.approx(-2.0)
    assert upsilon_gap_form(pair, SWAP) == pytest.approx(-2.0)
    assert svec(SWAP) @ upsilon_matrix(pair) @ svec(SWAP) == pytest.approx(-2.0)
    assert upsilon(pair, np.diag([4.0, -1.0])) == 0
    pair0 = pair_from_sum(SymmetricPWA(np.zeros((1, 2)), [0.0]), np.diag([2.0, 1.0]))
    assert upsilon(pair0, SWAP) == 0


def test_sigma_certificate_examples():
    pair = pair_from_primal_dual(MAX2, np.diag([2.0, 1.0]), np.diag([1.0, 0.0]))
    cert = sigma_conjugate_check(pair, np.zeros((2, 2)))
    assert cert.passed and cert.upsilon == 0 and cert.candidate_value == 0
    cert = sigma_conjugate_check(pair, SWAP)
    assert cert.passed and cert.upsilon == pytest.approx(-2) and cert.candidate_value == pytest.approx(-2)
    # by hand: 2 H (X - v_l I)^+ H on each block, 2/(1-2) = -2 on the top one and 2/(2-1) = 2 below
    assert np.allclose(candidate_maximizer(pair, SWAP), np.diag([-2.0, 2.0]))
    pair_double = pair_from_primal_dual(MAX2, np.eye(2), np.diag([1.0, 0.0]))
    with pytest.raises(NotInCriticalCone):
        sigma_conjugate_check(pair_double, SWAP)


@given(pairs(max_n=5))
def test_upsilon_nonpositive_and_forms_agree(args):
    rng, pair = args
    M = upsilon_matrix(pair)
    for _ in range(5):
        H = random_symmetric(rng, pair.n)
        u = upsilon(pair, H)
        assert u <= 1e-9
        assert abs(u - upsilon_gap_form(pair, H)) <= 1e-9
        assert abs(u - svec(H) @ M @ svec(H)) <= 1e-9
        s = float(rng.uniform(0.1, 10))
        assert abs(upsilon(pair, s * H) - s * s * u) <= 1e-10 * max(1.0, abs(s * s * u))


@given(pairs(max_n=5, kind="cone"))
def test_upsilon_K_nonpositive(args):
    rng, pair = args
    for _ in range(5):
        H = random_symmetric(rng, pair.n)
        assert upsilon(pair, H) <= 1e-9


@given(pairs())
def test_upsilon_bilinear_symmetric(args):
    rng, pair = args
    H1, H2 = random_symmetric(rng, pair.n), random_symmetric(rng, pair.n)
    assert upsilon_bilinear(pair, H1, H2) == pytest.approx(upsilon_bilinear(pair, H2, H1), abs=1e-10)
    assert upsilon_bilinear(pair, H1, H1) == pytest.approx(upsilon(pair, H1), abs=1e-12)


@given(pairs(max_n=3))
def test_sigma_certificate_random(args):
    rng, pair = args
    H = critical_cone(pair).sample(rng)
    assert sigma_conjugate_check(pair, H, samples=40, seed=int(rng.integers(1000))).passed


@given(pairs(max_n=3, kind="cone"))
def test_sigma_certificate_random_K(args):
    rng, pair = args
    H = critical_cone(pair, "cone").sample(rng)
    assert sigma_conjugate_check(pair, H, kind="cone", samples=40, seed=int(rng.integers(1000))).passed
