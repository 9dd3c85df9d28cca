import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmatop.errors import DimensionMismatch, MaxIterations, SingularJacobian
from cmatop.instances import (certified_lambda1_instance, degenerate_instances, nsd_constrained_instance,
                              separable_instance, sigma_curvature_instance)
from cmatop.kkt import (AffineMatrixMap, KKTPoint, NewtonOptions, ProblemInstance, QuadraticFunction, Selection,
                        assemble_W, finite_difference_jacobian, kkt_residual, rate_diagnosis, rate_estimate,
                        satisfies_kkt, semismooth_newton, strong_regularity_probe)
from cmatop.pwa import SymmetricPWA
from cmatop.spectral import prox_theta1


def test_separable_solution_by_prox_identity():
    b = separable_instance()
    # x* = Pr_max(3, 1) = (2, 1) and Y = Diag(z - x*) = Diag(1, 0)
    x = np.diag(prox_theta1(SymmetricPWA.max_entry(2), np.diag([3.0, 1.0])))
    assert np.allclose(x, [2, 1]) and np.allclose(b.solution.x, x)
    assert np.linalg.norm(kkt_residual(b.problem, b.solution)) <= 1e-10
    far = KKTPoint.zeros(b.problem, [10.0, -4.0])
    assert np.linalg.norm(kkt_residual(b.problem, far)) > 0


def test_residual_without_cone_block():
    b = separable_instance()
    assert b.problem.g2 is None
    assert kkt_residual(b.problem, b.solution).size == b.problem.m + 3
    assert np.all(KKTPoint.from_vector(b.problem, b.solution.to_vector(b.problem)).Z == 0)


def test_problem_validation():
    f = QuadraticFunction(np.eye(2), np.zeros(2))
    g = AffineMatrixMap(np.zeros((2, 2)), (np.eye(2), np.eye(2)))
    with pytest.raises(DimensionMismatch):
        ProblemInstance(f, SymmetricPWA.nonpositive_max(2), g1=g)
    with pytest.raises(DimensionMismatch):
        ProblemInstance(f, SymmetricPWA.max_entry(3), g1=g)
    with pytest.raises(DimensionMismatch):
        KKTPoint.from_vector(ProblemInstance(f, SymmetricPWA.max_entry(2), g1=g), np.zeros(3))


def test_W_structure_for_affine_data():
    b = certified_lambda1_instance(1001)
    p = b.problem
    W0 = assemble_W(p, b.solution)
    W1 = assemble_W(p, b.start)
    m = p.m
    assert np.allclose(W0[:m, :m], p.f.Q) and np.allclose(W1[:m, :m], p.f.Q)
    assert np.allclose(W0 @ np.zeros(p.dim), 0)


@settings(max_examples=25)
@given(st.integers(0, 10_000))
def test_W_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    b = certified_lambda1_instance(seed)
    u = b.solution.to_vector(b.problem) + 1e-2 * rng.standard_normal(b.problem.dim)
    pt = KKTPoint.from_vector(b.problem, u)
    W = assemble_W(b.problem, pt)
    FD = finite_difference_jacobian(b.problem, pt)
    assert np.linalg.norm(W - FD) <= 1e-5 * np.linalg.norm(W)


def test_W_matches_finite_differences_with_cone_block():
    b = nsd_constrained_instance()
    rng = np.random.default_rng(0)
    u = b.solution.to_vector(b.problem) + 1e-2 * rng.standard_normal(b.problem.dim)
    pt = KKTPoint.from_vector(b.problem, u)
    W, FD = assemble_W(b.problem, pt), finite_difference_jacobian(b.problem, pt)
    assert np.linalg.norm(W - FD) <= 1e-5 * np.linalg.norm(W)


def test_newton_separable():
    b = separable_instance()
    rep = semismooth_newton(b.problem, b.start)
    assert rep.converged and rep.final_residual <= 1e-11 and rep.iterations <= 6
    assert np.allclose(rep.point.x, [2, 1])
    assert rep.rate >= 1.7


def test_newton_from_solution_takes_no_steps():
    b = separable_instance()
    rep = semismooth_newton(b.problem, b.solution)
    assert rep.converged and rep.iterations == 0


def test_newton_reports_singular_jacobian():
    b = degenerate_instances()[0]
    with pytest.raises(SingularJacobian) as info:
        semismooth_newton(b.problem, b.start)
    assert info.value.report.status == "singular"


def test_newton_iteration_limit():
    b = certified_lambda1_instance(1000)
    with pytest.raises(MaxIterations) as info:
        semismooth_newton(b.problem, b.start, NewtonOptions(max_iter=1))
    assert info.value.report.iterations == 1


def test_newton_damped_mode_converges():
    b = certified_lambda1_instance(1002, start_scale=1.0)
    rep = semismooth_newton(b.problem, b.start, NewtonOptions(damped=True))
    assert rep.converged and satisfies_kkt(b.problem, rep.point)


def test_newton_with_cone_block():
    b = nsd_constrained_instance()
    rep = semismooth_newton(b.problem, b.start)
    assert rep.converged and np.allclose(rep.point.x, [0, -2]) and np.allclose(rep.point.Z, np.diag([1.0, 0.0]))


def test_reports_are_deterministic():
    b = certified_lambda1_instance(1003)
    r1 = semismooth_newton(b.problem, b.start, NewtonOptions(selection=Selection(seed=5)))
    r2 = semismooth_newton(b.problem, b.start, NewtonOptions(selection=Selection(seed=5)))
    assert r1.residuals == r2.residuals and np.array_equal(r1.point.x, r2.point.x)
    p1 = strong_regularity_probe(b.problem, r1.point, samples=3, seed=2)
    p2 = strong_regularity_probe(b.problem, r1.point, samples=3, seed=2)
    assert p1.ratios == p2.ratios


@pytest.mark.parametrize("seed", range(1000, 1010))
def test_residual_and_membership_agree(seed):
    b = certified_lambda1_instance(seed)
    rep = semismooth_newton(b.problem, b.start)
    assert satisfies_kkt(b.problem, rep.point)
    assert not satisfies_kkt(b.problem, b.start)
    assert np.linalg.norm(kkt_residual(b.problem, b.start)) > 1e-11


def test_rate_estimate_synthetic():
    assert rate_estimate([1e-1, 1e-2, 1e-4, 1e-8]) == pytest.approx(2.0)
    assert rate_estimate([1e-1, 1e-2, 1e-3, 1e-4]) == pytest.approx(1.0)
    assert rate_estimate([1.0, 0.0]) == float("inf")
    assert rate_estimate([1.0]) is None
    # the last pair starts below sqrt(floor), so it is ignored
    assert rate_estimate([1e-1, 1e-2, 1e-4, 1e-8, 1e-15], floor=1e-15) == pytest.approx(2.0)
    assert "pre-asymptotic" in rate_diagnosis([1.0, 1e-1, 1e-3, 1e-4])


def test_probe_separable_and_zero_perturbation():
    b = separable_instance()
    rep = strong_regularity_probe(b.problem, b.solution, samples=5)
    assert rep.stable and not rep.not_locally_unique and not rep.failures
    assert all(np.isfinite(rep.max_ratio))
    sol = semismooth_newton(b.problem, b.solution, delta=np.zeros(b.problem.dim))
    assert sol.iterations == 0 and np.array_equal(sol.point.x, b.solution.x)


def test_probe_flags_degenerate_instance():
    b = degenerate_instances()[0]
    rep = strong_regularity_probe(b.problem, b.solution, samples=3)
    assert not rep.stable and rep.failures


def test_sigma_curvature_instance_converges_quadratically():
    b = sigma_curvature_instance()
    rep = semismooth_newton(b.problem, b.start)
    assert rep.converged and rep.rate >= 1.7
