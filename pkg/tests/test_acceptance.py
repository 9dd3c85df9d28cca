"""The eleven acceptance criteria, each printing one PASS/FAIL line."""
import time
from pathlib import Path

import numpy as np

from oracles import (brute_eval, exhaustive_prox, first_order_stable, integer_spectrum_matrix, parabolic_decreasing,
                     random_pwa)

from cmatop.cli import main
from cmatop.diagnostics import check_nondegeneracy, sample_jacobian_nonsingularity
from cmatop.instances import certified_family, degenerate_instances, separable_instance
from cmatop.kkt import (KKTPoint, assemble_W, dual_pairs, finite_difference_jacobian, rate_diagnosis, roundoff_floor,
                        semismooth_newton, strong_regularity_probe)
from cmatop.pwa import eval_phi, prox_pwa
from cmatop.serialization import dumps, load_instance
from cmatop.spectral import jacobian_element, pair_from_sum, project_K, prox_theta1, subdiff_membership
from cmatop.symmat import random_orthogonal, random_symmetric
from cmatop.varstruct import critical_cone, sigma_conjugate_check, upsilon, upsilon_gap_form

INSTANCES = Path(__file__).resolve().parent.parent / "instances"


def report(capsys, number, title, passed, detail=""):
    with capsys.disabled():
        print(f"\n[criterion {number:2d}] {'PASS' if passed else 'FAIL'}  {title}" + (f"  ({detail})" if detail else ""))


def tied_matrix(rng, n):
    lam = rng.integers(-2, 3, size=n).astype(float)
    if rng.random() < 0.5:
        lam = lam + 0.3 * rng.standard_normal(n)
    Q = random_orthogonal(rng, n)
    return Q @ np.diag(lam) @ Q.T


def test_01_prox_matches_enumeration_oracle(capsys):
    rng = np.random.default_rng(101)
    began = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 5))
        phi = random_pwa(rng, n, int(rng.integers(1, 4)), int(rng.integers(0, 3)), integer=bool(rng.random() < 0.5))
        z = rng.normal(size=n) * float(rng.uniform(0.1, 3.0))
        if rng.random() < 0.3:
            z = np.round(z)
        worst = max(worst, float(np.max(np.abs(prox_pwa(phi, z) - exhaustive_prox(phi, z)))))
    elapsed = time.perf_counter() - began
    ok = worst <= 1e-8 and elapsed <= 60
    report(capsys, 1, "prox vs enumeration oracle, 200 cases", ok, f"max error {worst:.1e}, {elapsed:.1f} s")
    assert ok


def test_02_orbit_evaluation_is_exact(capsys):
    rng = np.random.default_rng(102)
    mismatches = 0
    for _ in range(100):
        n = int(rng.integers(1, 6))
        phi = random_pwa(rng, n, int(rng.integers(1, 4)), int(rng.integers(0, 3)), integer=True)
        # multiples of 1/8 keep every dot product exact in floating point, whatever the summation order
        x = np.round(rng.normal(size=n) * 8) / 8
        mismatches += eval_phi(phi, x) != brute_eval(phi, x)
    report(capsys, 2, "orbit evaluation vs n! permutations, 100 points", mismatches == 0, f"{mismatches} mismatches")
    assert mismatches == 0


def test_03_eigenvalue_expansions(capsys):
    rng = np.random.default_rng(103)
    first = sum(first_order_stable(integer_spectrum_matrix(rng, n), random_symmetric(rng, n))
                for n in rng.integers(1, 7, size=500))
    second = 0
    for n in rng.integers(1, 7, size=200):
        X = integer_spectrum_matrix(rng, n)
        second += parabolic_decreasing(X, random_symmetric(rng, n), random_symmetric(rng, n))
    ok = first == 500 and second == 200
    report(capsys, 3, "eigenvalue first- and second-order expansions", ok,
           f"first order {first}/500, parabolic {second}/200")
    assert ok


def test_04_spectral_prox(capsys):
    rng = np.random.default_rng(104)
    worst, membership = 0.0, 0
    for _ in range(200):
        n = int(rng.integers(1, 6))
        phi = random_pwa(rng, n, int(rng.integers(1, 4)), int(rng.integers(0, 3)), integer=bool(rng.random() < 0.5))
        X = tied_matrix(rng, n)
        Q = random_orthogonal(rng, n)
        P = prox_theta1(phi, X)
        worst = max(worst, float(np.max(np.abs(prox_theta1(phi, Q @ X @ Q.T) - Q @ P @ Q.T))))
        member = subdiff_membership(phi, P, X - P)[0]
        if phi.has_faces:
            K = project_K(phi, X)
            member = member and subdiff_membership(phi, K, X - K, part="faces")[0]
        membership += bool(member)
    expansive = 0
    for _ in range(500):
        n = int(rng.integers(1, 6))
        phi = random_pwa(rng, n, int(rng.integers(1, 4)), int(rng.integers(0, 3)))
        X1, X2 = tied_matrix(rng, n), tied_matrix(rng, n)
        expansive += np.linalg.norm(prox_theta1(phi, X1) - prox_theta1(phi, X2)) > np.linalg.norm(X1 - X2) + 1e-9
    ok = worst <= 1e-9 and membership == 200 and expansive == 0
    report(capsys, 4, "spectral prox equivariance, Moreau membership, nonexpansiveness", ok,
           f"equivariance error {worst:.1e}, membership {membership}/200, {expansive}/500 expansive pairs")
    assert ok


def test_05_sigma_terms(capsys):
    rng = np.random.default_rng(105)
    largest, disagreement = -np.inf, 0.0
    for i in range(1000):
        n = int(rng.integers(1, 6))
        cone = i % 2 == 1
        phi = random_pwa(rng, n, int(rng.integers(1, 4)), int(rng.integers(1, 3)) if cone else 0, integer=True)
        pair = pair_from_sum(phi.faces_only() if cone else phi, tied_matrix(rng, n))
        H = random_symmetric(rng, n)
        u = upsilon(pair, H)
        largest = max(largest, u)
        if not cone:
            disagreement = max(disagreement, abs(u - upsilon_gap_form(pair, H)))
    certified = 0
    for i in range(50):
        n = int(rng.integers(1, 4))
        kind = "cone" if i % 2 else "theta"
        phi = random_pwa(rng, n, int(rng.integers(1, 4)), int(rng.integers(1, 3)) if kind == "cone" else 0,
                         integer=True)
        pair = pair_from_sum(phi.faces_only() if kind == "cone" else phi, tied_matrix(rng, n))
        H = critical_cone(pair, kind).sample(rng)
        certified += sigma_conjugate_check(pair, H, kind=kind, samples=200, seed=i).passed
    ok = largest <= 1e-9 and disagreement <= 1e-9 and certified == 50
    report(capsys, 5, "sigma terms nonpositive, forms agree, conjugate certificates", ok,
           f"max {largest:.1e}, form gap {disagreement:.1e}, certificates {certified}/50")
    assert ok


def test_06_fixed_point_inequality(capsys):
    rng = np.random.default_rng(106)
    worst = np.inf
    for b in certified_family(20):
        pair, _ = dual_pairs(b.problem, b.solution)
        for k in range(500):
            # (dX, dY) = (J H, H - J H) is a tangent pair of the prox fixed-point set
            J = jacobian_element(pair, "directional" if k % 5 else "affine-hull", seed=k)
            H = random_symmetric(rng, pair.n)
            dX = J.apply(H)
            dY = H - dX
            worst = min(worst, float(np.sum(dX * dY) + upsilon(pair, dX)))
    ok = worst >= -1e-8
    report(capsys, 6, "fixed-point inequality, 500 pairs x 20 instances", ok, f"min slack {worst:.1e}")
    assert ok


def test_07_jacobian_matches_finite_differences(capsys):
    rng = np.random.default_rng(107)
    worst = 0.0
    family = certified_family()
    for i in range(100):
        b = family[i % len(family)]
        u = b.solution.to_vector(b.problem) + 1e-2 * rng.standard_normal(b.problem.dim)
        pt = KKTPoint.from_vector(b.problem, u)
        W = assemble_W(b.problem, pt)
        worst = max(worst, float(np.linalg.norm(W - finite_difference_jacobian(b.problem, pt)) / np.linalg.norm(W)))
    ok = worst <= 1e-5
    report(capsys, 7, "assembled W vs finite differences, 100 points", ok, f"max relative error {worst:.1e}")
    assert ok


def test_08_newton_convergence(capsys):
    sep = separable_instance()
    rep = semismooth_newton(sep.problem, sep.start)
    separable_ok = rep.converged and rep.final_residual <= 1e-11 and rep.iterations <= 6 and rep.rate >= 1.7
    fast, causes = 0, []
    for b in certified_family():
        r = semismooth_newton(b.problem, b.start)
        if r.converged and r.rate is not None and r.rate >= 1.7:
            fast += 1
        else:
            floor = roundoff_floor(r.point.to_vector(b.problem))
            causes.append(f"{b.problem.name}: rate {r.rate:.2f}, {rate_diagnosis(r.residuals, floor)}")
    ok = separable_ok and fast >= 28 and all(causes)
    report(capsys, 8, "Newton convergence", ok,
           f"separable {rep.iterations} iterations, rate {rep.rate}; family {fast}/30"
           + "".join(f"; {c}" for c in causes))
    assert ok


def test_09_regularity_chain_on_certified_family(capsys):
    singular, unstable = 0, []
    for i, b in enumerate(certified_family()):
        table, _ = sample_jacobian_nonsingularity(b.problem, b.solution, 50, seed=900 + 50 * i)
        singular += sum(not s.nonsingular for s in table)
        probe = strong_regularity_probe(b.problem, b.solution, radius=1e-3, samples=5, seed=i)
        if not probe.stable or probe.not_locally_unique or probe.failures:
            unstable.append(f"{b.problem.name} factor {probe.stability:.2f}")
    ok = singular == 0 and not unstable
    report(capsys, 9, "nonsingular Jacobian samples and stable probe ratios, 30 instances", ok,
           f"{singular} singular samples; probe radii 1e-3, 5e-4, 2.5e-4: "
           + (", ".join(unstable) if unstable else "all stable within factor 2"))
    assert ok


def test_10_degenerate_controls(capsys):
    flagged = 0
    for b in degenerate_instances():
        nondegenerate = check_nondegeneracy(b.problem, b.solution).holds
        _, all_nonsingular = sample_jacobian_nonsingularity(b.problem, b.solution, 10, seed=0)
        flagged += (not nondegenerate) and all_nonsingular is False
    ok = flagged == 5
    report(capsys, 10, "degenerate controls flagged", ok, f"{flagged}/5")
    assert ok


def test_11_cli_round_trip_and_exit_codes(capsys, tmp_path):
    shipped = sorted(INSTANCES.glob("*.json"))
    identical = sum(dumps(load_instance(p).to_json()) == p.read_text() for p in shipped)
    commands = {
        0: ["solve", INSTANCES / "separable.json"],
        1: ["solve", tmp_path / "missing.json"],
        2: ["solve", INSTANCES / "certified-1000.json", "--max-iter", "1"],
        3: ["solve", INSTANCES / "repeated-top.json"],
        4: ["verify", "--seed", "1", "--filter", "pwa", "--inject-failure", "any"],
    }
    codes = {}
    for expected, argv in commands.items():
        codes[expected] = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    ok = identical == len(shipped) > 0 and all(k == v for k, v in codes.items()) and "Traceback" not in err
    report(capsys, 11, "CLI round trip and exit codes", ok,
           f"{identical}/{len(shipped)} instances identical, exit codes {sorted(codes.values())}")
    assert ok
