"""Seeded self-check suite behind `cmatop verify`: a quick pass over the library's invariants."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .diagnostics import check_nondegeneracy, check_ssosc, sample_jacobian_nonsingularity
from .eigcalc import eig_dir_deriv
from .instances import certified_lambda1_instance, separable_instance
from .kkt import KKTPoint, assemble_W, finite_difference_jacobian, semismooth_newton
from .pwa import SymmetricPWA, eval_phi, prox_pwa, subgradient_gap
from .serialization import InstanceDocument, dumps, loads
from .spectral import pair_from_sum, prox_theta1, subdiff_membership
from .symmat import eig_decompose, random_orthogonal, random_symmetric, smat, svec
from .varstruct import critical_cone, upsilon, upsilon_gap_form


@dataclass(frozen=True)
class PropertyResult:
    module: str
    name: str
    passed: bool
    detail: str


def _random_phi(rng, n):
    A = rng.integers(-2, 3, size=(2, n)).astype(float)
    c = rng.normal(size=2).round(3)
    B = rng.integers(-2, 3, size=(1, n)).astype(float)
    d = rng.uniform(0.5, 2.0, size=1).round(3)
    return SymmetricPWA(A, c, B, d)


def svec_isometry(rng):
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 6))
        X, Y = random_symmetric(rng, n), random_symmetric(rng, n)
        worst = max(worst, abs(svec(X) @ svec(Y) - np.sum(X * Y)), float(np.max(np.abs(smat(svec(X), n) - X))))
    return worst <= 1e-12, f"max error {worst:.2e}"


def eig_reconstruction(rng):
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 7))
        X = random_symmetric(rng, n)
        E, _ = eig_decompose(X)
        worst = max(worst, float(np.max(np.abs(E.reconstruct() - X))))
    return worst <= 1e-10, f"max error {worst:.2e}"


def eig_first_order(rng):
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(2, 6))
        lam = np.sort(rng.integers(-2, 3, size=n).astype(float))[::-1]
        Q = random_orthogonal(rng, n)
        X = (Q * lam) @ Q.T
        H = random_symmetric(rng, n)
        E, P = eig_decompose(X)
        t = 1e-5
        lin = np.linalg.eigvalsh(X)[::-1] + t * eig_dir_deriv(E, P, H)
        worst = max(worst, float(np.max(np.abs(np.linalg.eigvalsh(X + t * H)[::-1] - lin))) / t**2)
    return worst <= 1e3, f"max remainder ratio {worst:.2e}"


def phi_orbit_evaluation(rng):
    for _ in range(10):
        n = int(rng.integers(1, 5))
        phi = _random_phi(rng, n)
        x = rng.normal(size=n) * 0.3
        brute = max(float(a[list(p)] @ x - c) for a, c in zip(phi.A, phi.c) for p in itertools.permutations(range(n)))
        inside = all(float(b[list(p)] @ x - d) <= 1e-12 for b, d in zip(phi.B, phi.d)
                     for p in itertools.permutations(range(n)))
        val = eval_phi(phi, x)
        if (inside and abs(val - brute) > 1e-12) or (not inside and np.isfinite(val)):
            return False, f"mismatch at n={n}"
    return True, "10 points"


def prox_optimality(rng):
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 5))
        phi = _random_phi(rng, n)
        z = rng.normal(size=n) * 2
        w = prox_pwa(phi, z)
        worst = max(worst, subgradient_gap(phi, w, z - w))
    return worst <= 1e-7, f"max subgradient gap {worst:.2e}"


def prox_nonexpansive(rng):
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 5))
        phi = _random_phi(rng, n)
        z1, z2 = rng.normal(size=n) * 2, rng.normal(size=n) * 2
        gap = np.linalg.norm(prox_pwa(phi, z1) - prox_pwa(phi, z2)) - np.linalg.norm(z1 - z2)
        worst = max(worst, float(gap))
    return worst <= 1e-9, f"max excess {worst:.2e}"


def spectral_equivariance(rng):
    phi = SymmetricPWA.max_entry(3)
    worst = 0.0
    for _ in range(10):
        X = random_symmetric(rng, 3)
        Q = random_orthogonal(rng, 3)
        worst = max(worst, float(np.max(np.abs(prox_theta1(phi, Q @ X @ Q.T) - Q @ prox_theta1(phi, X) @ Q.T))))
    return worst <= 1e-9, f"max error {worst:.2e}"


def spectral_moreau(rng):
    phi = SymmetricPWA.max_entry(3)
    for _ in range(10):
        X = random_symmetric(rng, 3)
        P = prox_theta1(phi, X)
        if not subdiff_membership(phi, P, X - P)[0]:
            return False, "membership failed"
    return True, "10 matrices"


def sigma_terms(rng):
    phi = SymmetricPWA.max_entry(3)
    worst_sign, worst_gap = -np.inf, 0.0
    for _ in range(20):
        pair = pair_from_sum(phi, random_symmetric(rng, 3))
        H = random_symmetric(rng, 3)
        a, b = upsilon(pair, H), upsilon_gap_form(pair, H)
        worst_sign, worst_gap = max(worst_sign, a), max(worst_gap, abs(a - b))
    return worst_sign <= 1e-9 and worst_gap <= 1e-9, f"max value {worst_sign:.2e}, form gap {worst_gap:.2e}"


def cone_in_hull(rng):
    phi = SymmetricPWA.max_entry(3)
    for _ in range(5):
        Q = random_orthogonal(rng, 3)
        pair = pair_from_sum(phi, Q @ np.diag([1.6, 1.4, -1.0]) @ Q.T)
        cone = critical_cone(pair)
        hull = cone.affine_hull()
        for _ in range(5):
            H = cone.sample(rng)
            if not (cone.member(H) and hull.contains(H)):
                return False, "sampled cone element outside the hull"
    return True, "25 directions"


def newton_separable(rng):
    b = separable_instance()
    rep = semismooth_newton(b.problem, b.start)
    ok = rep.converged and rep.iterations <= 6 and np.allclose(rep.point.x, [2.0, 1.0], atol=1e-10)
    return ok, f"{rep.iterations} iterations, residual {rep.final_residual:.1e}"


def jacobian_vs_differences(rng):
    b = certified_lambda1_instance(int(rng.integers(0, 10_000)))
    u = b.solution.to_vector(b.problem) + 1e-3 * rng.normal(size=b.problem.dim)
    pt = KKTPoint.from_vector(b.problem, u)
    W = assemble_W(b.problem, pt)
    err = np.linalg.norm(W - finite_difference_jacobian(b.problem, pt)) / np.linalg.norm(W)
    return err <= 1e-5, f"relative error {err:.2e}"


def certified_chain(rng):
    b = certified_lambda1_instance(int(rng.integers(0, 10_000)))
    nd = check_nondegeneracy(b.problem, b.solution)
    ss = check_ssosc(b.problem, b.solution)
    _, ok = sample_jacobian_nonsingularity(b.problem, b.solution, 5, int(rng.integers(0, 1000)))
    return nd.holds and ss.holds and bool(ok), f"margins {nd.margin:.2e}, {ss.margin:.2e}"


def instance_round_trip(rng):
    for b in (separable_instance(), certified_lambda1_instance(int(rng.integers(0, 10_000)))):
        text = dumps(InstanceDocument(b.problem, b.tag, b.start, b.solution).to_json())
        again = dumps(InstanceDocument.from_json(loads(text)).to_json())
        if again != text:
            return False, f"{b.problem.name} changed on round trip"
    return True, "2 instances"


PROPERTIES: list[tuple[str, str, Callable]] = [
    ("symmat", "svec isometry", svec_isometry),
    ("symmat", "eigendecomposition reconstruction", eig_reconstruction),
    ("eigcalc", "first-order eigenvalue expansion", eig_first_order),
    ("pwa", "orbit evaluation matches permutations", phi_orbit_evaluation),
    ("pwa", "prox optimality certificate", prox_optimality),
    ("pwa", "prox nonexpansive", prox_nonexpansive),
    ("spectral", "prox orthogonal equivariance", spectral_equivariance),
    ("spectral", "Moreau membership", spectral_moreau),
    ("varstruct", "sigma term sign and forms", sigma_terms),
    ("varstruct", "critical cone inside affine hull", cone_in_hull),
    ("kkt", "Newton on the separable instance", newton_separable),
    ("kkt", "Jacobian matches differences", jacobian_vs_differences),
    ("diagnostics", "certified instance passes", certified_chain),
    ("serialization", "instance round trip", instance_round_trip),
]


def run_suite(seed: int, module_filter: str | None = None, inject_failure: str | None = None) -> list[PropertyResult]:
    """Each property gets its own generator derived from the seed, so filtering does not shift the streams."""
    results = []
    for idx, (module, name, fn) in enumerate(PROPERTIES):
        if module_filter and module_filter not in module:
            continue
        rng = np.random.default_rng([seed, idx])
        try:
            passed, detail = fn(rng)
        except Exception as exc:  # a crashing property is a failing property
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        if inject_failure and inject_failure in (module, name, "any"):
            passed, detail = False, "failure injected"
        results.append(PropertyResult(module, name, bool(passed), detail))
    return results
