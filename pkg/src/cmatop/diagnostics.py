"""Numerical checks of constraint nondegeneracy, SSOSC, Jacobian nonsingularity, Robinson's CQ and quadratic growth."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CMatOpError,
    NotAKKTPoint,
    ProjectionFailure,
    RequiresNondegeneracy,
    SingularJacobian,
    WrongProblemClass,
)
from .kkt import (
    KKTPoint,
    NewtonOptions,
    ProblemInstance,
    Selection,
    assemble_W,
    dual_pairs,
    kkt_residual,
    strong_regularity_probe,
)
from .pwa import SymmetricPWA
from .varstruct import critical_cone, lineality_K, lineality_theta1, nullspace_basis, upsilon_matrix

KKT_TOL = 1e-8
ND_RTOL = 1e-8
SSOSC_RTOL = 1e-8
SAMPLE_RTOL = 1e-10


def _require_kkt(prob: ProblemInstance, pt: KKTPoint) -> None:
    res = float(np.linalg.norm(kkt_residual(prob, pt)))
    scale = max(1.0, float(np.linalg.norm(pt.to_vector(prob))))
    if res > KKT_TOL * scale:
        raise NotAKKTPoint(f"KKT residual {res:.3e} exceeds {KKT_TOL * scale:.1e}")


def _complement_basis(basis: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of span(basis)."""
    dim = basis.shape[0]
    return nullspace_basis(basis.T, dim) if basis.shape[1] else np.eye(dim)


def _min_singular(M: np.ndarray) -> float:
    if M.shape[0] == 0:
        return float("inf")
    if M.shape[0] > M.shape[1]:
        return 0.0
    return float(np.linalg.svd(M, compute_uv=False)[-1])


@dataclass(frozen=True)
class Margin:
    holds: bool
    margin: float
    detail: str = ""


def nondegeneracy_map(prob: ProblemInstance, pt: KKTPoint) -> np.ndarray:
    """d -> (h'd, component of g1'd normal to the lineality space, same for g2)."""
    rows = []
    if prob.h is not None:
        rows.append(prob.h.jacobian(pt.x))
    if prob.g1 is not None:
        lin = lineality_theta1(prob.theta_phi, prob.g1.value(pt.x))
        rows.append(_complement_basis(lin.basis).T @ prob.g1.jacobian(pt.x))
    if prob.g2 is not None:
        lin = lineality_K(prob.cone_phi, prob.g2.value(pt.x))
        rows.append(_complement_basis(lin.basis).T @ prob.g2.jacobian(pt.x))
    return np.vstack(rows) if rows else np.zeros((0, prob.m))


def check_nondegeneracy(prob: ProblemInstance, pt: KKTPoint) -> Margin:
    """Surjectivity of the constraint map onto the quotient by the lineality spaces."""
    _require_kkt(prob, pt)
    M = nondegeneracy_map(prob, pt)
    margin = _min_singular(M)
    scale = max(1.0, float(np.linalg.norm(M, 2))) if M.size else 1.0
    return Margin(margin > ND_RTOL * scale, margin, f"{M.shape[0]} conditions on {M.shape[1]} variables")


def app_basis(prob: ProblemInstance, pt: KKTPoint) -> np.ndarray:
    """Orthonormal basis of {d : h'd = 0, g1'd and g2'd in the affine hulls of the critical cones}."""
    p1, p2 = dual_pairs(prob, pt)
    rows = []
    if prob.h is not None:
        rows.append(prob.h.jacobian(pt.x))
    for pair, g, kind in ((p1, prob.g1, "theta"), (p2, prob.g2, "cone")):
        if g is None:
            continue
        hull = critical_cone(pair, kind).affine_hull().basis
        J = g.jacobian(pt.x)
        rows.append(J - hull @ (hull.T @ J))
    return nullspace_basis(np.vstack(rows), prob.m) if rows else np.eye(prob.m)


def reduced_second_order_form(prob: ProblemInstance, pt: KKTPoint) -> tuple[np.ndarray, np.ndarray]:
    """(basis Z of app, Z'(L_xx - sigma terms)Z)."""
    Z = app_basis(prob, pt)
    p1, p2 = dual_pairs(prob, pt)
    form = prob.hessian_lagrangian(pt).copy()
    for pair, g in ((p1, prob.g1), (p2, prob.g2)):
        if g is not None:
            J = g.jacobian(pt.x)
            form -= J.T @ upsilon_matrix(pair) @ J
    return Z, Z.T @ form @ Z


def check_ssosc(prob: ProblemInstance, pt: KKTPoint) -> Margin:
    """Positivity of the reduced form; only under nondegeneracy, where the multiplier is unique."""
    nd = check_nondegeneracy(prob, pt)
    if not nd.holds:
        raise RequiresNondegeneracy("SSOSC is only checked when the multiplier set is a singleton")
    Z, R = reduced_second_order_form(prob, pt)
    if Z.shape[1] == 0:
        return Margin(True, float("inf"), "app set is {0}")
    lo = float(np.linalg.eigvalsh(0.5 * (R + R.T))[0])
    scale = max(1.0, float(np.linalg.norm(prob.hessian_lagrangian(pt), 2)))
    return Margin(lo > SSOSC_RTOL * scale, lo, f"app dimension {Z.shape[1]}")


@dataclass(frozen=True)
class JacobianSample:
    selection: str
    sigma_min: float
    sigma_max: float

    @property
    def nonsingular(self) -> bool:
        return self.sigma_min > SAMPLE_RTOL * self.sigma_max


def sample_jacobian_nonsingularity(prob: ProblemInstance, pt: KKTPoint, count: int, seed: int
                                   ) -> tuple[list[JacobianSample], bool | None]:
    """count directional elements with independent seeds plus the affine-hull element."""
    _require_kkt(prob, pt)
    if count <= 0:
        return [], None
    table = []
    selections = [(f"directional seed={seed + i}", Selection("directional", seed + i)) for i in range(count)]
    selections.append(("affine-hull", Selection("affine-hull")))
    for label, sel in selections:
        try:
            W = assemble_W(prob, pt, sel)
        except CMatOpError as exc:
            table.append(JacobianSample(f"{label} ({type(exc).__name__})", float("nan"), float("nan")))
            continue
        s = np.linalg.svd(W, compute_uv=False)
        table.append(JacobianSample(label, float(s[-1]), float(s[0])))
    valid = [t for t in table if np.isfinite(t.sigma_min)]
    return table, bool(valid) and all(t.nonsingular for t in valid)


def check_robinson_cq(prob: ProblemInstance, pt: KKTPoint) -> Margin:
    """h'(x) onto; only for problems without a g2 block."""
    if prob.g2 is not None:
        raise WrongProblemClass("Robinson's CQ check covers problems without a domain constraint block")
    if prob.h is None:
        return Margin(True, float("inf"), "no equality constraints")
    J = prob.h.jacobian(pt.x)
    margin = _min_singular(J)
    return Margin(margin > ND_RTOL * max(1.0, float(np.linalg.norm(J, 2))), margin)


@dataclass(frozen=True)
class GrowthProbe:
    radii: list[float]
    rho: list[float]
    stability: float
    noisy: bool
    failures: list[str]


def _project_onto_h(prob: ProblemInstance, x: np.ndarray, max_iter: int = 20) -> np.ndarray:
    """Gauss-Newton projection onto {h = 0}."""
    if prob.h is None:
        return x
    for _ in range(max_iter):
        r = prob.h.value(x)
        if np.linalg.norm(r) <= 1e-13 * max(1.0, np.linalg.norm(x)):
            return x
        J = prob.h.jacobian(x)
        x = x - np.linalg.lstsq(J, r, rcond=None)[0]
    if np.linalg.norm(prob.h.value(x)) > 1e-10 * max(1.0, np.linalg.norm(x)):
        raise ProjectionFailure("could not reach h(x) = 0")
    return x


def quadratic_growth_probe(prob: ProblemInstance, pt: KKTPoint, radius: float = 1e-2, samples: int = 50,
                           seed: int = 0) -> GrowthProbe:
    """Largest rho with objective(x) - objective(xbar) >= rho |x - xbar|^2 over sampled feasible x."""
    if prob.g2 is not None:
        raise WrongProblemClass("the growth probe covers problems without a domain constraint block")
    _require_kkt(prob, pt)
    rng = np.random.default_rng(seed)
    base = prob.objective(pt.x)
    radii = [radius, radius / 2, radius / 4]
    dirs = rng.standard_normal((samples, prob.m))
    rho, failures = [], []
    for r in radii:
        best = float("inf")
        for i, d in enumerate(dirs):
            try:
                x = _project_onto_h(prob, pt.x + r * d / np.linalg.norm(d))
            except ProjectionFailure as exc:
                failures.append(f"sample {i} radius {r:.1e}: {exc}")
                continue
            dist = float(np.linalg.norm(x - pt.x))
            if dist <= 1e-3 * r:
                continue
            best = min(best, (prob.objective(x) - base) / dist**2)
        rho.append(best)
    finite = [v for v in rho if np.isfinite(v)]
    if finite and min(finite) > 0:
        stability = max(finite) / min(finite)
    else:
        stability = float("inf")
    return GrowthProbe(radii, rho, stability, radius < 1e-8, failures)


def is_largest_eigenvalue_problem(prob: ProblemInstance) -> bool:
    ref = SymmetricPWA.max_entry(prob.n)
    phi = prob.phi
    return (prob.g2 is None and not phi.has_faces and phi.A.shape == ref.A.shape
            and np.array_equal(phi.A, ref.A) and np.array_equal(phi.c, ref.c))


@dataclass
class RegularityReport:
    nondegenerate: Margin
    multiplier_unique: bool
    ssosc: Margin | None
    ssosc_note: str
    jacobian_samples: list[JacobianSample]
    all_sampled_nonsingular: bool | None
    robinson_cq: Margin | None
    growth: GrowthProbe | None
    strong_regularity: object | None = None
    verdicts: list[str] = field(default_factory=list)

    def render(self) -> str:
        lines = [f"nondegenerate: {str(self.nondegenerate.holds).lower()} (margin {self.nondegenerate.margin:.6e})",
                 f"multiplier unique: {str(self.multiplier_unique).lower()}"]
        if self.ssosc is None:
            lines.append(f"ssosc: not checked ({self.ssosc_note})")
        else:
            lines.append(f"ssosc: {str(self.ssosc.holds).lower()} (min eigenvalue {self.ssosc.margin:.6e})")
        lines.append(f"jacobian samples: {len(self.jacobian_samples)}")
        for s in self.jacobian_samples:
            lines.append(f"  {s.selection}: sigma_min {s.sigma_min:.6e}, sigma_max {s.sigma_max:.6e}")
        if self.robinson_cq is not None:
            lines.append(f"robinson cq: {str(self.robinson_cq.holds).lower()} (margin {self.robinson_cq.margin:.6e})")
        if self.growth is not None:
            rho = ", ".join(f"{r:.1e}: {v:.6e}" for r, v in zip(self.growth.radii, self.growth.rho))
            lines.append(f"quadratic growth rho per radius: {rho}")
        if self.strong_regularity is not None:
            sr = self.strong_regularity
            lines.append("strong regularity ratios: " + ", ".join(
                f"{r:.1e}: {v:.6e}" for r, v in zip(sr.radii, sr.max_ratio)))
        lines += self.verdicts
        return "\n".join(lines)


def _pass(flag: bool) -> str:
    return "PASS" if flag else "FAIL"


def diagnose(prob: ProblemInstance, pt: KKTPoint, *, samples: int = 10, seed: int = 0, radius: float = 1e-2,
             probe_radius: float | None = None, probe_samples: int = 5) -> RegularityReport:
    """Full regularity report. Verdicts only assert the one-directional chain, plus the equivalence
    for largest-eigenvalue problems."""
    nd = check_nondegeneracy(prob, pt)
    ssosc, note = None, ""
    try:
        ssosc = check_ssosc(prob, pt)
    except RequiresNondegeneracy as exc:
        note = str(exc)
    table, all_ok = sample_jacobian_nonsingularity(prob, pt, samples, seed)
    cq = growth = None
    if prob.g2 is None:
        cq = check_robinson_cq(prob, pt)
        growth = quadratic_growth_probe(prob, pt, radius, max(samples, 1) * 5, seed)
    probe = None
    if probe_radius is not None:
        probe = strong_regularity_probe(prob, pt, probe_radius, probe_samples, seed, NewtonOptions())
    condition_i = nd.holds and ssosc is not None and ssosc.holds
    verdicts = [f"(i) nondegeneracy and SSOSC: {_pass(condition_i)}"]
    if condition_i and all_ok is not None:
        verdicts.append(f"(i)⇒(ii) observed: {_pass(all_ok)}")
    elif all_ok is None:
        verdicts.append("(i)⇒(ii) observed: no samples")
    else:
        verdicts.append("(i)⇒(ii) observed: not applicable, (i) fails")
    if probe is not None and condition_i:
        verdicts.append(f"(i)⇒(iii) observed: {_pass(probe.stable and not probe.not_locally_unique)}")
    if is_largest_eigenvalue_problem(prob) and all_ok is not None:
        agree = condition_i == all_ok
        verdicts.append(f"largest-eigenvalue equivalence observed: {_pass(agree)}")
    return RegularityReport(nd, nd.holds, ssosc, note, table, all_ok, cq, growth, probe, verdicts)


def newton_failure_cause(exc: CMatOpError) -> str:
    if isinstance(exc, SingularJacobian):
        return f"singular Jacobian element (sigma_min {exc.sigma_min:.3e})"
    return type(exc).__name__
