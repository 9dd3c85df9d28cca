"""KKT residual of the composite matrix problem, its generalized Jacobian and a semismooth Newton solver.

The problem is

    minimize f(x) + theta1(g1(x))  subject to  h(x) = 0,  g2(x) in K,

where theta1 = phi1 o lambda and K = {X : lambda(X) in dom phi}. Unknowns are stacked as
u = [x, y, svec(Y), svec(Z)]; the blocks for g1/Y and g2/Z are present only when the
problem has them.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionMismatch, MaxIterations, SingularJacobian
from .pwa import SymmetricPWA
from .spectral import (
    jacobian_element,
    pair_from_primal_dual,
    pair_from_sum,
    spectral_prox,
    subdiff_membership,
    theta_value,
)
from .symmat import as_symmetric, smat, svec, svec_dim

SINGULAR_RTOL = 1e-12


# Problem data ------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadraticFunction:
    """f(x) = 1/2 x'Qx + q'x + const."""

    Q: np.ndarray
    q: np.ndarray
    const: float = 0.0

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        q = np.asarray(self.q, dtype=float).reshape(-1)
        if Q.shape != (q.size, q.size):
            raise DimensionMismatch(f"Q has shape {Q.shape} but q has length {q.size}")
        object.__setattr__(self, "Q", 0.5 * (Q + Q.T))
        object.__setattr__(self, "q", q)

    @property
    def dim(self) -> int:
        return self.q.size

    def value(self, x) -> float:
        return float(0.5 * x @ self.Q @ x + self.q @ x + self.const)

    def gradient(self, x) -> np.ndarray:
        return self.Q @ x + self.q

    def hessian(self, x) -> np.ndarray:
        return self.Q


@dataclass(frozen=True)
class AffineVectorMap:
    """h(x) = M x + c."""

    M: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(-1)
        M = np.asarray(self.M, dtype=float).reshape(c.size, -1)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "c", c)

    @property
    def out_dim(self) -> int:
        return self.c.size

    def value(self, x) -> np.ndarray:
        return self.M @ x + self.c

    def jacobian(self, x) -> np.ndarray:
        return self.M

    def hessian_contraction(self, x, y) -> np.ndarray:
        return np.zeros((self.M.shape[1], self.M.shape[1]))


@dataclass(frozen=True)
class AffineMatrixMap:
    """g(x) = A0 + sum_i x_i A_i."""

    A0: np.ndarray
    coeffs: tuple

    def __post_init__(self):
        A0 = as_symmetric(self.A0, name="A0")
        coeffs = tuple(as_symmetric(A, name=f"A{i + 1}") for i, A in enumerate(self.coeffs))
        for i, A in enumerate(coeffs):
            if A.shape != A0.shape:
                raise DimensionMismatch(f"A{i + 1} has shape {A.shape}, expected {A0.shape}")
        object.__setattr__(self, "A0", A0)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "_J", np.column_stack([svec(A) for A in coeffs]) if coeffs
                           else np.zeros((svec_dim(A0.shape[0]), 0)))

    @property
    def n(self) -> int:
        return self.A0.shape[0]

    @property
    def in_dim(self) -> int:
        return len(self.coeffs)

    def value(self, x) -> np.ndarray:
        return self.A0 + np.tensordot(np.asarray(x, dtype=float), np.array(self.coeffs).reshape(-1, self.n, self.n), 1) \
            if self.coeffs else self.A0.copy()

    def jacobian(self, x) -> np.ndarray:
        """svec(g'(x) d) = J d."""
        return self._J

    def apply(self, x, d) -> np.ndarray:
        return smat(self._J @ d, self.n)

    def adjoint(self, x, M) -> np.ndarray:
        return self._J.T @ svec(M)

    def hessian_contraction(self, x, M) -> np.ndarray:
        return np.zeros((self.in_dim, self.in_dim))


@dataclass(frozen=True)
class ProblemInstance:
    """Data of the composite problem; g1 and g2 are optional, g2 is required exactly when phi has faces."""

    f: QuadraticFunction
    phi: SymmetricPWA
    g1: AffineMatrixMap | None = None
    h: AffineVectorMap | None = None
    g2: AffineMatrixMap | None = None
    name: str = ""

    def __post_init__(self):
        m = self.f.dim
        for label, g in (("g1", self.g1), ("g2", self.g2)):
            if g is None:
                continue
            if g.in_dim != m:
                raise DimensionMismatch(f"{label} takes {g.in_dim} variables, f takes {m}")
            if g.n != self.phi.n:
                raise DimensionMismatch(f"{label} maps into S^{g.n}, phi acts on R^{self.phi.n}")
        if self.h is not None and self.h.M.shape[1] != m:
            raise DimensionMismatch(f"h takes {self.h.M.shape[1]} variables, f takes {m}")
        if self.phi.has_faces and self.g2 is None:
            raise DimensionMismatch("phi has domain faces, so a g2 map is required")
        if not self.phi.has_faces and self.g2 is not None:
            raise DimensionMismatch("g2 given but phi has no domain faces")

    @property
    def m(self) -> int:
        return self.f.dim

    @property
    def k(self) -> int:
        return 0 if self.h is None else self.h.out_dim

    @property
    def n(self) -> int:
        return self.phi.n

    @property
    def theta_phi(self) -> SymmetricPWA:
        return self.phi.pieces_only()

    @property
    def cone_phi(self) -> SymmetricPWA:
        return self.phi.faces_only()

    @property
    def sizes(self) -> tuple[int, int, int, int]:
        s = svec_dim(self.n)
        return self.m, self.k, s if self.g1 is not None else 0, s if self.g2 is not None else 0

    @property
    def dim(self) -> int:
        return sum(self.sizes)

    def objective(self, x) -> float:
        val = self.f.value(x)
        if self.g1 is not None:
            val += theta_value(self.theta_phi, self.g1.value(x))
        return val

    def hessian_lagrangian(self, pt: "KKTPoint") -> np.ndarray:
        L = self.f.hessian(pt.x).copy()
        if self.h is not None:
            L += self.h.hessian_contraction(pt.x, pt.y)
        if self.g1 is not None:
            L += self.g1.hessian_contraction(pt.x, pt.Y)
        if self.g2 is not None:
            L += self.g2.hessian_contraction(pt.x, pt.Z)
        return L

    def gradient_lagrangian(self, pt: "KKTPoint") -> np.ndarray:
        grad = self.f.gradient(pt.x).copy()
        if self.h is not None:
            grad += self.h.jacobian(pt.x).T @ pt.y
        if self.g1 is not None:
            grad += self.g1.adjoint(pt.x, pt.Y)
        if self.g2 is not None:
            grad += self.g2.adjoint(pt.x, pt.Z)
        return grad


@dataclass(frozen=True)
class KKTPoint:
    x: np.ndarray
    y: np.ndarray
    Y: np.ndarray
    Z: np.ndarray

    @classmethod
    def zeros(cls, prob: ProblemInstance, x=None) -> "KKTPoint":
        x = np.zeros(prob.m) if x is None else np.asarray(x, dtype=float).copy()
        return cls(x, np.zeros(prob.k), np.zeros((prob.n, prob.n)), np.zeros((prob.n, prob.n)))

    def to_vector(self, prob: ProblemInstance) -> np.ndarray:
        parts = [self.x, self.y]
        if prob.g1 is not None:
            parts.append(svec(self.Y))
        if prob.g2 is not None:
            parts.append(svec(self.Z))
        return np.concatenate(parts)

    @classmethod
    def from_vector(cls, prob: ProblemInstance, u) -> "KKTPoint":
        u = np.asarray(u, dtype=float)
        if u.size != prob.dim:
            raise DimensionMismatch(f"vector of length {u.size}, expected {prob.dim}")
        m, k, s1, s2 = prob.sizes
        zero = np.zeros((prob.n, prob.n))
        Y = smat(u[m + k:m + k + s1], prob.n) if s1 else zero
        Z = smat(u[m + k + s1:], prob.n) if s2 else zero.copy()
        return cls(u[:m].copy(), u[m:m + k].copy(), Y, Z)


# Residual and Jacobian ---------------------------------------------------------------


def _split_delta(prob: ProblemInstance, delta):
    if delta is None:
        return None
    delta = np.asarray(delta, dtype=float)
    if delta.size != prob.dim:
        raise DimensionMismatch(f"perturbation of length {delta.size}, expected {prob.dim}")
    m, k, s1, s2 = prob.sizes
    return (delta[:m], delta[m:m + k],
            smat(delta[m + k:m + k + s1], prob.n) if s1 else None,
            smat(delta[m + k + s1:], prob.n) if s2 else None)


def kkt_residual(prob: ProblemInstance, pt: KKTPoint, delta=None, eig_tol: float | None = None) -> np.ndarray:
    """F(pt) - delta, where delta perturbs the generalized equation (it shifts g1 and g2 inside the prox)."""
    d = _split_delta(prob, delta)
    parts = [prob.gradient_lagrangian(pt) - (0 if d is None else d[0])]
    if prob.h is not None:
        parts.append(prob.h.value(pt.x) - (0 if d is None else d[1]))
    if prob.g1 is not None:
        G1 = prob.g1.value(pt.x) + (0 if d is None else d[2])
        parts.append(svec(G1 - spectral_prox(prob.theta_phi, G1 + pt.Y, eig_tol)))
    if prob.g2 is not None:
        G2 = prob.g2.value(pt.x) + (0 if d is None else d[3])
        parts.append(svec(G2 - spectral_prox(prob.cone_phi, G2 + pt.Z, eig_tol)))
    return np.concatenate(parts)


@dataclass(frozen=True)
class Selection:
    """How to pick the spectral Jacobian elements: "directional" (seeded), "affine-hull", or a direction matrix."""

    kind: object = "directional"
    seed: int = 0


def prox_jacobians(prob: ProblemInstance, pt: KKTPoint, selection: Selection = Selection(),
                   eig_tol: float | None = None, delta=None):
    """svec matrices of the chosen elements at g1(x)+Y and g2(x)+Z (None for missing blocks)."""
    d = _split_delta(prob, delta)
    out = []
    for which, g, dual, phi in ((2, prob.g1, pt.Y, prob.theta_phi), (3, prob.g2, pt.Z, prob.cone_phi)):
        if g is None:
            out.append(None)
            continue
        G = g.value(pt.x) + (0 if d is None or d[which] is None else d[which])
        pair = pair_from_sum(phi, G + dual, eig_tol)
        out.append(jacobian_element(pair, selection.kind, seed=selection.seed).matrix())
    return tuple(out)


def assemble_W(prob: ProblemInstance, pt: KKTPoint, selection: Selection = Selection(),
               eig_tol: float | None = None, delta=None) -> np.ndarray:
    """Dense generalized Jacobian element of F at pt in the stacked orthonormal coordinates."""
    m, k, s1, s2 = prob.sizes
    N = prob.dim
    W = np.zeros((N, N))
    S1, S2 = prox_jacobians(prob, pt, selection, eig_tol, delta)
    W[:m, :m] = prob.hessian_lagrangian(pt)
    col = m
    if prob.h is not None:
        Jh = prob.h.jacobian(pt.x)
        W[:m, col:col + k] = Jh.T
        W[m:m + k, :m] = Jh
        col += k
    for S, g, size in ((S1, prob.g1, s1), (S2, prob.g2, s2)):
        if g is None:
            continue
        J = g.jacobian(pt.x)
        W[:m, col:col + size] = J.T
        W[col:col + size, :m] = J - S @ J
        W[col:col + size, col:col + size] = -S
        col += size
    return W


def finite_difference_jacobian(prob: ProblemInstance, pt: KKTPoint, step: float = 1e-7,
                               eig_tol: float | None = None) -> np.ndarray:
    """Central differences of F in the stacked coordinates."""
    u = pt.to_vector(prob)
    cols = []
    for i in range(u.size):
        e = np.zeros_like(u)
        e[i] = step
        plus = kkt_residual(prob, KKTPoint.from_vector(prob, u + e), eig_tol=eig_tol)
        minus = kkt_residual(prob, KKTPoint.from_vector(prob, u - e), eig_tol=eig_tol)
        cols.append((plus - minus) / (2 * step))
    return np.column_stack(cols)


def satisfies_kkt(prob: ProblemInstance, pt: KKTPoint, tol: float = 1e-7) -> bool:
    """Direct check of stationarity, feasibility and the two membership conditions."""
    scale = max(1.0, float(np.max(np.abs(pt.to_vector(prob)))))
    if np.linalg.norm(prob.gradient_lagrangian(pt)) > tol * scale:
        return False
    if prob.h is not None and np.linalg.norm(prob.h.value(pt.x)) > tol * scale:
        return False
    if prob.g1 is not None and not subdiff_membership(prob.theta_phi, prob.g1.value(pt.x), pt.Y, part="pieces")[0]:
        return False
    if prob.g2 is not None and not subdiff_membership(prob.cone_phi, prob.g2.value(pt.x), pt.Z, part="faces")[0]:
        return False
    return True


def dual_pairs(prob: ProblemInstance, pt: KKTPoint, eig_tol: float | None = None):
    """Spectral pairs (g1(x), Y) and (g2(x), Z) at a KKT point (None for missing blocks)."""
    p1 = pair_from_primal_dual(prob.theta_phi, prob.g1.value(pt.x), pt.Y, eig_tol) if prob.g1 is not None else None
    p2 = pair_from_primal_dual(prob.cone_phi, prob.g2.value(pt.x), pt.Z, eig_tol) if prob.g2 is not None else None
    return p1, p2


# Newton --------------------------------------------------------------------------------


@dataclass(frozen=True)
class NewtonOptions:
    ftol: float = 1e-11
    max_iter: int = 50
    damped: bool = False
    max_halvings: int = 20
    eig_tol: float | None = None
    selection: Selection = Selection()


@dataclass
class SolverReport:
    residuals: list[float] = field(default_factory=list)
    steps: list[float] = field(default_factory=list)
    conditions: list[float] = field(default_factory=list)
    converged: bool = False
    point: KKTPoint | None = None
    rate: float | None = None
    floor: float = 0.0
    status: str = "running"

    @property
    def iterations(self) -> int:
        return len(self.steps)

    @property
    def final_residual(self) -> float:
        return self.residuals[-1] if self.residuals else float("nan")


def rate_estimate(residuals, floor: float = 0.0, pairs: int = 3) -> float | None:
    """Least-squares slope of log r_{k+1} against log r_k over the last few pairs.

    Trailing pairs with r_k^2 <= floor are dropped: a quadratic step from there lands below
    the accuracy of the residual itself, so the observed value says nothing about the rate.
    A residual that reaches exactly zero means finite termination, reported as inf.
    """
    r = [float(v) for v in residuals]
    if len(r) < 2:
        return None
    if r[-1] == 0.0:
        return float("inf")
    while len(r) > 2 and r[-2] ** 2 <= floor:
        r.pop()
    tail = r[-(pairs + 1):]
    xs, ys = np.log(tail[:-1]), np.log(tail[1:])
    if len(xs) == 1:
        return float(ys[0] / xs[0]) if xs[0] != 0 else None
    if np.ptp(xs) == 0:
        return None
    return float(np.polyfit(xs, ys, 1)[0])


def rate_diagnosis(residuals, floor: float = 0.0, pairs: int = 3) -> str:
    """Plain-language reason for a low fitted rate."""
    r = [float(v) for v in residuals]
    while len(r) > 2 and r[-2] ** 2 <= floor:
        r.pop()
    tail = r[-(pairs + 1):]
    if len(tail) < 3:
        return "too few iterations above the roundoff floor to fit a rate"
    consts = [b / a**2 for a, b in zip(tail[:-1], tail[1:]) if a > 0]
    spread = max(consts) / min(consts) if min(consts) > 0 else float("inf")
    if spread > 10:
        return (f"pre-asymptotic window: the contraction constant r_(k+1)/r_k^2 varies by a factor "
                f"{spread:.1f} over the fitted iterations")
    return "rate below the quadratic threshold with a stable contraction constant"


def roundoff_floor(u) -> float:
    return float(np.finfo(float).eps * max(1.0, float(np.linalg.norm(u))))


def semismooth_newton(prob: ProblemInstance, start: KKTPoint, opts: NewtonOptions = NewtonOptions(),
                      delta=None) -> SolverReport:
    """Local semismooth Newton iteration u <- u - W^{-1} F(u)."""
    report = SolverReport()
    u = start.to_vector(prob)

    def residual(v):
        return kkt_residual(prob, KKTPoint.from_vector(prob, v), delta, opts.eig_tol)

    F = residual(u)
    report.residuals.append(float(np.linalg.norm(F)))
    for _ in range(opts.max_iter + 1):
        if report.residuals[-1] <= opts.ftol:
            report.converged, report.status = True, "converged"
            report.point = KKTPoint.from_vector(prob, u)
            report.floor = roundoff_floor(u)
            report.rate = rate_estimate(report.residuals, report.floor)
            return report
        if report.iterations == opts.max_iter:
            break
        W = assemble_W(prob, KKTPoint.from_vector(prob, u), opts.selection, opts.eig_tol, delta)
        _, sv, _ = np.linalg.svd(W)
        smax, smin = float(sv[0]), float(sv[-1])
        report.conditions.append(smax / smin if smin > 0 else float("inf"))
        if smin < SINGULAR_RTOL * smax:
            report.status = "singular"
            report.point = KKTPoint.from_vector(prob, u)
            raise SingularJacobian(f"Jacobian element is singular (sigma_min = {smin:.3e})", smin, report)
        step = np.linalg.solve(W, -F)
        trial = u + step
        F_trial = residual(trial)
        if opts.damped:
            t = 1.0
            for _ in range(opts.max_halvings):
                if np.linalg.norm(F_trial) < report.residuals[-1]:
                    break
                t *= 0.5
                trial = u + t * step
                F_trial = residual(trial)
            step = trial - u
        u, F = trial, F_trial
        report.steps.append(float(np.linalg.norm(step)))
        report.residuals.append(float(np.linalg.norm(F)))
    report.status = "max-iterations"
    report.point = KKTPoint.from_vector(prob, u)
    raise MaxIterations(f"no convergence within {opts.max_iter} iterations "
                        f"(residual {report.residuals[-1]:.3e})", report)


# Strong regularity probe ------------------------------------------------------------


@dataclass
class ProbeReport:
    radii: list[float]
    ratios: list[list[float]]
    max_ratio: list[float]
    stability: float
    not_locally_unique: bool
    failures: list[str]

    @property
    def stable(self) -> bool:
        return np.isfinite(self.stability) and self.stability <= 2.0


def strong_regularity_probe(prob: ProblemInstance, pt: KKTPoint, radius: float = 1e-3, samples: int = 10,
                            seed: int = 0, opts: NewtonOptions = NewtonOptions()) -> ProbeReport:
    """Lipschitz ratios |S(delta) - pt| / |delta| of the perturbed solution map at three scales."""
    rng = np.random.default_rng(seed)
    u0 = pt.to_vector(prob)
    radii = [radius, radius / 2, radius / 4]
    directions = [v / np.linalg.norm(v) for v in rng.standard_normal((samples, prob.dim))]
    ratios: list[list[float]] = [[] for _ in radii]
    failures: list[str] = []
    not_unique = False
    for si, direction in enumerate(directions):
        for ri, r in enumerate(radii):
            delta = r * direction
            try:
                sol = semismooth_newton(prob, pt, opts, delta=delta).point.to_vector(prob)
            except (SingularJacobian, MaxIterations) as exc:
                failures.append(f"sample {si} radius {r:.2e}: {type(exc).__name__}")
                continue
            ratios[ri].append(float(np.linalg.norm(sol - u0) / r))
            if ri == 0:
                kick = rng.standard_normal(prob.dim)
                start = KKTPoint.from_vector(prob, u0 + r * kick / np.linalg.norm(kick))
                try:
                    other = semismooth_newton(prob, start, opts, delta=delta).point.to_vector(prob)
                    if np.linalg.norm(other - sol) > 1e-6 * max(1.0, np.linalg.norm(sol)):
                        not_unique = True
                except (SingularJacobian, MaxIterations):
                    pass
    max_ratio = [max(rs) if rs else float("nan") for rs in ratios]
    stability = _scale_stability(max_ratio)
    return ProbeReport(radii, ratios, max_ratio, stability, not_unique, failures)


def _scale_stability(values) -> float:
    """Largest factor between consecutive scales (inf if a scale has no finite value)."""
    worst = 1.0
    for a, b in zip(values, values[1:]):
        if not (np.isfinite(a) and np.isfinite(b)):
            return float("inf")
        lo, hi = sorted((a, b))
        if hi == 0:
            continue
        worst = max(worst, hi / lo if lo > 0 else float("inf"))
    return worst


def with_options(opts: NewtonOptions, **changes) -> NewtonOptions:
    return replace(opts, **changes)
