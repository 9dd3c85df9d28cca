"""Command-line front end.

Exit codes: 0 success, 1 parse or validation failure, 2 iteration limit reached,
3 singular Jacobian element, 4 verification failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .diagnostics import diagnose
from .errors import CMatOpError, InstanceError, MaxIterations, SingularJacobian
from .kkt import (KKTPoint, NewtonOptions, ProblemInstance, Selection, SolverReport, satisfies_kkt, semismooth_newton,
                  strong_regularity_probe)
from .pwa import SymmetricPWA
from .serialization import SCHEMA, dumps, encode, load_instance, loads
from .spectral import project_K, prox_theta1, spectral_prox
from .symmat import SymMat
from .verify import run_suite

EXIT_OK, EXIT_INPUT, EXIT_MAX_ITER, EXIT_SINGULAR, EXIT_VERIFY = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Reports usage problems through the input-failure exit code."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("expected a non-negative integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cmatop", description="Spectral prox calculus, semismooth Newton and regularity diagnostics.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--eig-tol", type=float, default=None, help="eigenvalue grouping tolerance")
        p.add_argument("--json", metavar="OUT", help="write the report document to OUT")

    solve = sub.add_parser("solve", help="run semismooth Newton on an instance file")
    solve.add_argument("instance")
    solve.add_argument("--tol", type=float, default=1e-11)
    solve.add_argument("--max-iter", type=_positive_int, default=50)
    solve.add_argument("--damped", action="store_true", help="halve steps that increase the residual")
    solve.add_argument("--seed", type=int, default=0, help="seed of the Jacobian selection")
    common(solve)

    diag = sub.add_parser("diagnose", help="solve, then report regularity of the solution")
    diag.add_argument("instance")
    diag.add_argument("--seed", type=int, required=True)
    diag.add_argument("--samples", type=_positive_int, default=10)
    diag.add_argument("--radius", type=float, default=1e-2)
    diag.add_argument("--probe-radius", type=float, default=None, help="also run the strong regularity probe")
    diag.add_argument("--tol", type=float, default=1e-11)
    diag.add_argument("--max-iter", type=_positive_int, default=50)
    diag.add_argument("--damped", action="store_true")
    common(diag)

    probe = sub.add_parser("probe", help="Lipschitz ratios of the perturbed KKT solution map")
    probe.add_argument("instance")
    probe.add_argument("--seed", type=int, required=True)
    probe.add_argument("--samples", type=_positive_int, default=10)
    probe.add_argument("--radius", type=float, default=1e-3)
    probe.add_argument("--tol", type=float, default=1e-11)
    probe.add_argument("--max-iter", type=_positive_int, default=50)
    probe.add_argument("--damped", action="store_true")
    common(probe)

    prox = sub.add_parser("prox", help="evaluate a spectral prox or projection")
    prox.add_argument("--phi", required=True,
                      help="'max', 'nsd' or a JSON file holding a phi block or an instance")
    prox.add_argument("--matrix", required=True, help="inline JSON rows or a JSON file")
    prox.add_argument("--part", choices=("full", "theta", "cone"), default="full",
                      help="prox of phi, of its pieces only, or projection onto its domain")
    common(prox)

    ver = sub.add_parser("verify", help="run the seeded property suite")
    ver.add_argument("--seed", type=int, required=True)
    ver.add_argument("--filter", default=None, help="only modules whose name contains this text")
    ver.add_argument("--inject-failure", default=None, metavar="NAME",
                     help="force the named module or property (or 'any') to fail")
    ver.add_argument("--json", metavar="OUT")
    return parser


# Reports ---------------------------------------------------------------------------


def _point_json(prob: ProblemInstance, pt: KKTPoint | None):
    if pt is None:
        return None
    return {"x": pt.x, "y": pt.y, "Y": pt.Y, "Z": pt.Z}


def solver_document(prob: ProblemInstance, report: SolverReport) -> dict:
    return {
        "schema": SCHEMA,
        "kind": "solver-report",
        "instance": prob.name,
        "status": report.status,
        "converged": report.converged,
        "iterations": report.iterations,
        "final_residual": report.final_residual,
        "rate": report.rate,
        "history": [
            {"iteration": k, "residual": r,
             "step": report.steps[k - 1] if k else None,
             "condition": report.conditions[k - 1] if 0 < k <= len(report.conditions) else None}
            for k, r in enumerate(report.residuals)
        ],
        "point": _point_json(prob, report.point),
    }


def _write(path: str | None, doc) -> None:
    if path:
        Path(path).write_text(dumps(doc))


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.6e}" if isinstance(v, float) else str(v)


def _options(args) -> NewtonOptions:
    return NewtonOptions(ftol=args.tol, max_iter=args.max_iter, damped=args.damped, eig_tol=args.eig_tol,
                         selection=Selection(seed=args.seed))


def _start(inst) -> KKTPoint:
    return inst.start if inst.start is not None else KKTPoint.zeros(inst.problem)


def _print_solver(report: SolverReport) -> None:
    print(f"status: {report.status}")
    print(f"iterations: {report.iterations}")
    print(f"final residual: {_fmt(report.final_residual)}")
    print(f"rate estimate: {_fmt(report.rate)}")
    if report.point is not None:
        print("x: " + json.dumps(encode(report.point.x)))


def _run_newton(inst, args) -> tuple[int, SolverReport]:
    try:
        return EXIT_OK, semismooth_newton(inst.problem, _start(inst), _options(args))
    except MaxIterations as exc:
        return EXIT_MAX_ITER, exc.report
    except SingularJacobian as exc:
        return EXIT_SINGULAR, exc.report


def cmd_solve(args) -> int:
    inst = load_instance(args.instance)
    code, report = _run_newton(inst, args)
    _print_solver(report)
    if code == EXIT_SINGULAR:
        print(f"singular Jacobian element at iteration {report.iterations}", file=sys.stderr)
    elif code == EXIT_MAX_ITER:
        print(f"no convergence within {args.max_iter} iterations", file=sys.stderr)
    _write(args.json, solver_document(inst.problem, report))
    return code


def _kkt_point(inst, args) -> tuple[int, KKTPoint | None, SolverReport | None]:
    """A stored reference solution that passes the KKT check is used as is; otherwise solve from the start."""
    if inst.solution is not None and satisfies_kkt(inst.problem, inst.solution):
        print("using the stored solution")
        return EXIT_OK, inst.solution, None
    code, report = _run_newton(inst, args)
    if code != EXIT_OK:
        _print_solver(report)
        _write(args.json, solver_document(inst.problem, report))
        print("this command needs a KKT point and the solver did not reach one", file=sys.stderr)
        return code, None, report
    print(f"solved in {report.iterations} iterations, residual {_fmt(report.final_residual)}")
    return EXIT_OK, report.point, report


def cmd_diagnose(args) -> int:
    inst = load_instance(args.instance)
    prob = inst.problem
    code, pt, _ = _kkt_point(inst, args)
    if pt is None:
        return code
    reg = diagnose(prob, pt, samples=args.samples, seed=args.seed, radius=args.radius,
                   probe_radius=args.probe_radius)
    print(reg.render())
    probe = reg.strong_regularity
    _write(args.json, {
        "schema": SCHEMA,
        "kind": "regularity-report",
        "instance": prob.name,
        "seed": args.seed,
        "point": _point_json(prob, pt),
        "nondegenerate": {"holds": reg.nondegenerate.holds, "margin": reg.nondegenerate.margin},
        "multiplier_unique": reg.multiplier_unique,
        "ssosc": None if reg.ssosc is None else {"holds": reg.ssosc.holds, "margin": reg.ssosc.margin},
        "ssosc_note": reg.ssosc_note,
        "jacobian_samples": [{"selection": s.selection, "sigma_min": s.sigma_min, "sigma_max": s.sigma_max}
                             for s in reg.jacobian_samples],
        "all_sampled_nonsingular": reg.all_sampled_nonsingular,
        "robinson_cq": None if reg.robinson_cq is None else {"holds": reg.robinson_cq.holds,
                                                             "margin": reg.robinson_cq.margin},
        "growth": None if reg.growth is None else {"radii": reg.growth.radii, "rho": reg.growth.rho,
                                                   "stability": reg.growth.stability},
        "probe": None if probe is None else _probe_json(probe),
        "verdicts": reg.verdicts,
    })
    return EXIT_OK


def _probe_json(probe) -> dict:
    return {"radii": probe.radii, "max_ratio": probe.max_ratio, "stability": probe.stability,
            "stable": probe.stable, "not_locally_unique": probe.not_locally_unique, "failures": probe.failures}


def cmd_probe(args) -> int:
    inst = load_instance(args.instance)
    code, pt, _ = _kkt_point(inst, args)
    if pt is None:
        return code
    probe = strong_regularity_probe(inst.problem, pt, args.radius, args.samples, args.seed, _options(args))
    for r, m in zip(probe.radii, probe.max_ratio):
        print(f"radius {r:.1e}: max ratio {_fmt(m)}")
    print(f"stability factor: {_fmt(probe.stability)}")
    print(f"locally unique: {str(not probe.not_locally_unique).lower()}")
    for msg in probe.failures:
        print(f"failure: {msg}")
    print(f"stable within factor 2: {str(probe.stable).lower()}")
    _write(args.json, {"schema": SCHEMA, "kind": "probe-report", "instance": inst.problem.name, "seed": args.seed,
                       **_probe_json(probe)})
    return EXIT_OK


def _read_json_arg(text: str, what: str):
    path = Path(text)
    if not text.lstrip().startswith(("[", "{")) and path.exists():
        text = path.read_text()
    try:
        return loads(text)
    except InstanceError as exc:
        raise InstanceError(f"{what}: {exc}") from None


def _phi_arg(text: str, n: int) -> SymmetricPWA:
    if text == "max":
        return SymmetricPWA.max_entry(n)
    if text == "nsd":
        return SymmetricPWA.nonpositive_max(n)
    doc = _read_json_arg(text, "--phi")
    if isinstance(doc, dict) and "phi" in doc:
        doc = doc["phi"]
    return SymmetricPWA.from_json(doc, field_name="phi")


def cmd_prox(args) -> int:
    doc = _read_json_arg(args.matrix, "--matrix")
    if isinstance(doc, list):
        doc = {"n": len(doc), "rows": doc}
    X = SymMat.from_json(doc, field_name="matrix").entries
    phi = _phi_arg(args.phi, X.shape[0])
    if phi.n != X.shape[0]:
        raise InstanceError(f"matrix: size {X.shape[0]} does not match phi on R^{phi.n}")
    fn = {"full": spectral_prox, "theta": prox_theta1, "cone": project_K}[args.part]
    P = fn(phi, X, args.eig_tol)
    P = np.where(np.abs(P) < 1e-14 * max(1.0, float(np.max(np.abs(P)))), 0.0, P)
    out = {"schema": SCHEMA, "kind": "prox", "part": args.part, "input": X, "result": P}
    print(json.dumps(encode(P)))
    _write(args.json, out)
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_suite(args.seed, args.filter, args.inject_failure)
    width = max((len(f"{r.module}: {r.name}") for r in results), default=0)
    for r in results:
        label = f"{r.module}: {r.name}"
        print(f"{label.ljust(width)}  {'PASS' if r.passed else 'FAIL'}  {r.detail}")
    ok = bool(results) and all(r.passed for r in results)
    print(f"{sum(r.passed for r in results)}/{len(results)} properties passed")
    _write(args.json, {"schema": SCHEMA, "kind": "verify-report", "seed": args.seed,
                       "results": [{"module": r.module, "name": r.name, "passed": r.passed, "detail": r.detail}
                                   for r in results]})
    return EXIT_OK if ok else EXIT_VERIFY


COMMANDS = {"solve": cmd_solve, "diagnose": cmd_diagnose, "probe": cmd_probe, "prox": cmd_prox, "verify": cmd_verify}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        return COMMANDS[args.command](args)
    except InstanceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except CMatOpError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
