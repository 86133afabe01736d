"""Command-line front end.

Exit codes: 0 pass, 1 parse/usage error, 2 precondition violated,
3 verification failure, 4 QI violation, 5 infeasible program.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .coprime import (deadbeat_gains, doubly_coprime_general, doubly_coprime_stable,
                      doubly_coprime_state_feedback, riccati_gains, verify_bezout)
from .io import (DocumentError, dumps, fir_to_doc, load_json, params_from_doc, params_to_doc,
                 pattern_from_doc, plant_from_doc)
from .lsq import InfeasibleError
from .lti import PreconditionError, is_stable, spectral_radius
from .maps import (controller_agreement, iop_controller, iop_to_slp, iop_to_youla, slp_controller,
                   slp_to_iop, slp_to_youla, verification_tol, verify_iop_subspace, verify_slp_subspace,
                   youla_controller, youla_to_iop, youla_to_slp)
from .qi import plant_pattern, qi_test
from .synthesis import (QIViolation, default_horizon, solve_example1, synthesize, synthesize_si,
                        synthesize_structured)

EXIT_OK, EXIT_USAGE, EXIT_PRECONDITION, EXIT_VERIFY, EXIT_QI, EXIT_INFEASIBLE = range(6)


class VerificationFailed(RuntimeError):
    def __init__(self, doc: dict, message: str):
        super().__init__(message)
        self.doc = doc


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _factorize(P, mode: str, horizon: Optional[int] = None):
    if mode == "auto":
        mode = "stable" if is_stable(P.A) else "deadbeat"
    if mode == "deadbeat":
        return doubly_coprime_general(P, deadbeat_gains(P), horizon)
    if mode == "riccati":
        return doubly_coprime_general(P, riccati_gains(P), horizon)
    if mode == "stable":
        return doubly_coprime_stable(P, horizon)
    if mode == "statefb":
        return doubly_coprime_state_feedback(P)
    raise ValueError(f"unknown mode {mode}")


def _bezout_doc(rep) -> dict:
    return {"max_residual": rep.max_residual, "bezout_residual": rep.bezout_residual,
            "factor_residual": rep.factor_residual, "skipped_points": rep.skipped,
            "npoints": rep.npoints, "pass": rep.passed}


def cmd_factorize(args) -> dict:
    P = plant_from_doc(load_json(args.plant))
    f = _factorize(P, args.mode, args.horizon)
    rep = verify_bezout(f, P, args.npoints, verification_tol())
    doc = {"factors": params_to_doc(f), "kind": f.kind, "bezout": _bezout_doc(rep),
           "max_residual": rep.max_residual, "pass": rep.passed}
    if args.mode in ("deadbeat", "riccati"):
        g = deadbeat_gains(P) if args.mode == "deadbeat" else riccati_gains(P)
        doc["gains"] = {"F": g.F.tolist(), "L": g.L.tolist(), "mode": g.mode}
    if not rep.passed:
        raise VerificationFailed(doc, f"Bezout residual {rep.max_residual:.3e}")
    return doc


def _source_report(P, kind, params):
    if kind == "iop":
        return verify_iop_subspace(P, params).as_dict()
    if kind == "slp":
        return verify_slp_subspace(P, params).as_dict()
    return {"max_residual": 0.0, "pass": True, "tol": verification_tol(), "residuals": {}, "flags": {}}


def _controller(P, f, kind, params):
    if kind == "youla":
        return youla_controller(f, params)
    if kind == "iop":
        return iop_controller(params)
    return slp_controller(params, P.C2)


def cmd_map(args) -> dict:
    P = plant_from_doc(load_json(args.plant))
    src = params_from_doc(load_json(args.params), args.src)
    f = params_from_doc(load_json(args.factors), "factors") if args.factors else _factorize(P, args.mode)
    doc = {"from": args.src, "to": args.dst, "source_report": _source_report(P, args.src, src)}
    if not doc["source_report"]["pass"]:
        raise VerificationFailed(doc, "source parameters are not in their affine subspace")
    h = args.horizon
    key = (args.src, args.dst)
    if key == ("youla", "iop"):
        out = youla_to_iop(f, src, h)
    elif key == ("youla", "slp"):
        out = youla_to_slp(P, f, src, h)
    elif key == ("iop", "youla"):
        out = iop_to_youla(f, src, h)
    elif key == ("iop", "slp"):
        out = iop_to_slp(P, src, h)
    elif key == ("slp", "iop"):
        out = slp_to_iop(P, src)
    elif key == ("slp", "youla"):
        out = slp_to_youla(P, f, src, h)
    else:
        out = src
    doc["params"] = params_to_doc(out)
    doc["target_report"] = _source_report(P, args.dst, out)
    agree = controller_agreement([_controller(P, f, args.src, src), _controller(P, f, args.dst, out)])
    doc["controller_agreement"] = agree
    doc["max_residual"] = max(doc["target_report"]["max_residual"], agree)
    doc["pass"] = bool(doc["target_report"]["pass"] and agree < verification_tol())
    if not doc["pass"]:
        raise VerificationFailed(doc, "mapped parameters failed verification")
    return doc


def cmd_synthesize(args) -> dict:
    P = plant_from_doc(load_json(args.plant))
    T = args.horizon if args.horizon is not None else default_horizon(P)
    f = params_from_doc(load_json(args.factors), "factors") if args.factors else None
    kw = {"tail": args.tail} if args.param == "slp" and args.tail else {}
    if args.structure:
        Lpat = pattern_from_doc(load_json(args.structure))
        if args.si:
            r = synthesize_si(P, T, Lpat, args.param, f)
        else:
            r = synthesize_structured(P, T, Lpat, args.param, f, **kw)
    elif args.si:
        raise DocumentError("--si needs --structure")
    else:
        r = synthesize(P, args.param, T, f, **kw)
    K = r.controller.realize()
    rho = r.closed_loop_radius(P)
    doc = {"param": args.param, "horizon": T, "controller": fir_to_doc(r.controller_fir(T)),
           "params": params_to_doc(r.params), "h2_cost": r.cost, "h2_cost_squared": r.cost_squared,
           "spectral_radius": rho, "controller_states": K.nk, "internally_stable": rho < 1 - 1e-9,
           "inner_approx": r.inner_approx, "max_residual": r.solution.constraint_residual,
           "residuals": r.residuals}
    if args.timing:
        doc["wall_time_ms"] = 1e3 * r.wall_time
    doc["pass"] = bool(doc["internally_stable"] and doc["max_residual"] < verification_tol())
    if not doc["pass"]:
        raise VerificationFailed(doc, "synthesized controller failed verification")
    return doc


def cmd_qi_check(args) -> dict:
    P = plant_from_doc(load_json(args.plant))
    Lpat = pattern_from_doc(load_json(args.pattern))
    Ppat = plant_pattern(P)
    ok = qi_test(Lpat, Ppat)
    doc = {"qi": ok, "plant_pattern": Ppat.tolist(), "pattern": Lpat.tolist(), "pass": ok}
    if not ok:
        raise VerificationFailed(doc, "pattern is not quadratically invariant under P22")
    return doc


def cmd_verify(args) -> dict:
    P = plant_from_doc(load_json(args.plant))
    params = params_from_doc(load_json(args.params), "factors" if args.kind == "bezout" else args.kind)
    if args.kind == "bezout":
        rep = verify_bezout(params, P, args.npoints, verification_tol())
        doc = {"kind": "bezout", "report": _bezout_doc(rep), "max_residual": rep.max_residual, "pass": rep.passed}
    else:
        rep = _source_report(P, args.kind, params)
        doc = {"kind": args.kind, "report": rep, "max_residual": rep["max_residual"], "pass": rep["pass"]}
    if not doc["pass"]:
        raise VerificationFailed(doc, f"{args.kind} verification failed")
    return doc


def cmd_example1(args) -> dict:
    graph = None
    if args.graph:
        gdoc = load_json(args.graph)
        graph = np.array(gdoc.get("graph", gdoc.get("adjacency")), dtype=float)
    if graph is None and args.n is None:
        raise DocumentError("example1 needs --n or --graph")
    rep = solve_example1(args.n, graph, args.horizon)
    n = rep.A.shape[0]
    routes = {}
    for route, r in rep.results.items():
        routes[route] = {"controller": fir_to_doc(r.controller_fir(args.horizon)),
                         "k_error": rep.k_error[route], "h2_cost_squared": rep.cost_squared[route],
                         "cost_error": abs(rep.cost_squared[route] - n),
                         "spectral_radius": r.closed_loop_radius(rep_plant(rep))}
    doc = {"n": n, "A": rep.A.tolist(), "horizon": args.horizon, "routes": routes,
           "max_residual": max(rep.k_error.values()), "pass": rep.passed()}
    if not doc["pass"]:
        raise VerificationFailed(doc, "Example 1 recovery failed")
    return doc


def rep_plant(rep):
    from .synthesis import example1_plant
    return example1_plant(A=rep.A)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="parametrix", description="Youla, SLP and IOP controller parameterizations.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="write the result document here instead of stdout")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    s = sub.add_parser("factorize", parents=[common], help="doubly-coprime factorization of P22")
    s.add_argument("plant")
    s.add_argument("--mode", choices=["deadbeat", "riccati", "stable", "statefb"], default="deadbeat")
    s.add_argument("--horizon", type=int)
    s.add_argument("--npoints", type=int, default=64)
    s.set_defaults(func=cmd_factorize)

    s = sub.add_parser("map", parents=[common], help="convert parameters between parameterizations")
    s.add_argument("plant")
    s.add_argument("params")
    s.add_argument("--from", dest="src", choices=["youla", "slp", "iop"], required=True)
    s.add_argument("--to", dest="dst", choices=["youla", "slp", "iop"], required=True)
    s.add_argument("--horizon", type=int)
    s.add_argument("--factors", help="factorization document (default: computed from the plant)")
    s.add_argument("--mode", choices=["auto", "deadbeat", "riccati", "stable", "statefb"], default="deadbeat")
    s.set_defaults(func=cmd_map)

    s = sub.add_parser("synthesize", parents=[common], help="H2 synthesis")
    s.add_argument("plant")
    s.add_argument("--param", choices=["youla", "slp", "iop"], required=True)
    s.add_argument("--horizon", type=int)
    s.add_argument("--structure", help="sparsity pattern document for K")
    s.add_argument("--si", action="store_true", help="sparsity-invariance inner approximation")
    s.add_argument("--factors", help="factorization document for the Youla route")
    s.add_argument("--tail", choices=["closed", "open"], help="SLP tail handling")
    s.add_argument("--timing", action="store_true", help="include wall time (breaks byte-identical output)")
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("qi-check", parents=[common], help="quadratic invariance of a pattern under P22")
    s.add_argument("plant")
    s.add_argument("pattern")
    s.set_defaults(func=cmd_qi_check)

    s = sub.add_parser("verify", parents=[common], help="check parameters against their defining identities")
    s.add_argument("plant")
    s.add_argument("params")
    s.add_argument("--kind", choices=["iop", "slp", "bezout"], required=True)
    s.add_argument("--npoints", type=int, default=16)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("example1", parents=[common], help="structured state-feedback example on a graph")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--n", type=int)
    g.add_argument("--graph")
    s.add_argument("--horizon", type=int, default=8)
    s.set_defaults(func=cmd_example1)
    return p


def _emit(doc: dict, out: Optional[str]):
    text = dumps(doc)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    raw = list(argv if argv is not None else sys.argv[1:])
    # echo the invocation without the output path so results compare byte for byte
    command, skip = [], False
    for a in raw:
        if skip:
            skip = False
        elif a == "--out":
            skip = True
        elif not a.startswith("--out="):
            command.append(a)
    try:
        doc = args.func(args)
        code = EXIT_OK
    except VerificationFailed as exc:
        doc, code = exc.doc, EXIT_VERIFY
        print(f"verification failed: {exc}", file=sys.stderr)
    except ArithmeticError as exc:
        doc, code = {"error": str(exc), "pass": False}, EXIT_VERIFY
        print(f"verification failed: {exc}", file=sys.stderr)
    except QIViolation as exc:
        doc, code = {"error": "QI_VIOLATION", "message": str(exc), "pass": False}, EXIT_QI
        print(f"QI_VIOLATION: {exc} (try --si)", file=sys.stderr)
    except InfeasibleError as exc:
        doc, code = {"error": "INFEASIBLE", "certificate": exc.certificate, "pass": False}, EXIT_INFEASIBLE
        print(f"infeasible: {exc}", file=sys.stderr)
    except PreconditionError as exc:
        doc, code = {"error": "PRECONDITION", "message": str(exc), "pass": False}, EXIT_PRECONDITION
        print(f"precondition violated: {exc}", file=sys.stderr)
    except (DocumentError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    doc = {"command": command, **doc}
    _emit(doc, args.out)
    return code


if __name__ == "__main__":
    sys.exit(main())
