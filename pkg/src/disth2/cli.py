"""Command-line interface.

Exit codes: 0 success (independently verified), 1 infeasible or not
verified, 2 unreadable input, 3 structural hypothesis violated, 4 controller
construction failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io as dio
from .analysis import (
    analysis_residuals,
    h2_norm_freqgrid,
    h2_norm_lyapunov,
    is_stable,
)
from .bench import (
    bench_scaling,
    example_one,
    gen_oscillator,
    passive_pair,
    random_cycle_params,
    rows_to_csv,
    simulate_closed_loop,
    triangle_params,
)
from .errors import (
    Disth2Error,
    FormatError,
    HypothesisViolated,
    Infeasible,
    InfeasibleAtHi,
    NumericalFailure,
    ReconstructionError,
    SingularZ,
    Unstable,
)
from .netmodel import assemble_generalized, assemble_interconnected, closed_loop_network
from .sdp import bisect_gamma, solve
from .synthesis.central import build_central_problem, central_closed_loop, synthesize_central
from .synthesis.drivers import synthesize_decentralized, synthesize_distributed
from .synthesis.existence import build_analysis_problem, build_existence_problem

EXIT_OK, EXIT_FAIL, EXIT_PARSE, EXIT_HYPOTHESIS, EXIT_RECONSTRUCTION = 0, 1, 2, 3, 4


def _bracket(text):
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("expected lo:hi") from None
    if not 0 < lo <= hi:
        raise argparse.ArgumentTypeError("need 0 < lo <= hi")
    return lo, hi


def _sizes(text):
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated integers") from None


def _emit(obj, out):
    text = json.dumps(obj, indent=1, default=float)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _level(args, builder, backoff=0.0):
    """Fixed level, or the smallest feasible one in the bracket raised by ``backoff``.

    Constructions at the bisected level itself have no margin left.
    """
    if args.bisect is None:
        return args.gamma
    lo, hi = args.bisect
    g, _ = bisect_gamma(builder, lo, hi, rel_tol=args.rel_tol)
    return min(hi, g * (1.0 + backoff))


# subcommands ------------------------------------------------------------------

def cmd_analyze(args) -> int:
    model = dio.load_model(args.model)
    if args.certificate:
        cert = dio.load_certificate(args.certificate, model)
        if args.gamma is not None:
            cert = type(cert)(cert.X, cert.rho, cert.multipliers, args.gamma)
        rep = analysis_residuals(model, cert)
        out = {"source": "file", **rep.to_dict()}
        _emit(out, args.out)
        return EXIT_OK if rep.verified else EXIT_FAIL
    build = lambda g: build_analysis_problem(model, g, args.eps_strict).problem  # noqa: E731
    try:
        gamma = _level(args, build)
    except InfeasibleAtHi as exc:
        _emit({"source": "sdp", "verified": False, "error": str(exc)}, args.out)
        return EXIT_FAIL
    ap = build_analysis_problem(model, gamma, args.eps_strict)
    sol = solve(ap.problem)
    if not sol.feasible:
        _emit({"source": "sdp", "gamma": gamma, "verified": False, "status": sol.status},
              args.out)
        return EXIT_FAIL
    cert = ap.extract(sol)
    rep = analysis_residuals(model, cert)
    if args.save_certificate:
        dio.save_json(dio.certificate_to_dict(cert), args.save_certificate)
    _emit({"source": "sdp", **rep.to_dict()}, args.out)
    return EXIT_OK if rep.verified else EXIT_FAIL


def cmd_synth(args) -> int:
    model = dio.load_model(args.model)
    build_kw = {"eps_strict": args.eps_strict} if args.eps_strict is not None else {}
    if args.mode == "central":
        plant = assemble_generalized(model)
        gamma = _level(args, lambda g: build_central_problem(plant, g, args.eps_strict),
                       args.backoff)
        res = synthesize_central(model, gamma, eps_strict=args.eps_strict)
        report = res.summary()
        dio.save_json(dio.central_to_dict(res.controller, report), args.out)
    else:
        mult = None
        if args.multipliers:
            mult = dio.load_certificate(args.multipliers, model).multipliers
        gamma = _level(args, lambda g: build_existence_problem(
            model, g, args.mode, mult, **build_kw).problem, args.backoff)
        if args.mode == "distributed":
            res = synthesize_distributed(model, gamma, build_kw=build_kw)
        else:
            res = synthesize_decentralized(model, gamma, mult, build_kw=build_kw)
        report = res.summary()
        dio.save_json(dio.controllers_to_dict(res.controllers, args.mode, report), args.out)
    if args.report:
        _emit(report, args.report)
    print(f"mode={args.mode} gamma={gamma:.6g} h2={report['h2']:.6g} "
          f"verified={report['verified']}")
    return EXIT_OK if report["verified"] else EXIT_FAIL


def _closed_loop_flat(model, ctrl_doc):
    if ctrl_doc.get("format") == dio.CENTRAL_FORMAT:
        return central_closed_loop(assemble_generalized(model), dio.central_from_dict(ctrl_doc))
    net, _ = closed_loop_network(model, dio.controllers_from_dict(ctrl_doc))
    return assemble_interconnected(net)


def cmd_h2norm(args) -> int:
    model = dio.load_model(args.model)
    if args.controllers:
        sys_ = _closed_loop_flat(model, dio.load_json(args.controllers))
    else:
        sys_ = assemble_interconnected(model)
    stable, r = is_stable(sys_)
    out = {"spectral_radius": r, "stable": bool(stable)}
    if stable:
        out["h2_lyapunov"] = h2_norm_lyapunov(sys_)
        if args.grid:
            out["h2_freqgrid"] = h2_norm_freqgrid(sys_, args.grid)
    else:
        out["h2_lyapunov"] = float("inf")
    _emit(out, args.out)
    return EXIT_OK if stable else EXIT_FAIL


def cmd_simulate(args) -> int:
    model = dio.load_model(args.model)
    ctrls = dio.load_controllers(args.controllers)
    rng = np.random.default_rng(args.seed)
    nx = sum(nd.k for nd in model.nodes)
    x0 = rng.standard_normal(nx) if args.x0 == "random" else np.zeros(nx)
    seeds = [args.seed + s for s in range(args.seeds)]
    results = [simulate_closed_loop(model, ctrls, x0, None, args.noise, args.horizon, s)
               for s in seeds]
    if args.out:
        Path(args.out).write_text(results[0].to_csv())
    vals = np.array([r.tail_mean_z2 for r in results])
    net, _ = closed_loop_network(model, ctrls)
    flat = assemble_interconnected(net)
    summary = {"seeds": seeds, "horizon": results[0].horizon,
               "tail_start": results[0].tail_start,
               "tail_mean_z2": vals.tolist(), "mean": float(vals.mean()),
               "stderr": float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else None,
               "final_state_norm": float(results[0].state_norms()[-1])}
    try:
        summary["h2_squared"] = h2_norm_lyapunov(flat) ** 2
    except Unstable:
        summary["h2_squared"] = float("inf")
    _emit(summary, args.summary)
    return EXIT_OK


def cmd_bench(args) -> int:
    modes = [m for m in args.modes.split(",") if m]
    rows = bench_scaling(args.sizes, args.gamma, modes, args.budget_secs, args.seed,
                         verify_max=args.verify_max)
    text = rows_to_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    ok = all(r.status in ("ok", "over-budget", "aborted") for r in rows)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_gen_oscillator(args) -> int:
    if args.preset == "triangle":
        model = gen_oscillator(triangle_params())
    elif args.preset == "example1":
        model = example_one()
    elif args.preset == "passive-pair":
        model = passive_pair()
    else:
        model = gen_oscillator(random_cycle_params(args.cycle, args.seed, args.T))
    dio.save_json(dio.model_to_dict(model), args.out)
    return EXIT_OK


# parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="disth2", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def level_flags(sp):
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--gamma", type=float, help="performance level")
        g.add_argument("--bisect", type=_bracket, metavar="LO:HI",
                       help="bisect the smallest feasible level in [LO, HI]")
        sp.add_argument("--rel-tol", type=float, default=1e-3, help="bisection tolerance")
        sp.add_argument("--eps-strict", type=float, default=None,
                        help="strictness margin of the SDP constraints")

    a = sub.add_parser("analyze", help="check or search an analysis certificate")
    a.add_argument("model")
    a.add_argument("--certificate", help="certificate file to check")
    a.add_argument("--save-certificate", help="write the certificate found by the SDP")
    a.add_argument("--out", help="report file (default stdout)")
    level_flags(a)
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("synth", help="synthesize and verify controllers")
    s.add_argument("model")
    s.add_argument("--mode", choices=("distributed", "decentralized", "central"),
                   default="distributed")
    s.add_argument("--multipliers", help="certificate file whose multipliers are kept fixed "
                                         "(decentralized)")
    s.add_argument("--out", required=True, help="controller file")
    s.add_argument("--report", help="verification report file")
    s.add_argument("--backoff", type=float, default=0.05,
                   help="relative increase of the bisected level before construction")
    level_flags(s)
    s.set_defaults(func=cmd_synth)

    h = sub.add_parser("h2norm", help="H2 norm of the open or closed loop")
    h.add_argument("model")
    h.add_argument("--controllers")
    h.add_argument("--grid", type=int, default=0, help="also evaluate on a frequency grid")
    h.add_argument("--out")
    h.set_defaults(func=cmd_h2norm)

    m = sub.add_parser("simulate", help="simulate a controlled network")
    m.add_argument("model")
    m.add_argument("--controllers", required=True)
    m.add_argument("--noise", default="white(1)", help="zero | white(VAR)")
    m.add_argument("--x0", choices=("zero", "random"), default="zero")
    m.add_argument("--horizon", type=int, default=2000)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    m.add_argument("--out", help="CSV series of the first seed")
    m.add_argument("--summary", help="JSON summary (default stdout)")
    m.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bench", help="scaling benchmark on cycle oscillator networks")
    b.add_argument("--sizes", type=_sizes, default=[3, 10, 50])
    b.add_argument("--gamma", type=float, default=10.0)
    b.add_argument("--modes", default="distributed,central")
    b.add_argument("--budget-secs", type=float, default=600.0)
    b.add_argument("--seed", type=int, default=20240601)
    b.add_argument("--verify-max", type=int, default=50,
                   help="largest L whose distributed controllers are also verified")
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    g = sub.add_parser("gen-oscillator", help="write a model file")
    g.add_argument("--preset", choices=("triangle", "example1", "passive-pair"))
    g.add_argument("--cycle", type=int, help="random cycle with this many nodes")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--T", type=float, default=0.1, help="sampling time")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_oscillator)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    needs_level = args.command == "synth" or (args.command == "analyze" and not args.certificate)
    if needs_level and args.gamma is None and args.bisect is None:
        parser.error(f"{args.command} needs --gamma or --bisect")
    if args.command == "gen-oscillator" and args.preset is None and args.cycle is None:
        parser.error("gen-oscillator needs --preset or --cycle")
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (HypothesisViolated, SingularZ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except ReconstructionError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return EXIT_RECONSTRUCTION
    except (Infeasible, InfeasibleAtHi, NumericalFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except Disth2Error as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
