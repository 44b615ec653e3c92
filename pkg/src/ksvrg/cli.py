"""``ksvrg`` command line: synth, solve-ref, run, verify.

Exit codes: 0 success, 1 runtime failure or failed verification, 2 bad
flags or parameters outside a method's stated preconditions.
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from . import harness, theory
from .data import load_svmlight, save_svmlight, synth_logistic
from .objective import FiniteSumObjective, Loss
from .optim import Method


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _eta(text: str):
    if text == "theory":
        return text
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--eta must be a positive number or 'theory', got {text!r}")
    if not v > 0:
        raise argparse.ArgumentTypeError("--eta must be positive")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _add_problem(p, default_loss="logistic"):
    p.add_argument("--dataset", default="synth", help="SVMlight file, or 'synth' (default)")
    p.add_argument("--n", type=_positive, default=1000, help="synthetic points")
    p.add_argument("--d", type=_positive, default=20, help="synthetic features")
    p.add_argument("--seed", type=int, default=0, help="synthetic data seed")
    p.add_argument("--separability", type=float, default=0.5)
    p.add_argument("--loss", choices=[l.value for l in Loss], default=default_loss)
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="ridge weight (default 1/n; 0 for sigmoid)")


def _objective(args) -> tuple[str, FiniteSumObjective]:
    if args.dataset == "synth":
        ds = synth_logistic(args.n, args.d, args.seed, args.separability)
        name = f"synth(n={args.n},d={args.d},seed={args.seed},separability={args.separability})"
    else:
        ds, name = load_svmlight(args.dataset), args.dataset
    if args.lam is not None and args.lam < 0:
        raise UsageError("--lambda must be >= 0")
    return name, FiniteSumObjective(ds, Loss(args.loss), args.lam)


def _need_convex(obj):
    if obj.mu <= 0:
        raise UsageError("convex theory needs mu > 0 (strongly convex loss with lambda > 0)")


def _write_reference(path, ref: theory.ReferenceSolution):
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"f_star = {ref.f_star!r}\n")
        fh.write(f"grad_norm = {ref.grad_norm!r}\n")
        fh.write("x_star = " + ",".join(repr(float(v)) for v in ref.x_star) + "\n")


def _read_reference(path, obj) -> theory.ReferenceSolution:
    vals = harness.read_manifest(path)
    try:
        x = np.array([float(t) for t in vals["x_star"].split(",")])
        f_star = float(vals["f_star"])
    except (KeyError, ValueError) as exc:
        raise RuntimeError(f"malformed reference file {path}: {exc}")
    if x.shape != (obj.dim,):
        raise RuntimeError(f"reference dimension {x.size} does not match data dimension {obj.dim}")
    g = obj.full_gradient(x)
    return theory.ReferenceSolution(x, f_star, float(np.linalg.norm(g)), obj.component_gradients(x))


# --- subcommands --------------------------------------------------------


def cmd_synth(args) -> int:
    ds = synth_logistic(args.n, args.d, args.seed, args.separability)
    save_svmlight(ds, args.out)
    print(f"wrote {ds.n} points, {ds.dim} features to {args.out}")
    return 0


def cmd_solve_ref(args) -> int:
    _, obj = _objective(args)
    _need_convex(obj)
    ref = theory.solve_reference(obj, args.tol)
    _write_reference(args.out, ref)
    print(f"f* = {ref.f_star!r}  ||grad f(x*)|| = {ref.grad_norm:.3e}  ({ref.iterations} Newton steps)")
    return 0


def cmd_run(args) -> int:
    name, obj = _objective(args)
    methods = [Method.parse(m) for m in args.method]
    if args.eta == "theory":
        _need_convex(obj)
    grid = harness.ExperimentGrid(methods, args.k or [1], args.seeds, args.eta, args.outer_loops, args.q)
    for key in grid.cells():
        try:
            harness.resolve_eta(grid.eta, key.method, obj, key.k, grid.q)
        except ValueError as exc:
            raise UsageError(str(exc))
    ref = None
    if args.ref is not None:
        ref = _read_reference(args.ref, obj)
    elif args.ref_tol is not None:
        _need_convex(obj)
        ref = theory.solve_reference(obj, args.ref_tol)
    res = harness.run_experiment(grid, obj, ref, jobs=args.jobs, record_wall=args.record_wall_time)
    harness.write_csv(res.rows, args.out)
    entries = harness.manifest_entries(name, obj, grid)
    entries["csv"] = args.out
    entries["rows"] = len(res.rows)
    entries["failed_cells"] = len(res.errors)
    harness.write_manifest(args.manifest or f"{args.out}.manifest", entries)
    for key, msg in res.errors.items():
        print(f"cell {key.method} k={key.k} seed={key.seed} failed: {msg}", file=sys.stderr)
    print(f"wrote {len(res.rows)} rows to {args.out}")
    return 1 if res.errors else 0


def cmd_verify(args) -> int:
    if args.theorem == 3:
        args.loss = args.loss or "sigmoid"
    else:
        args.loss = args.loss or "logistic"
    _, obj = _objective(args)
    report_path = args.report
    if args.theorem == 3:
        sched = theory.nonconvex_schedule(obj.smoothness, obj.n, args.outer_loops)
        sched, cert = theory.verify_nonconvex(obj, args.seeds, args.outer_loops, sched, args.f_lb)
        ok_gamma = sched.Gamma_min >= sched.default_lower_bound
        lines = [
            "theorem = 3",
            f"n = {obj.n}",
            f"L = {obj.smoothness!r}",
            f"eta = {sched.eta!r}",
            f"ell = {sched.ell}",
            f"gamma = {sched.gamma_nc!r}",
            f"b1 = {sched.b1!r}",
            f"Gamma = {sched.Gamma_min!r}",
            f"Gamma_lower_bound = {sched.default_lower_bound!r}",
            f"mean_grad_sq_sum = {cert.mean_sum!r}",
            f"bound = {cert.bound!r}",
            f"margin = {cert.margin!r}",
            f"result = {'pass' if cert.passed and ok_gamma else 'fail'}",
        ]
        text = "\n".join(lines) + "\n"
        table = "m,c,Gamma\n" + "".join(f"{m},{c!r},{g!r}\n" for m, (c, g) in enumerate(zip(sched.c_seq, sched.Gamma_seq)))
        passed = cert.passed and ok_gamma
    else:
        _need_convex(obj)
        method = Method.KSVRG_V2 if args.theorem == 1 else Method.KSVRG_V1
        ref = theory.solve_reference(obj)
        res = theory.verify_convex(obj, method, args.k, args.seeds, args.outer_loops, q=args.q, ref=ref, slack=args.slack)
        for m, r in enumerate(res.mean_ratios):
            print(f"m={m:4d}  mean ratio {r:.6f}  bound {res.bound:.6f}  {'ok' if r <= res.bound else 'VIOLATION'}")
        text, table, passed = f"theorem = {args.theorem}\n" + res.report(), res.csv(), res.passed
    sys.stdout.write(text)
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(text)
    with open(report_path + ".csv", "w", encoding="ascii") as fh:
        fh.write(table)
    return 0 if passed else 1


# --- wiring -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ksvrg", description="k-SVRG and baseline finite-sum optimizers")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic logistic dataset in SVMlight format")
    p.add_argument("--n", type=_positive, required=True)
    p.add_argument("--d", type=_positive, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--separability", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("solve-ref", help="high-precision minimizer of a strongly convex problem")
    _add_problem(p)
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve_ref)

    p = sub.add_parser("run", help="run a method/k/seed grid and write a trace CSV")
    _add_problem(p)
    p.add_argument("--method", action="append", required=True, choices=[m.value for m in Method])
    p.add_argument("--k", action="append", type=_positive)
    p.add_argument("--eta", type=_eta, required=True, help="stepsize, or 'theory'")
    p.add_argument("--q", type=_positive, default=None, help="k-SVRG-V2 subset size (default ell)")
    p.add_argument("--outer-loops", type=int, default=20)
    p.add_argument("--seeds", type=_int_list, default=[0])
    p.add_argument("--ref", default=None, help="reference file from solve-ref")
    p.add_argument("--ref-tol", type=float, default=None, help="solve a reference first, to this gradient norm")
    p.add_argument("--jobs", type=_positive, default=1)
    p.add_argument("--record-wall-time", action="store_true", help="fill wall_ms (otherwise nan)")
    p.add_argument("--manifest", default=None, help="default: <out>.manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="check a convergence guarantee empirically")
    _add_problem(p, default_loss=None)
    p.add_argument("--theorem", type=int, choices=[1, 2, 3], required=True)
    p.add_argument("--k", type=_positive, default=10)
    p.add_argument("--q", type=_positive, default=None)
    p.add_argument("--outer-loops", type=int, default=30)
    p.add_argument("--seeds", type=_int_list, default=list(range(20)))
    p.add_argument("--slack", type=float, default=0.05)
    p.add_argument("--f-lb", type=float, default=0.0, help="lower bound on f* for the non-convex certificate")
    p.add_argument("--report", default="verify-report.txt")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        return args.func(args)
    except (UsageError, theory.TheoryPreconditionError) as exc:
        sub.print_usage(sys.stderr)
        print(f"ksvrg {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"ksvrg {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
