"""Command-line interface: simulate / check / estimate / reproduce pipelines.

Exit codes: 0 success, 1 usage or I/O error, 2 a pass/fail verification
failed.  Every run writes a summary.json that fully describes it; `rerun`
replays such a summary and reproduces the artifacts byte for byte.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .conditions import (
    RateFunction,
    gap_scan,
    hypothesis_report,
    report_bundle_to_json,
)
from .engine import default_threads, simulate_batch, steps_for
from .estimators import (
    decay_functional,
    derivative_estimate,
    ergodic_average,
    weak_error_curve,
)
from .dsl import VectorField
from .models import builtin_example, builtin_names, invariant_expectation, resolve_model
from .suite import DEFAULT_SEED, reproduce

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFICATION = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_common(p, with_paths=True):
    p.add_argument("--model", required=True, help="builtin:NAME or path to a model JSON file")
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--horizon", type=float, required=True)
    if with_paths:
        p.add_argument("--paths", type=int, default=1000)
    p.add_argument("--seed", type=lambda s: int(s, 0), default=DEFAULT_SEED)
    p.add_argument("--x0", type=str, default=None, help="comma-separated start point")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=None)


def build_parser() -> _Parser:
    parser = _Parser(prog="utweak", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("examples", help="list builtin examples or export one to JSON")
    p.add_argument("action", nargs="?", default="list", choices=["list", "export"])
    p.add_argument("--name", help="example to export")
    p.add_argument("--out", help="file to write the exported model JSON to")

    p = sub.add_parser("simulate", help="simulate an ensemble of Euler paths")
    _add_common(p)
    p.add_argument("--jacobian", choices=["auto", "variational", "exponential"], default=None)
    p.add_argument("--occupation", default=None, help="rate expression integrated along paths")

    p = sub.add_parser("check", help="audit the sufficient conditions on a model")
    p.add_argument("--model", required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--grid", default=None, help="LO:HI:STEP for the 1-D scan grid")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=lambda s: int(s, 0), default=DEFAULT_SEED)

    p = sub.add_parser("weak-error", help="weak-error curve against an exact law or finer scheme")
    _add_common(p)
    p.add_argument("--phi", required=True, help="observable expression")
    ref = p.add_mutually_exclusive_group()
    ref.add_argument("--exact", action="store_true", help="use the closed-form law oracle")
    ref.add_argument("--fine", type=int, default=None, metavar="M", help="couple to an M-times finer scheme")

    p = sub.add_parser("decay", help="occupation-decay functional E[exp(-2 int rate)]")
    _add_common(p)
    p.add_argument("--rate", default=None, help="rate expression; defaults to the LOAC rate of the fields")

    p = sub.add_parser("derivative", help="semigroup-derivative estimate along a field")
    _add_common(p)
    p.add_argument("--f", required=True, help="observable expression")
    p.add_argument("--direction", default=None, help="comma-separated field components (default: d/dx1)")
    p.add_argument("--bound-u", type=float, default=None, help="weight u(x0) of the reference bound")
    p.add_argument("--bound-rate", type=float, default=None)
    p.add_argument("--bound-norm", type=float, default=1.0)

    p = sub.add_parser("ergodic", help="running time-averages of an observable")
    _add_common(p)
    p.add_argument("--phi", required=True)

    p = sub.add_parser("reproduce", help="run a scripted example pipeline")
    p.add_argument("name", choices=builtin_names())
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--paths", type=int, default=None)
    p.add_argument("--seed", type=lambda s: int(s, 0), default=DEFAULT_SEED)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=None)

    p = sub.add_parser("rerun", help="replay a run from its summary.json")
    p.add_argument("summary", help="path to a summary.json")
    p.add_argument("--out", required=True, help="output directory for the replay")

    return parser


def _threads(args) -> int:
    t = getattr(args, "threads", None)
    return t if t else default_threads()


def _parse_x0(text, dim):
    if text is None:
        return None
    vals = [float(v) for v in text.split(",")]
    if len(vals) != dim:
        raise _UsageError(f"--x0 needs {dim} components")
    return np.array(vals)


def _resolve_with_default_x0(args):
    model, spec = resolve_model(args.model)
    x0 = _parse_x0(getattr(args, "x0", None), model.dim)
    if x0 is None:
        x0 = spec.x0 if spec is not None else np.zeros(model.dim)
    return model, spec, x0


def _write_summary(outdir, command, options, results):
    os.makedirs(outdir, exist_ok=True)
    summary = {"schema_version": 1, "command": command,
               "options": options, "results": results}
    with open(os.path.join(outdir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    return summary


def _options_dict(args, keys):
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


# ----------------------------------------------------------------------
# command implementations
# ----------------------------------------------------------------------

def _cmd_examples(args):
    if args.action == "export":
        if not args.name:
            raise _UsageError("--name is required for export")
        spec = builtin_example(args.name)
        obj = spec.model.to_json()
        text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
        if args.out:
            with open(args.out, "w") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
        return EXIT_OK
    for name in builtin_names():
        spec = builtin_example(name)
        print(f"{name:13s} dim={spec.model.dim} noise={spec.model.noise}  {spec.notes.get('summary', '')}")
    return EXIT_OK


def _cmd_simulate(args):
    model, spec, x0 = _resolve_with_default_x0(args)
    n_steps = steps_for(args.horizon, args.delta)
    occupation = None
    if args.occupation:
        occupation = RateFunction.from_expression(args.occupation, model.dim).columns
    batch = simulate_batch(model, x0, args.delta, n_steps, args.paths, args.seed,
                           jacobian=args.jacobian, occupation=occupation, threads=_threads(args))
    os.makedirs(args.out, exist_ok=True)
    batch.to_csv(os.path.join(args.out, "paths.csv"))
    batch.write_metadata(os.path.join(args.out, "paths.meta.json"))
    results = {"exploded_paths": int(np.sum(batch.exploded)),
               "final_mean": batch.states[-1].mean(axis=1).tolist()}
    _write_summary(args.out, "simulate",
                   _options_dict(args, ["model", "delta", "horizon", "paths", "seed", "x0",
                                        "jacobian", "occupation"]), results)
    print(f"simulate: {args.paths} paths, {n_steps} steps -> {args.out}")
    return EXIT_OK


def _cmd_check(args):
    model, spec, _ = _resolve_with_default_x0(args)
    if args.grid:
        lo, hi, step = (float(v) for v in args.grid.split(":"))
        grid = (lo, hi, step)
    elif spec is not None:
        grid = spec.grid
    else:
        grid = (-60.0, 60.0, 0.01)
    alpha = args.alpha if args.alpha is not None else (spec.alpha if spec else 0.5)
    bundle = hypothesis_report(model, alpha=alpha, grid=grid, spec=spec)
    failed = [k for k, v in bundle["checks"].items() if v["verdict"] == "fail"]
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.json"), "w") as fh:
            fh.write(report_bundle_to_json(bundle) + "\n")
        if model.dim == 1 and model.additive and alpha is not None:
            from .conditions import cosh_ratio
            rate = RateFunction.from_fields(model.drift_strat, model.diffusions[0])
            result = gap_scan(rate, lambda x: cosh_ratio(model, alpha, x), grid, alpha=alpha)
            result.to_csv(os.path.join(args.out, "gap.csv"), label=model.label or args.model)
        _write_summary(args.out, "check",
                       _options_dict(args, ["model", "alpha", "grid"]),
                       {"failed_checks": failed,
                        "verdicts": {k: v["verdict"] for k, v in bundle["checks"].items()}})
    for key, chk in bundle["checks"].items():
        print(f"{key:18s} {chk['verdict']}")
        if chk["verdict"] == "fail" and chk.get("witness"):
            print(f"{'':18s} witness: {chk['witness']}")
    if "gap" in bundle:
        g = bundle["gap"]
        print(f"gap infimum {g['infimum']:.6g} (rate {g['lambda0']:.6g}) at x={g['argmin']:.6g}")
    return EXIT_VERIFICATION if failed else EXIT_OK


def _cmd_weak_error(args):
    model, spec, x0 = _resolve_with_default_x0(args)
    reference = "exact" if args.exact or args.fine is None else args.fine
    target = spec if spec is not None else model
    curve = weak_error_curve(target, args.phi, x0=x0, delta=args.delta, horizon=args.horizon,
                             n_paths=args.paths, seed=args.seed, reference=reference,
                             threads=_threads(args))
    os.makedirs(args.out, exist_ok=True)
    curve.to_csv(os.path.join(args.out, "weak_error.csv"), label=model.label or args.model)
    results = {"sup": curve.sup, "divergent": curve.divergent,
               "explosion_fraction": curve.explosion_fraction}
    _write_summary(args.out, "weak-error",
                   _options_dict(args, ["model", "phi", "delta", "horizon", "paths", "seed",
                                        "x0", "exact", "fine"]), results)
    print(f"weak-error sup {curve.sup:.6g}" + (" (divergent)" if curve.divergent else ""))
    return EXIT_OK


def _cmd_decay(args):
    model, spec, x0 = _resolve_with_default_x0(args)
    if args.rate:
        rate = RateFunction.from_expression(args.rate, model.dim)
    else:
        if model.dim != 1:
            raise _UsageError("--rate is required for multi-dimensional models")
        rate = RateFunction.from_fields(model.drift_strat, model.diffusions[0])
    n_steps = steps_for(args.horizon, args.delta)
    curve = decay_functional(model, rate, x0=x0, delta=args.delta, n_steps=n_steps,
                             n_paths=args.paths, seed=args.seed, threads=_threads(args))
    os.makedirs(args.out, exist_ok=True)
    curve.to_csv(os.path.join(args.out, "decay.csv"), label=model.label or args.model)
    with open(os.path.join(args.out, "decay_fit.json"), "w") as fh:
        json.dump(curve.fit_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_summary(args.out, "decay",
                   _options_dict(args, ["model", "rate", "delta", "horizon", "paths", "seed", "x0"]),
                   curve.fit_json())
    print(f"decay fit rate {curve.fit.rate:.6g}")
    return EXIT_OK


def _cmd_derivative(args):
    model, spec, x0 = _resolve_with_default_x0(args)
    if args.direction:
        sources = [s.strip() for s in args.direction.split(",")]
        direction = VectorField.parse(sources, model.dim)
    else:
        direction = VectorField.parse(["1"] + ["0"] * (model.dim - 1), model.dim)
    bound = None
    if args.bound_u is not None and args.bound_rate is not None:
        bound = (args.bound_u, args.bound_rate, args.bound_norm)
    n_steps = steps_for(args.horizon, args.delta)
    curve = derivative_estimate(model, args.f, direction, x0=x0, delta=args.delta,
                                n_steps=n_steps, n_paths=args.paths, seed=args.seed,
                                bound=bound, threads=_threads(args))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "derivative.csv"), "w") as fh:
        fh.write("# schema: utweak.derivative.v1\n")
        cols = "t,estimate,stderr" + (",bound" if curve.bound is not None else "")
        fh.write(cols + "\n")
        for i, t in enumerate(curve.times):
            row = f"{t:.17g},{curve.estimate[i]:.17g},{curve.stderr[i]:.17g}"
            if curve.bound is not None:
                row += f",{curve.bound[i]:.17g}"
            fh.write(row + "\n")
    results = {"fit_rate": curve.fit.rate}
    if curve.bound is not None:
        results["bound_satisfied_everywhere"] = bool(np.all(curve.bound_satisfied))
    _write_summary(args.out, "derivative",
                   _options_dict(args, ["model", "f", "direction", "delta", "horizon", "paths",
                                        "seed", "x0", "bound_u", "bound_rate", "bound_norm"]),
                   results)
    print(f"derivative fit rate {curve.fit.rate:.6g}")
    return EXIT_OK


def _cmd_ergodic(args):
    model, spec, x0 = _resolve_with_default_x0(args)
    oracle_value = None
    if spec is not None and spec.oracle.invariant_density is not None:
        try:
            oracle_value = invariant_expectation(spec, args.phi)
        except Exception:
            oracle_value = None
    n_steps = steps_for(args.horizon, args.delta)
    curve = ergodic_average(model, args.phi, x0=x0, delta=args.delta, n_steps=n_steps,
                            n_paths=args.paths, seed=args.seed, oracle_value=oracle_value,
                            threads=_threads(args))
    os.makedirs(args.out, exist_ok=True)
    curve.to_csv(os.path.join(args.out, "ergodic.csv"), label=model.label or args.model)
    results = {"final_average": float(curve.average[-1])}
    if oracle_value is not None:
        results["oracle"] = oracle_value
        results["final_gap"] = float(curve.gap[-1])
    _write_summary(args.out, "ergodic",
                   _options_dict(args, ["model", "phi", "delta", "horizon", "paths", "seed", "x0"]),
                   results)
    print(f"ergodic average at T: {curve.average[-1]:.6g}")
    return EXIT_OK


def _cmd_reproduce(args):
    summary = reproduce(args.name, args.out, delta=args.delta, n_paths=args.paths,
                        seed=args.seed, threads=_threads(args))
    print(json.dumps(summary["results"], indent=2, sort_keys=True, default=float))
    return EXIT_OK


_RERUNNABLE = {"simulate", "weak-error", "decay", "derivative", "ergodic", "reproduce", "check"}


def _cmd_rerun(args):
    with open(args.summary) as fh:
        summary = json.load(fh)
    command = summary.get("command")
    if command not in _RERUNNABLE:
        raise _UsageError(f"cannot rerun command {command!r}")
    options = summary.get("options", {})
    argv = [command]
    if command == "reproduce":
        argv.append(options["name"])
    for key, value in options.items():
        if command == "reproduce" and key == "name":
            continue
        flag = "--" + key.replace("_", "-")
        if isinstance(value, bool):
            if value:
                argv.append(flag)
        else:
            text = str(value)
            # negative numbers and grid ranges start with '-': use --flag=value
            argv.append(f"{flag}={text}" if text.startswith("-") else flag)
            if not text.startswith("-"):
                argv.append(text)
    argv += ["--out", args.out]
    return main(argv)


_COMMANDS = {
    "examples": _cmd_examples,
    "simulate": _cmd_simulate,
    "check": _cmd_check,
    "weak-error": _cmd_weak_error,
    "decay": _cmd_decay,
    "derivative": _cmd_derivative,
    "ergodic": _cmd_ergodic,
    "reproduce": _cmd_reproduce,
    "rerun": _cmd_rerun,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
