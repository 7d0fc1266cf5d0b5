"""Command-line entry point: ``synthconf <subcommand> ...``.

Primary payloads (JSON or CSV) go to stdout or to ``--out``; diagnostics go
to stderr. Exit status is 0 on success, 1 on usage errors and 2 on domain
errors (bad panel, infeasible caps, solver failure, ...).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .dgp import DgpSpec, simulate
from .errors import SpecError, SynthConfError
from .estimators import (
    estimate_dr,
    estimate_horizontal,
    estimate_pca_baseline,
    estimate_placebo_set,
    estimate_vertical,
    fit_placebo_weights,
)
from .inference import ci_dr, ci_regression, placebo_test
from .mc import ExperimentSpec, emit_table, run_experiment
from .panel import HORIZONTAL, VERTICAL, TreatmentPattern, WeightSet, format_wide_csv, load_panel, save_panel
from .solver import SolverConfig, solve_horizontal, solve_vertical

NOTATION = """\
notation (model symbol -> this tool):
  N0, T0          first treated unit / period (1-based); --pattern n0,t0,n1,t1
  i < N0          control units: the first n0-1 rows of the panel CSV
  t < T0          pre-treatment periods: the first t0-1 columns
  N1, T1          number of treated units (last rows) / treated periods (last columns)
  w_h, v_h, beta  horizontal weights over pre / post periods and intercept
  w_v, v_v        vertical weights over control / treated units
  p_h, p_v        --penalty (multiplied by N0 or T0 inside the objective)
  K               --cap-scale; caps are K*T0^(-2/3), K*T1^(-2/3) (horizontal)
                  and K*N0^(-2/3), K*N1^(-2/3) (vertical)
  iota_0i, iota_1t  unit effects iota_unit, time effects iota_time in DGP JSON
  lambda_t, gamma_i endogenous factors "lambda" and loadings "gamma" in DGP JSON
"""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _emit(payload: str, out: str | None) -> None:
    if out:
        Path(out).write_text(payload, encoding="utf-8")
    else:
        sys.stdout.write(payload)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise SpecError(f"cannot read JSON {path}: {exc}") from exc


def _config(args) -> dict:
    return _read_json(args.config) if getattr(args, "config", None) else {}


def _solver_cfg(args) -> SolverConfig:
    base = dict(_config(args).get("solver", {}))
    for flag, key in (("penalty", "penalty"), ("cap_scale", "cap_scale"), ("tol", "tol"),
                      ("max_iters", "max_iters")):
        value = getattr(args, flag, None)
        if value is not None:
            base[key] = value
    return SolverConfig.from_dict(base)


def _pattern(args) -> TreatmentPattern:
    if args.pattern:
        return TreatmentPattern.parse(args.pattern)
    if args.spec:
        return DgpSpec.load(args.spec).pattern
    raise UsageError("one of --pattern or --spec is required")


def _panel(args):
    return load_panel(args.panel, _pattern(args))


def _weights(args, panel, need: tuple[str, ...]) -> dict:
    """Weight sets by direction, read from ``--weights`` or fitted."""
    if args.fit_weights:
        cfg = _solver_cfg(args)
        out = {}
        if HORIZONTAL in need:
            out[HORIZONTAL] = solve_horizontal(panel, cfg)
        if VERTICAL in need:
            out[VERTICAL] = solve_vertical(panel, cfg)
        return out
    if not args.weights:
        raise UsageError("one of --weights or --fit-weights is required")
    d = _read_json(args.weights)
    sets = [d] if "direction" in d else list(d.values())
    try:
        found = {ws.direction: ws for ws in (WeightSet.from_dict(x) for x in sets)}
    except (KeyError, TypeError) as exc:
        raise SpecError(f"malformed weights file {args.weights}: {exc}") from exc
    missing = [n for n in need if n not in found]
    if missing:
        raise SpecError(f"weights file {args.weights} lacks {', '.join(missing)} weights")
    return found


# ---------------------------------------------------------------------------
# Subcommands


def cmd_simulate(args) -> None:
    spec = DgpSpec.load(args.spec)
    if args.seed is not None:
        spec = spec.replace(seed=args.seed)
    panel, _ = simulate(spec)
    if args.out:
        save_panel(panel, args.out)
    else:
        sys.stdout.write(format_wide_csv(panel.outcomes, panel.unit_ids, panel.period_ids))


def cmd_weights(args) -> None:
    panel = _panel(args)
    cfg = _solver_cfg(args)
    out = {}
    if args.direction in (HORIZONTAL, "both"):
        out[HORIZONTAL] = solve_horizontal(panel, cfg).to_dict()
    if args.direction in (VERTICAL, "both"):
        out[VERTICAL] = solve_vertical(panel, cfg).to_dict()
    payload = out[args.direction] if args.direction != "both" else out
    _emit(_json(payload), args.out)


_NEEDS = {"horizontal": (HORIZONTAL,), "vertical": (VERTICAL,), "sdid": (HORIZONTAL, VERTICAL), "pca": ()}


def cmd_estimate(args) -> None:
    panel = _panel(args)
    if args.method == "pca":
        est = estimate_pca_baseline(panel, args.max_factors)
    else:
        ws = _weights(args, panel, _NEEDS[args.method])
        if args.method == "horizontal":
            est = estimate_horizontal(panel, ws[HORIZONTAL])
        elif args.method == "vertical":
            est = estimate_vertical(panel, ws[VERTICAL])
        else:
            est = estimate_dr(panel, ws[HORIZONTAL], ws[VERTICAL])
    _emit(_json(est.to_dict()), args.out)


def cmd_infer(args) -> None:
    panel = _panel(args)
    level = args.level if args.level is not None else _config(args).get("level", 0.95)
    ws = _weights(args, panel, _NEEDS[args.method])
    if args.method == "sdid":
        rep = ci_dr(panel, ws[HORIZONTAL], ws[VERTICAL], level, critical=args.critical)
    else:
        rep = ci_regression(panel, ws[args.method], None, args.method, level, critical=args.critical)
    _emit(_json(rep.to_dict()), args.out)


def cmd_placebo(args) -> None:
    panel = _panel(args)
    p = panel.pattern
    if p.n_treated != 1:
        raise SpecError(f"placebo inference needs exactly one treated unit, got {p.n_treated}")
    k = args.n_placebo
    if not 2 <= k <= p.n_controls - 1:
        raise SpecError(f"--n-placebo must be between 2 and {p.n_controls - 1}, got {k}")
    treated = p.n_controls
    pool = list(range(p.n_controls - (k - 1), p.n_controls)) + [treated]
    ws_h, per_unit = fit_placebo_weights(panel, pool, _solver_cfg(args))
    ests = estimate_placebo_set(panel, pool, ws_h, per_unit)
    pval = placebo_test(ests, len(pool) - 1)
    lines = ["unit,tau_hat,treated,p_value"]
    for e in ests:
        lines.append(f"{panel.unit_ids[e.unit]},{e.tau_hat!r},{int(e.unit == treated)},{pval!r}")
    _emit("\n".join(lines) + "\n", args.out)


def cmd_mc(args) -> None:
    d = _read_json(args.spec)
    if args.seed is not None:
        d["seed"] = args.seed
    spec = ExperimentSpec.from_dict(d)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = run_experiment(spec, workers=args.workers)
    emit_table(report, out / "report.csv", timing=args.timing)
    (out / "spec-echo.json").write_text(_json(spec.to_dict()), encoding="utf-8")
    if not report.valid:
        print("warning: a cell exceeded the replication failure budget", file=sys.stderr)
    sys.stdout.write((out / "report.csv").read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="synthconf",
        description="Synthetic control, synthetic DiD and confounding-aware inference on panels.",
        epilog=NOTATION,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="SUBCOMMAND")
    sub.required = True

    def panel_args(p):
        p.add_argument("--panel", required=True, help="wide CSV panel")
        p.add_argument("--pattern", help="treatment pattern n0,t0,n1,t1")
        p.add_argument("--spec", help="DGP JSON whose pattern describes the panel")

    def solver_args(p):
        p.add_argument("--penalty", type=float)
        p.add_argument("--cap-scale", type=float)
        p.add_argument("--tol", type=float)
        p.add_argument("--max-iters", type=int)
        p.add_argument("--config", help="JSON with optional 'solver' and 'level' keys")

    def weight_args(p):
        g = p.add_mutually_exclusive_group()
        g.add_argument("--weights", help="JSON weight set(s) from the weights subcommand")
        g.add_argument("--fit-weights", action="store_true", help="fit weights on the panel")

    p = sub.add_parser("simulate", help="draw a panel from a DGP spec",
                       epilog=NOTATION, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--spec", required=True, help="DGP JSON")
    p.add_argument("--seed", type=int, help="overrides the spec seed")
    p.add_argument("--out", help="CSV path (stdout if omitted)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("weights", help="fit horizontal and/or vertical weights")
    panel_args(p)
    solver_args(p)
    p.add_argument("--direction", choices=(HORIZONTAL, VERTICAL, "both"), default="both")
    p.add_argument("--out")
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("estimate", help="point estimate of the treatment effect")
    panel_args(p)
    solver_args(p)
    weight_args(p)
    p.add_argument("--method", choices=("horizontal", "vertical", "sdid", "pca"), required=True)
    p.add_argument("--max-factors", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("infer", help="estimate with standard error and interval")
    panel_args(p)
    solver_args(p)
    weight_args(p)
    p.add_argument("--method", choices=("horizontal", "vertical", "sdid"), required=True)
    p.add_argument("--level", type=float)
    p.add_argument("--critical", choices=("t", "normal"), default="t")
    p.add_argument("--out")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("placebo", help="permutation test with a single treated unit")
    panel_args(p)
    solver_args(p)
    p.add_argument("--n-placebo", type=int, required=True,
                   help="pool size including the treated unit; the last controls join the pool")
    p.add_argument("--out")
    p.set_defaults(func=cmd_placebo)

    p = sub.add_parser("mc", help="run a Monte Carlo experiment")
    p.add_argument("--spec", required=True, help="experiment JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--timing", action="store_true", help="include mean runtimes in report.json")
    p.set_defaults(func=cmd_mc)
    parser.subcommands = sub.choices
    return parser


def dispatch(argv=None) -> int:
    """Run one subcommand; returns the exit status."""
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if extra:
            # report through the subcommand parser so its usage lists the valid flags
            parser.subcommands[args.command].error(f"unrecognized arguments: {' '.join(extra)}")
        args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SynthConfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    return 0


def main() -> None:
    sys.exit(dispatch())
