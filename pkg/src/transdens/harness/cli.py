"""Command-line entry point.

Exit codes: 0 when every check passes, 1 on check failures, 2 on usage or
configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from ..chain import MassLossError, chain_density, default_grid
from ..flow import FlowError, discrete_flow_map, flow_map
from ..frozen import frozen_density
from ..model import SamplePlan, validate
from ..parametrix import QuadratureError, series
from .config import ConfigError, ExperimentConfig, load_config
from .experiments import exact_density, run_rate_experiment
from .export import ExportError, export
from .suite import MODULES, run_invariant_suite

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    def globals_(default):
        g = argparse.ArgumentParser(add_help=False)
        g.add_argument("--config", type=Path, default=default, help="TOML experiment config")
        g.add_argument("--seed", type=_u64, default=default, help="64-bit seed")
        g.add_argument("--out", default=default, help="output directory")
        g.add_argument("--threads", type=int, default=default, help="worker threads")
        return g

    # flags may appear before or after the subcommand; the subcommand copy must not reset them
    common = globals_(argparse.SUPPRESS)
    p = _Parser(prog="transdens", description="Transition densities of diffusions and their chains.",
                parents=[globals_(None)])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("validate", parents=[common], help="probe model and chain assumptions")

    f = sub.add_parser("flow", parents=[common], help="continuous and discrete backward flows")
    f.add_argument("--t", type=float, default=0.0)
    f.add_argument("--s", type=float, default=1.0)
    f.add_argument("--y", type=_floats, default=[-1.0, 0.0, 1.0])
    f.add_argument("--n", type=int, help="chain size (defaults to the last configured n)")

    d = sub.add_parser("density", parents=[common], help="chain, frozen and exact densities")
    d.add_argument("--x", type=float, default=0.0)
    d.add_argument("--n", type=int)
    d.add_argument("--y", type=_floats, help="evaluation points (default: 101 points on the box)")

    s = sub.add_parser("series", parents=[common], help="parametrix series at (x, y)")
    s.add_argument("--x", type=float, default=0.0)
    s.add_argument("--y", type=float, default=0.0)
    s.add_argument("--R", type=int)

    sub.add_parser("rate", parents=[common], help="convergence-rate study")

    c = sub.add_parser("check", parents=[common], help="invariant suites")
    c.add_argument("--scope", default="all", help=f"comma-separated subset of {','.join(MODULES)} or all")
    c.add_argument("--quick", action="store_true", help="reduced sample sizes")
    return p


def _config(args) -> ExperimentConfig:
    overrides = {"seed": args.seed, "out_dir": args.out, "threads": args.threads}
    if getattr(args, "R", None) is not None:
        overrides["R"] = args.R
    return load_config(args.config, overrides)


def _out(cfg: ExperimentConfig, name: str) -> Path:
    return Path(cfg.out_dir) / name


def _write_csv(path: Path, header, rows):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc.strerror or exc}") from exc
    print(f"wrote {path}")


def cmd_validate(cfg: ExperimentConfig, args) -> int:
    model, chain = cfg.pair(cfg.n_values[0])
    plan = SamplePlan(cfg.box[0], cfg.box[1], seed=cfg.seed % 2 ** 32)
    ok = True
    for label, rep in (("diffusion", validate(model, plan)), ("chain", validate(chain, plan, model))):
        for c in rep.checks:
            print(f"{'PASS' if c.passed else 'FAIL'} {label}.{c.name} observed={c.observed:.4g}"
                  + (f" declared={c.declared:.4g}" if c.declared is not None else ""))
        ok &= rep.passed
    return EXIT_OK if ok else EXIT_FAIL


def cmd_flow(cfg: ExperimentConfig, args) -> int:
    n = args.n or cfg.n_values[-1]
    model, chain = cfg.pair(n)
    i, j = round(args.t * n), round(args.s * n)
    ys = np.array(args.y, float)[:, None]
    cont = flow_map(model, args.t, args.s, ys)[:, 0]
    disc = discrete_flow_map(chain, i, j, ys)[:, 0]
    rows = [(y, c, dv, abs(c - dv)) for y, c, dv in zip(args.y, cont, disc)]
    for r in rows:
        print("y={:.4g} theta={:.10g} theta_n={:.10g} gap={:.3g}".format(*r))
    _write_csv(_out(cfg, "flow.csv"), ("y", "theta", "theta_n", "gap"), rows)
    return EXIT_OK


def cmd_density(cfg: ExperimentConfig, args) -> int:
    n = args.n or cfg.n_values[-1]
    model, chain = cfg.pair(n)
    i, j = round(cfg.t_i * n), round(cfg.t_j * n)
    ys = np.array(args.y if args.y else np.linspace(cfg.box[0], cfg.box[1], 101), float)
    grid = default_grid(chain, i, j, [args.x], radius=10.0)
    pn = chain_density(chain, i, j, [args.x], ys[:, None], grid)
    frozen = [frozen_density(model, cfg.t_i, cfg.t_j, [args.x], [y]) for y in ys]
    rows = []
    for y, a, b in zip(ys, pn, frozen):
        ex = exact_density(model, cfg.t_i, cfg.t_j, args.x, float(y))
        rows.append((float(y), float(a), float(b), "" if ex is None else ex))
    _write_csv(_out(cfg, "density.csv"), ("y", "chain", "frozen", "exact"), rows)
    return EXIT_OK


def cmd_series(cfg: ExperimentConfig, args) -> int:
    model, _ = cfg.pair(cfg.n_values[0])
    sa = series(model, cfg.t_i, cfg.t_j, args.x, args.y, cfg.R, cfg.quad)
    ex = exact_density(model, cfg.t_i, cfg.t_j, args.x, args.y)
    print(f"value={sa.value:.10g} tail={sa.tail_estimate:.3g}" + ("" if ex is None else f" exact={ex:.10g}"))
    _write_csv(_out(cfg, "series.csv"), ("r", "term", "partial_sum"),
               [(r, t, p) for r, (t, p) in enumerate(zip(sa.terms, sa.partial_sums))])
    path = _out(cfg, "series.json")
    try:
        path.write_text(json.dumps(sa.to_dict(), indent=1))
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return EXIT_OK


def cmd_rate(cfg: ExperimentConfig, args) -> int:
    rep = run_rate_experiment(cfg)
    for r in rep.rows:
        print(f"n={r.n:4d} sup_raw={r.sup_raw:.4e} sup_normalized={r.sup_normalized:.4e}")
    print(f"slope={rep.slope} tail_slope={rep.tail_slope} exponent={rep.exponent} "
          f"floor={rep.floor_detected} exact_match={rep.exact_match}")
    export(rep, "csv", _out(cfg, "rate.csv"))
    export(rep, "json", _out(cfg, "rate.json"))
    print(f"wrote {_out(cfg, 'rate.csv')}")
    if rep.inconclusive:
        print("INCONCLUSIVE reference series tail above tolerance")
        return EXIT_OK
    print("PASS" if rep.passed else "FAIL")
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_check(cfg: ExperimentConfig, args) -> int:
    scope = [s.strip() for s in args.scope.split(",") if s.strip()]
    rep = run_invariant_suite(scope, cfg.seed, cfg.model_name, cfg.model_params, quick=args.quick)
    for c in rep.results:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.module}.{c.name} measured={c.measured:.4g}"
              + (f" ({c.detail})" if c.detail else ""))
    export(rep, "csv", _out(cfg, "check.csv"))
    export(rep, "json", _out(cfg, "check.json"))
    return EXIT_OK if rep.passed else EXIT_FAIL


COMMANDS = {"validate": cmd_validate, "flow": cmd_flow, "density": cmd_density,
            "series": cmd_series, "rate": cmd_rate, "check": cmd_check}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ExportError, MassLossError, FlowError, QuadratureError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
