"""Batch command line: validate, run, pi, nash-check, capture-study, export-plots.

Exit codes: 0 success, 1 validation failure, 2 runtime divergence or
non-convergence, 3 I/O error.  Primary outputs are deterministic given the
config and seed; timestamps only go to ``meta.json``.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, load_config, validate
from .dynamics import AgentId
from .engine import Simulator, nash_perturbation_check, pi_samples, prepare
from .errors import LearningDivergence, NonConvergence, RankDeficiencyError, SimulationDivergence
from .export import TraceSchemaError, export_tables
from .learning import policy_iteration, write_weights

log = logging.getLogger("mpe_games")

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3
OUTPUT_ENV = "MPE_OUTPUT_DIR"


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_meta(out: Path, args, extra=None):
    meta = {
        "version": __version__,
        "command": args.command,
        "argv": sys.argv[1:],
        "written_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    meta.update(extra or {})
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _dump(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load(args):
    return load_config(args.config, overrides=args.set, seed=args.seed)


def _write_trace(out: Path, trace):
    with open(out / "trace.csv", "w", newline="") as fh:
        trace.write_csv(fh)
    with open(out / "events.jsonl", "w") as fh:
        trace.write_events(fh)


def cmd_validate(args) -> int:
    cfg = _load(args)
    problems = validate(cfg)
    if problems:
        print(f"{args.config}: invalid")
        for p in problems:
            print(f"  - {p}")
        return EXIT_INVALID
    print(f"{args.config}: valid")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    setup = prepare(cfg)
    sim = Simulator(setup)
    try:
        trace = sim.run()
    except (SimulationDivergence, LearningDivergence) as exc:
        if getattr(exc, "trace", None) is not None:
            _write_trace(out, exc.trace)
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    _write_trace(out, trace)
    _dump(out / "summary.json", trace.summary())
    with open(out / "weights.csv", "w", newline="") as fh:
        write_weights(setup.approx, fh)
    _write_meta(out, args, {"config": str(args.config)})
    s = trace.summary()
    print(f"{s['steps']} steps, all captured at {s['all_captured_time']}")
    return EXIT_OK


def _write_history(path, history, bellman):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "value_change", "mean_abs_bellman"])
        for k, h in enumerate(history, start=1):
            b = bellman[k - 1] if k - 1 < len(bellman) else float("nan")
            w.writerow([k, format(h, ".17g"), format(b, ".17g")])


def cmd_pi(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    setup = prepare(cfg, run_pi=False)
    p = cfg.raw["pi"]
    try:
        res = policy_iteration(
            setup.approx, pi_samples(cfg, setup.models), setup.top, setup.weights, setup.models,
            float(p["tolerance"]), int(p["max_iters"]),
        )
    except NonConvergence as exc:
        _write_history(out / "pi_history.csv", exc.history, [])
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (RankDeficiencyError, LearningDivergence) as exc:
        print(f"policy iteration failed: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    _write_history(out / "pi_history.csv", res.history, res.bellman)
    with open(out / "weights.csv", "w", newline="") as fh:
        write_weights(res.approx, fh)
    _dump(out / "summary.json", {
        "iterations": res.iterations,
        "converged": res.converged,
        "final_value_change": res.history[-1],
        "final_mean_abs_bellman": res.bellman[-1],
        "config_hash": cfg.config_hash(),
    })
    _write_meta(out, args, {"config": str(args.config)})
    print(f"converged in {res.iterations} iterations, final change {res.history[-1]:.3e}")
    return EXIT_OK


def cmd_nash(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    setup = prepare(cfg)
    factors = [float(f) for f in args.factors.split(",")] if args.factors else list(cfg.raw["nash"]["factors"])
    rollouts = args.rollouts or int(cfg.raw["nash"]["rollouts"])
    agents = [AgentId.parse(a) for a in args.agents.split(",")] if args.agents else setup.agents
    rows = []
    for a in agents:
        table = nash_perturbation_check(cfg, setup.approx, a, [1.0] + [f for f in factors if f != 1.0], rollouts)
        base = table[0]
        for r in table:
            r["holds"] = bool(r["mean"] >= base["mean"] - 2.0 * base["se"])
        rows += table
    with open(out / "nash.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ["agent", "factor", "mean", "std", "se", "rollouts", "holds"], lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (format(v, ".17g") if isinstance(v, float) else v) for k, v in r.items()})
    _write_meta(out, args, {"config": str(args.config)})
    bad = [r for r in rows if not r["holds"]]
    print(f"{len(rows) - len(bad)}/{len(rows)} deviation rows satisfy the equilibrium inequality")
    return EXIT_OK


def cmd_capture_study(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    paired = args.paired or cfg.raw["capture_study"]["paired"]
    if not paired:
        raise ConfigError("capture-study needs a paired config (capture_study.paired or --paired)")
    paired_path = Path(paired) if args.paired else cfg.resolve(paired)
    rows = []
    for seed in range(cfg.seed, cfg.seed + args.seeds):
        for label, path in (("selection", Path(args.config)), ("frozen", paired_path)):
            c = load_config(path, overrides=args.set if label == "selection" else None, seed=seed)
            trace = Simulator(prepare(c)).run()
            t = trace.all_captured_time
            rows.append({"seed": seed, "scenario": c.raw["scenario"]["name"], "layout": label,
                         "captured": "yes" if t is not None else "no", "all_captured_time": "" if t is None else format(t, ".17g")})
    with open(out / "capture_study.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    _write_meta(out, args, {"config": str(args.config), "paired": str(paired_path)})
    for label in ("selection", "frozen"):
        got = sum(r["captured"] == "yes" for r in rows if r["layout"] == label)
        print(f"{label}: captured in {got}/{args.seeds} seeds")
    return EXIT_OK


def cmd_export(args) -> int:
    out = _out_dir(args)
    paths = export_tables(args.trace, out)
    _write_meta(out, args, {"trace": str(args.trace)})
    for name, p in paths.items():
        print(f"{name}: {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mpe",
        description="Input-constrained multi-agent pursuit-evasion games.",
        epilog=f"Outputs go to --out, else ${OUTPUT_ENV}, else ./out.  "
        "Exit codes: 0 ok, 1 invalid config, 2 divergence/non-convergence, 3 I/O error.",
    )
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("config", help="scenario TOML file")
            p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                           help="dotted override, e.g. scenario.t_final=5 (repeatable)")
            p.add_argument("--seed", type=int, default=None, help="override scenario.seed")
        p.add_argument("-o", "--out", default=None, help=f"output directory (default ${OUTPUT_ENV} or ./out)")
        return p

    p = common(sub.add_parser("validate", help="check a scenario config"))
    p.set_defaults(func=cmd_validate)
    p = common(sub.add_parser("run", help="simulate a scenario"))
    p.set_defaults(func=cmd_run)
    p = common(sub.add_parser("pi", help="offline policy iteration"))
    p.set_defaults(func=cmd_pi)
    p = common(sub.add_parser("nash-check", help="unilateral actor-scaling deviations"))
    p.add_argument("--agents", default="", help="comma-separated ids, e.g. p0,e1 (default all)")
    p.add_argument("--factors", default="", help="comma-separated scale factors")
    p.add_argument("--rollouts", type=int, default=0)
    p.set_defaults(func=cmd_nash)
    p = common(sub.add_parser("capture-study", help="paired runs with and without target selection"))
    p.add_argument("--paired", default="", help="paired config (default capture_study.paired)")
    p.add_argument("--seeds", type=int, default=10)
    p.set_defaults(func=cmd_capture_study)
    p = common(sub.add_parser("export-plots", help="tidy tables from a trace"), config=False)
    p.add_argument("trace", help="trace.csv written by 'run'")
    p.set_defaults(func=cmd_export)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, TraceSchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (SimulationDivergence, LearningDivergence, NonConvergence, RankDeficiencyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
