"""Command-line interface: ``flexdeepc {collect,run,modal,compare}``."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

from .beam_fe import assemble, modal_frequencies
from .scenarios import (CONTROLLERS, SCENARIO_KINDS, CollectionError, ConfigError, ScenarioConfig,
                        ScenarioSpec, collect_from_config, compare, dump_config, export, load_config, run_scenario, write_summary)
from .trajectory import Trajectory

log = logging.getLogger("flexdeepc")


def _config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _fmt_time(t: float) -> str:
    return "not settled" if math.isinf(t) else f"{t:.2f}"


def _print_table(results) -> None:
    print(f"{'scenario':<16}{'controller':<12}{'cost':>14}{'settling (s)':>16}{'peak torque':>14}")
    for r in results:
        flag = "  (error)" if r.error is not None else ""
        print(f"{r.spec.kind:<16}{r.spec.controller:<12}{r.accumulated_cost:>14.2f}"
              f"{_fmt_time(r.settling_time):>16}{r.peak_torque:>14.4f}{flag}")


def cmd_collect(args) -> int:
    cfg = _config(args)
    traj = collect_from_config(cfg)
    traj.to_csv(args.output)
    print(f"wrote {len(traj)} samples to {args.output}")
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    controller = args.controller or ("none" if args.scenario == "free_vibration"
                                     else "pd" if args.scenario == "data_collection" else "deepc")
    spec = ScenarioSpec.from_config(args.scenario, controller, cfg)
    data = None
    if controller == "deepc":
        data = Trajectory.from_csv(args.data) if args.data else collect_from_config(cfg)
    result = run_scenario(spec, cfg, data)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{spec.kind}_{spec.controller}"
    export(result, out / f"{stem}.csv")
    write_summary([result], out / f"{stem}_summary.csv")
    for note in result.notes:
        log.info(note)
    _print_table([result])
    return 1 if result.error is not None else 0


def cmd_modal(args) -> int:
    cfg = _config(args)
    system = assemble(cfg.beam_model())
    free = modal_frequencies(system)
    locked = modal_frequencies(system, lock_hub=True)
    print(f"{'mode':>4}{'free hub (rad/s)':>20}{'locked hub (rad/s)':>22}")
    for i in range(min(args.count, locked.size)):
        print(f"{i + 1:>4}{free[i]:>20.6f}{locked[i]:>22.6f}")
    return 0


def cmd_compare(args) -> int:
    cfg = _config(args)
    data = Trajectory.from_csv(args.data) if args.data else None
    results = compare(cfg, data)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    for r in results:
        export(r, out / f"{r.spec.kind}_{r.spec.controller}.csv")
    write_summary(results, out / "summary.csv")
    _print_table(results)
    return 0


def cmd_config(args) -> int:
    dump_config(_config(args), args.output)
    print(f"wrote {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flexdeepc", description=__doc__)
    parser.add_argument("--config", help="key = value configuration file (defaults built in)")
    parser.add_argument("--seed", type=int, default=None, help="override the configured seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="PD data collection to a trajectory CSV")
    p.add_argument("-o", "--output", default="collection.csv")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("run", help="run one scenario")
    p.add_argument("scenario", choices=SCENARIO_KINDS)
    p.add_argument("--controller", choices=CONTROLLERS)
    p.add_argument("--data", help="trajectory CSV for DeePC (collected on the fly if omitted)")
    p.add_argument("--outdir", default="results")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("modal", help="natural frequencies of the discretised beam")
    p.add_argument("-n", "--count", type=int, default=6)
    p.set_defaults(func=cmd_modal)

    p = sub.add_parser("compare", help="cost and settling time per controller per scenario")
    p.add_argument("--data", help="trajectory CSV for DeePC (collected on the fly if omitted)")
    p.add_argument("--outdir", default="results")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("config", help="write the effective configuration")
    p.add_argument("-o", "--output", default="flexdeepc.cfg")
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CollectionError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
