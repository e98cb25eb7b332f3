"""afi-bench: seeded episodes, suites, ablations and field dumps."""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .episode import Episode, parse_mode, run_episode
from .fieldio import write_field, write_slice_csv
from .scenario import Perturbation, Scenario, builtin_scenario, load_scenario, reference_scenario
from .suite import (
    SuiteConfig,
    cost_trace_csv,
    emit,
    load_suite,
    record_jsonl,
    run_suite,
    write_logs,
    write_timings,
)
from .tasks import BUILTIN_TASKS
from .world import ConfigError

AXES = ("waypoints", "rollback", "fixed-step", "position-shift")


def resolve_scenario(spec: str) -> Scenario:
    """A TOML path, a built-in task name, or ``reference``."""
    if spec == "reference":
        return reference_scenario()
    if spec in BUILTIN_TASKS and not Path(spec).exists():
        return builtin_scenario(spec)
    return load_scenario(spec)


def _out_dir(path: str | None) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_run(args) -> int:
    scenario = resolve_scenario(args.scenario)
    record = run_episode(scenario, args.seed, parse_mode(args.mode))
    out = _out_dir(args.out)
    if out is not None:
        stem = f"{scenario.id}_{record.mode}_s{args.seed}".replace("(", "").replace(")", "")
        record_jsonl(record, out / f"{stem}.jsonl")
        cost_trace_csv(record, out / f"{stem}_cost.csv")
    print(json.dumps(record.summary()))
    return 0 if record.error is None else 2


def _write_suite(report, logs, out: Path | None) -> None:
    print(emit(report, "table"), end="")
    if out is None:
        return
    emit(report, "csv", out / "report.csv")
    emit(report, "jsonl", out / "report.jsonl")
    emit(report, "table", out / "report.txt")
    write_logs(logs, out / "episodes.jsonl")
    write_timings(report, out / "timings.json")


def cmd_suite(args) -> int:
    config = load_suite(args.config)
    logs: list = []
    report = run_suite(config, jobs=args.jobs, logs_out=logs)
    _write_suite(report, logs, _out_dir(args.out))
    return 0


def ablation_suite(axis: str, base: Scenario, seeds: int, values=None) -> SuiteConfig:
    """The scenario and mode grid behind each ablation axis."""
    seed_list = tuple(range(seeds))
    if axis == "waypoints":
        counts = [int(v) for v in values] if values else [3, 8, 10, 13]
        scen = tuple(base.with_overrides(id=f"{base.id}[nw={n}]", intervention={"num_waypoints": n}) for n in counts)
        return SuiteConfig("waypoint_count", scen, ("afi",), seed_list)
    if axis == "rollback":
        return SuiteConfig("rollback", (base,), ("baseline", "afi_no_rollback", "afi"), seed_list)
    if axis == "fixed-step":
        steps = [int(v) for v in values] if values else [30, 60, 90]
        modes = ("baseline", *(f"fixed_step({t})" for t in steps), "afi")
        return SuiteConfig("fixed_step", (base,), modes, seed_list)
    if axis == "position-shift":
        shifts = [float(v) for v in values] if values else [0.0, 0.05, 0.10, 0.15]
        p = base.perturbation
        label = p.label or base.task.stages[0].target_label
        scen = []
        for dx in shifts:
            pert = {"kind": "position_shift", "label": label, "dx": dx, "dy": 0.0}
            scen.append(base.with_overrides(id=f"{base.id}[dx={dx:g}]", perturbation=Perturbation(**pert)))
        return SuiteConfig("position_shift", tuple(scen), ("baseline", "afi"), seed_list)
    raise ConfigError(f"unknown ablation axis {axis!r}; expected one of {AXES}")


def cmd_ablate(args) -> int:
    base = resolve_scenario(args.scenario)
    config = ablation_suite(args.axis, base, args.seeds, args.values)
    logs: list = []
    report = run_suite(config, jobs=args.jobs, logs_out=logs)
    _write_suite(report, logs, _out_dir(args.out))
    return 0


def field_at(scenario: Scenario, t: float, seed: int = 0, mode: str = "baseline"):
    """Run an episode up to sim time ``t`` and build the field for that instant."""
    steps = max(0, int(math.ceil(t * scenario.run.control_rate - 1e-9)))
    ep = Episode(scenario.with_overrides(run={"max_steps": max(steps, 1)}), seed, mode, log_steps=False)
    if steps > 0:
        ep.run()
        if ep.record.error is not None:
            raise RuntimeError(ep.record.error)
    return ep.builder.build(ep.world, ep.target_label())


def cmd_dump_field(args) -> int:
    scenario = resolve_scenario(args.scenario)
    item = field_at(scenario, args.t, args.seed, args.mode)
    write_field(item.field, args.out)
    if args.slice_csv:
        k = int(np.unravel_index(np.argmin(item.field.values), item.field.values.shape)[2])
        write_slice_csv(item.field, args.slice_csv, axis="z", index=k)
    print(json.dumps({"out": str(args.out), "t": item.snapshot.timestamp, "target": item.target_label,
                      "resolution": item.field.grid.resolution}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="afi-bench", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one seeded episode")
    p.add_argument("--scenario", required=True, help="scenario TOML, built-in task name, or 'reference'")
    p.add_argument("--mode", default="afi", help="baseline, afi, afi_no_rollback or fixed_step(T)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="directory for the step log and cost trace")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("suite", help="run a suite file")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("ablate", help="sweep one ablation axis")
    p.add_argument("--axis", required=True, choices=AXES)
    p.add_argument("--scenario", default="reference")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--values", nargs="*", help="override the swept values")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("dump-field", help="write the field at sim time t")
    p.add_argument("--scenario", required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", default="baseline")
    p.add_argument("--slice-csv", help="also write a horizontal slice through the field minimum")
    p.set_defaults(func=cmd_dump_field)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"afi-bench: config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"afi-bench: I/O error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001
        print(f"afi-bench: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
