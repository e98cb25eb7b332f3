"""Suites of seeded episodes and the reports folded from them.

A suite is scenarios x modes x seeds. Every episode is independent, so they
can run in any order or in worker processes; the report is a fold over the
per-episode summaries and never depends on completion order.

Suite file::

    name = "carrot_ablation"
    seeds = 20                 # or an explicit list, e.g. [0, 1, 2]
    modes = ["baseline", "afi"]

    [[scenarios]]
    file = "carrot_shift10.toml"   # relative to the suite file

    [[scenarios]]
    task = "place_carrot"          # or an inline scenario table
    id = "carrot_canonical"
"""

from __future__ import annotations

import csv
import io
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .episode import EpisodeRecord, parse_mode, run_episode
from .scenario import Scenario, load_scenario, scenario_from_dict
from .world import ConfigError

CSV_COLUMNS = ("scenario", "task", "condition", "mode", "k", "n", "rate")
TIMING_PHASES = ("episode_wall_s", "field_build_s", "field_s", "sampling_scoring_s", "proposal_s", "travel_wall_s", "travel_sim_s")


@dataclass(frozen=True)
class SuiteConfig:
    name: str
    scenarios: tuple[Scenario, ...]
    modes: tuple[str, ...]
    seeds: tuple[int, ...]

    def __post_init__(self):
        if not self.scenarios or not self.modes or not self.seeds:
            raise ConfigError("a suite needs at least one scenario, mode and seed")
        for m in self.modes:
            parse_mode(m)
        ids = [s.id for s in self.scenarios]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate scenario ids in suite: {ids}")

    @property
    def size(self) -> int:
        return len(self.scenarios) * len(self.modes) * len(self.seeds)


def _seeds_from(value) -> tuple[int, ...]:
    if isinstance(value, int):
        if value < 1:
            raise ConfigError("seeds must be >= 1")
        return tuple(range(value))
    if isinstance(value, list) and value and all(isinstance(v, int) for v in value):
        return tuple(value)
    raise ConfigError("seeds must be a positive count or a non-empty list of integers")


def suite_from_dict(data: dict, base_dir: Path | None = None) -> SuiteConfig:
    unknown = set(data) - {"name", "seeds", "modes", "scenarios"}
    if unknown:
        raise ConfigError(f"unknown suite key(s): {sorted(unknown)}")
    scenarios = []
    for entry in data.get("scenarios", []):
        entry = dict(entry)
        if "file" in entry:
            path = Path(entry.pop("file"))
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            if entry:
                raise ConfigError(f"scenario entry with file= takes no other keys: {sorted(entry)}")
            scenarios.append(load_scenario(path))
        else:
            scenarios.append(scenario_from_dict(entry, base_dir))
    modes = data.get("modes", ["baseline", "afi"])
    return SuiteConfig(
        str(data.get("name", "suite")),
        tuple(scenarios),
        tuple(parse_mode(m).name for m in modes),
        _seeds_from(data.get("seeds", 20)),
    )


def load_suite(path: str | Path) -> SuiteConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read suite {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return suite_from_dict(data, path.parent)


# ------------------------------------------------------------------ report
@dataclass
class Cell:
    scenario: str
    task: str
    condition: str
    mode: str
    k: int = 0
    n: int = 0

    @property
    def rate(self) -> float:
        return self.k / self.n if self.n else 0.0

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.scenario, self.condition, self.mode)


@dataclass
class SuiteReport:
    name: str
    cells: list[Cell] = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def cell(self, scenario: str, mode: str, condition: str | None = None) -> Cell:
        for c in self.cells:
            if c.scenario == scenario and c.mode == mode and (condition is None or c.condition == condition):
                return c
        raise KeyError((scenario, mode, condition))

    def rate(self, scenario: str, mode: str) -> float:
        return self.cell(scenario, mode).rate


def episode_log(record: EpisodeRecord, task: str) -> dict:
    """One jsonl line per episode; enough to rebuild the report."""
    out = {**record.summary(), "task": task, "timings": _episode_timings(record)}
    return out


def _episode_timings(record: EpisodeRecord) -> dict:
    t = {"episode_wall_s": record.timings.get("episode_wall_s", 0.0)}
    fb = record.timings.get("field_build_s") or {}
    if fb:
        t["field_build_s"] = fb["p50"]
    for phase in ("field_s", "sampling_scoring_s", "proposal_s", "travel_wall_s", "travel_sim_s"):
        vals = [it["timings"][phase] for it in record.interventions if phase in it.get("timings", {})]
        if vals:
            t[phase] = vals
    return t


def fold(logs: Iterable[dict], name: str = "suite") -> SuiteReport:
    """Aggregate per-episode logs into k/n cells and timing percentiles.

    Cells appear in first-seen order, which for suite logs is scenario-major.
    """
    cells: dict[tuple, Cell] = {}
    samples: dict[str, list[float]] = {p: [] for p in TIMING_PHASES}
    for log in logs:
        key = (log["scenario"], log["condition"], log["mode"])
        c = cells.get(key)
        if c is None:
            c = cells[key] = Cell(log["scenario"], log.get("task", log["scenario"]), log["condition"], log["mode"])
        c.n += 1
        c.k += bool(log["success"])
        for phase, v in (log.get("timings") or {}).items():
            if phase in samples:
                samples[phase].extend(v if isinstance(v, list) else [v])
    timings = {}
    for phase, v in samples.items():
        if v:
            a = np.asarray(v, dtype=float)
            timings[phase] = {
                "n": int(a.size),
                "p50": float(np.percentile(a, 50)),
                "p95": float(np.percentile(a, 95)),
                "max": float(a.max()),
            }
    return SuiteReport(name, list(cells.values()), timings)


def _job(args) -> dict:
    scenario, mode, seed = args
    rec = run_episode(scenario, seed, mode, log_steps=False)
    return episode_log(rec, scenario.task_name)


def run_suite(config: SuiteConfig, jobs: int = 1, logs_out: list | None = None) -> SuiteReport:
    """Run every (scenario, mode, seed) episode and fold the results.

    Episodes go out in a fixed order and results are collected back into that
    order, so ``jobs`` changes wall time only.
    """
    work = [(s, m, seed) for s in config.scenarios for m in config.modes for seed in config.seeds]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            logs = list(pool.map(_job, work, chunksize=max(1, len(work) // (4 * jobs))))
    else:
        logs = [_job(w) for w in work]
    if logs_out is not None:
        logs_out.extend(logs)
    return fold(logs, config.name)


# ------------------------------------------------------------------- emit
def report_csv(report: SuiteReport) -> str:
    """Header plus one row per cell. No timings, so re-runs are byte-identical."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for c in report.cells:
        w.writerow([c.scenario, c.task, c.condition, c.mode, c.k, c.n, f"{c.rate:.4f}"])
    return buf.getvalue()


def report_table(report: SuiteReport) -> str:
    """Aligned text: one row per (scenario, condition), one column per mode."""
    modes = list(dict.fromkeys(c.mode for c in report.cells))
    rows = list(dict.fromkeys((c.scenario, c.condition) for c in report.cells))
    lookup = {c.key: c for c in report.cells}
    header = ["scenario", "condition", *modes]
    body = []
    for scen, cond in rows:
        line = [scen, cond]
        for m in modes:
            c = lookup.get((scen, cond, m))
            line.append(f"{c.k}/{c.n} ({100 * c.rate:.0f}%)" if c else "-")
        body.append(line)
    widths = [max(len(str(r[i])) for r in [header, *body]) for i in range(len(header))]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*header), "  ".join("-" * w for w in widths)]
    lines += [fmt.format(*r) for r in body]
    return "\n".join(lines) + "\n"


def report_jsonl(report: SuiteReport) -> str:
    out = []
    for c in report.cells:
        out.append(json.dumps({"scenario": c.scenario, "task": c.task, "condition": c.condition,
                               "mode": c.mode, "k": c.k, "n": c.n, "rate": c.rate}, sort_keys=True))
    return "\n".join(out) + "\n"


_FORMATS = {"table": report_table, "csv": report_csv, "jsonl": report_jsonl}


def emit(report: SuiteReport, fmt: str, path: str | Path | None = None) -> str:
    if fmt not in _FORMATS:
        raise ValueError(f"unknown format {fmt!r}; expected one of {sorted(_FORMATS)}")
    text = _FORMATS[fmt](report)
    if path is not None:
        Path(path).write_text(text)
    return text


def write_timings(report: SuiteReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.timings, indent=2, sort_keys=True) + "\n")


def write_logs(logs: Iterable[dict], path: str | Path) -> None:
    with Path(path).open("w") as fh:
        for log in logs:
            fh.write(json.dumps(log, sort_keys=True) + "\n")


def read_logs(path: str | Path) -> list[dict]:
    with Path(path).open() as fh:
        return [json.loads(line) for line in fh if line.strip()]


def record_jsonl(record: EpisodeRecord, path: str | Path) -> None:
    """Per-step lines followed by one summary line with events and interventions."""
    with Path(path).open("w") as fh:
        for s in record.steps:
            fh.write(json.dumps({"type": "step", **s}) + "\n")
        tail = {"type": "summary", **record.summary(), "events": record.events,
                "interventions": record.interventions, "stage_transitions": record.stage_transitions,
                "timings": record.timings}
        fh.write(json.dumps(tail, default=_jsonable) + "\n")


def cost_trace_csv(record: EpisodeRecord, path: str | Path | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("t", "cost", "stage"))
    for s in record.steps:
        if "cost" in s:
            w.writerow((f"{s['t']:.4f}", f"{s['cost']:.6f}", s["stage"]))
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    raise TypeError(f"not serializable: {type(v).__name__}")
