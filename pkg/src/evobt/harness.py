"""Experiment orchestration: repeated evolutions, seeding, and CSV output."""
from __future__ import annotations

import logging
import math
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from evobt.bt import SkillRegistry
from evobt.config import ExperimentConfig
from evobt.fitness import evaluate
from evobt.gp import EvolutionTrace, Individual, evolve, gate_seeds
from evobt.llm import (
    ChatCompletionProvider,
    ReplayProvider,
    SeedRequestLog,
    build_prompt,
    generate_candidates,
)
from evobt.text import serialize
from evobt.world import get_scenario

log = logging.getLogger(__name__)

TRACE_HEADER = "run_id,generation,episode,best_J,best_nodes"
SUMMARY_HEADER = "run_id,episodes_to_target,best_J,best_tree,wall_time_s"
CURVE_HEADER = "episode,mean_best_J"
COMPARE_HEADER = "method,run_id,episode,best_J"


def fmt(x: float) -> str:
    return f"{x:.6g}"


def _csv_field(text: str) -> str:
    if any(c in text for c in ',"\n'):
        return '"' + text.replace('"', '""') + '"'
    return text


def write_lines(path: Path, header: str, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


@dataclass
class RunResult:
    run_id: int
    master_seed: int
    best: Individual
    trace: EvolutionTrace
    episodes_to_target: Optional[int]
    wall_time_s: float


@dataclass
class SeedingResult:
    candidates: list
    log: SeedRequestLog
    survivors: list = field(default_factory=list)
    threshold: float = -math.inf


def make_provider(cfg: ExperimentConfig, base: Optional[Path] = None):
    if cfg.seeding.mode == "replay":
        return ReplayProvider(cfg.replay_dir(base))
    return ChatCompletionProvider(cfg.seeding.provider)


def request_seeds(cfg: ExperimentConfig, base: Optional[Path] = None) -> SeedingResult:
    """Prompt the provider for ``n_seeds`` valid candidates (no fitness gate)."""
    registry = SkillRegistry.default(get_scenario(cfg.scenario).tables)
    bundle = build_prompt(get_scenario(cfg.scenario), registry, cfg.seeding.task_text,
                          cfg.seeding.image)
    # replayed replies have no meaningful latency; a constant clock keeps the
    # log byte-identical across reruns
    clock = (lambda: 0.0) if cfg.seeding.mode == "replay" else time.perf_counter
    trees, seed_log = generate_candidates(make_provider(cfg, base), bundle, cfg.seeding.n_seeds,
                                          registry, cfg.seeding.max_attempts, clock=clock)
    return SeedingResult(trees, seed_log)


def run_seeding(cfg: ExperimentConfig, base: Optional[Path] = None) -> SeedingResult:
    """Request seeds and apply the fitness gate, as the seed command does."""
    result = request_seeds(cfg, base)
    eval_cfg = cfg.eval_config(cfg.master_seed)
    result.threshold = cfg.seeding.threshold(eval_cfg)
    result.survivors = gate_seeds(result.candidates, lambda t: evaluate(t, eval_cfg),
                                  result.threshold)
    return result


def run_experiment(cfg: ExperimentConfig, base: Optional[Path] = None,
                   seeds: Optional[list] = None) -> tuple:
    """Run ``cfg.runs`` evolutions; returns (results, seeding or None)."""
    seeding = None
    if seeds is None and cfg.seeding.mode != "none":
        seeding = request_seeds(cfg, base)
        seeds = seeding.candidates
    results = []
    for run_id in range(cfg.runs):
        seed = cfg.master_seed + run_id
        eval_cfg = cfg.eval_config(seed)
        threshold = cfg.seeding.threshold(eval_cfg) if seeds else None
        start = time.perf_counter()
        best, trace = evolve(cfg.gp, eval_cfg, seeds=seeds, master_seed=seed, threshold=threshold)
        elapsed = time.perf_counter() - start
        results.append(RunResult(run_id, seed, best, trace, trace.episodes_to(cfg.target_J), elapsed))
        log.info("run %d: best_J=%.4f episodes=%d", run_id, trace.best_J, len(trace.rows))
    return results, seeding


def mean_curve(traces: list) -> list:
    """Mean best-so-far J per episode index, each trace forward-filled to the longest."""
    length = max((len(t.rows) for t in traces), default=0)
    curve = []
    for i in range(length):
        values = [t.rows[min(i, len(t.rows) - 1)].best_J for t in traces if t.rows]
        curve.append(math.fsum(values) / len(values))
    return curve


def median_episodes(results: list, budget: int) -> float:
    """Median episodes-to-target; runs that miss the target count as budget + 1."""
    return statistics.median(r.episodes_to_target if r.episodes_to_target is not None else budget + 1
                             for r in results)


def trace_rows(run_id: int, trace: EvolutionTrace):
    for row in trace.rows:
        yield (str(run_id), str(row.generation), str(row.episode), fmt(row.best_J), str(row.best_nodes))


def write_experiment(cfg: ExperimentConfig, results: list, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for r in results:
        write_lines(out / f"trace_run{r.run_id:02d}.csv", TRACE_HEADER, trace_rows(r.run_id, r.trace))
    summary = []
    for r in results:
        summary.append((
            str(r.run_id),
            "" if r.episodes_to_target is None else str(r.episodes_to_target),
            fmt(r.trace.best_J),
            _csv_field(r.best.key if r.best else ""),
            fmt(r.wall_time_s) if cfg.record_wall_time else "",
        ))
    write_lines(out / "summary.csv", SUMMARY_HEADER, summary)
    curve = mean_curve([r.trace for r in results])
    write_lines(out / "curve.csv", CURVE_HEADER,
                ((str(i + 1), fmt(v)) for i, v in enumerate(curve)))


def compare_rows(label: str, results: list):
    for r in results:
        for row in r.trace.rows:
            yield (_csv_field(label), str(r.run_id), str(row.episode), fmt(row.best_J))


def write_seeds(survivors: list, seed_log: SeedRequestLog, out: Path) -> list:
    out.mkdir(parents=True, exist_ok=True)
    for old in out.glob("seed_*.bt"):
        old.unlink()
    paths = []
    for i, ind in enumerate(survivors, 1):
        path = out / f"seed_{i:03d}.bt"
        path.write_text(serialize(ind.tree) + "\n", encoding="utf-8", newline="\n")
        paths.append(path)
    seed_log.to_jsonl(out / "seed_log.jsonl")
    return paths
