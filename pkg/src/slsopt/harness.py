"""Automated convergence experiments for the line search loop.

Runs seeded sessions against simulated users, records per-step quality
metrics, and emits a deterministic CSV (per-seed rows plus per-step
median/quartile aggregates).  A random-segments baseline shares the seeded
initialization so step-0 segments coincide, isolating the value of the
model-guided proposals.  Wall-clock timings are kept on the in-memory report
only; the CSV is byte-identical across runs of the same configuration.
"""

import json
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .acquisition import AcquisitionConfig
from .embedding import EmbeddingTable, mean_endpoints
from .metrics import masked_mae  # re-exported: the harness owns the metric surface
from .oracles import NegL2Oracle, OracleConfigError, make_oracle
from .session import (GPConfig, Session, SessionConfig, build_segment,
                      draw_initial_endpoints, replay_events)

CSV_SCHEMA = "slsopt-convergence-v1"
CSV_COLUMNS = ("row", "seed", "step", "chosen_score", "best_score",
               "distance", "best_distance")

__all__ = ["ExperimentConfig", "ConvergenceReport", "ReportRow", "masked_mae",
           "run_experiment", "run_baseline", "replay_log", "load_report_csv"]


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings for one batch of seeded sessions."""

    dim: int
    steps: int = 30
    n_points: int = 20
    extension_factor: float = 1.25
    n_seeds: int = 1
    base_seed: int = 0
    oracle_kind: str = "neg_l2"
    oracle_target: object = "random"  # point, or "random" for one per seed
    temperature: float = 0.0
    endpoint_mode: str = "random"  # or "table_means"
    table_path: str | None = None
    label_a: str | None = None
    label_b: str | None = None
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    gp: GPConfig = field(default_factory=GPConfig)
    out: str | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be >= 1")
        if self.endpoint_mode not in ("random", "table_means"):
            raise ValueError(f"unknown endpoint_mode {self.endpoint_mode!r}")
        if self.endpoint_mode == "table_means":
            if not self.table_path:
                raise ValueError("table_means endpoint mode requires table_path")
            if not (self.label_a and self.label_b):
                raise ValueError("table_means endpoint mode requires label_a and label_b")


@dataclass(frozen=True)
class ReportRow:
    seed: int
    step: int
    chosen_score: float
    best_score: float
    distance: float | None
    best_distance: float | None
    wall_time: float  # in-memory diagnostics only, never written to CSV


@dataclass(frozen=True)
class AggregateRow:
    stat: str  # median | q25 | q75
    step: int
    chosen_score: float
    best_score: float
    distance: float | None
    best_distance: float | None


@dataclass
class ConvergenceReport:
    rows: list
    aggregates: list
    config: ExperimentConfig

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema: {CSV_SCHEMA}\n")
            fh.write(",".join(CSV_COLUMNS) + "\n")
            for r in self.rows:
                fh.write(",".join([
                    "obs", str(r.seed), str(r.step),
                    repr(r.chosen_score), repr(r.best_score),
                    "" if r.distance is None else repr(r.distance),
                    "" if r.best_distance is None else repr(r.best_distance),
                ]) + "\n")
            for a in self.aggregates:
                fh.write(",".join([
                    a.stat, "", str(a.step),
                    repr(a.chosen_score), repr(a.best_score),
                    "" if a.distance is None else repr(a.distance),
                    "" if a.best_distance is None else repr(a.best_distance),
                ]) + "\n")

    def final_best_scores(self):
        last = max(r.step for r in self.rows)
        return np.array([r.best_score for r in self.rows if r.step == last])

    def final_best_distances(self):
        last = max(r.step for r in self.rows)
        vals = [r.best_distance for r in self.rows if r.step == last]
        if any(v is None for v in vals):
            raise ValueError("distance is undefined for this oracle")
        return np.array(vals)

    def step0_distances(self):
        vals = [r.distance for r in self.rows if r.step == 0]
        if any(v is None for v in vals):
            raise ValueError("distance is undefined for this oracle")
        return np.array(vals)


def _aggregate(rows):
    by_step = {}
    for r in rows:
        by_step.setdefault(r.step, []).append(r)
    out = []
    for step in sorted(by_step):
        group = by_step[step]
        has_dist = all(r.distance is not None for r in group)
        for stat, q in (("median", 50.0), ("q25", 25.0), ("q75", 75.0)):
            out.append(AggregateRow(
                stat=stat, step=step,
                chosen_score=float(np.percentile([r.chosen_score for r in group], q)),
                best_score=float(np.percentile([r.best_score for r in group], q)),
                distance=float(np.percentile([r.distance for r in group], q)) if has_dist else None,
                best_distance=float(np.percentile([r.best_distance for r in group], q)) if has_dist else None,
            ))
    return out


def _load_table(config):
    if config.endpoint_mode != "table_means":
        return None
    table = EmbeddingTable.from_csv(config.table_path)
    if table.dim != config.dim:
        raise ValueError(f"table has dimension {table.dim}, config says {config.dim}")
    return table


def _endpoints_for_seed(config, table):
    if config.endpoint_mode == "table_means":
        return mean_endpoints(table, config.label_a, config.label_b)
    return None  # session draws its own seeded endpoints


def _oracle_for_seed(config, seed):
    target = config.oracle_target
    if config.oracle_kind == "neg_l2" and isinstance(target, str) and target == "random":
        target = np.random.default_rng([seed, 0xE1]).uniform(size=config.dim)
    kwargs = {"temperature": config.temperature, "seed": seed}
    if config.oracle_kind == "neg_l2":
        return make_oracle("neg_l2", target=np.asarray(target, dtype=float), **kwargs)
    if config.oracle_kind == "neg_masked_mae":
        t = np.asarray(target, dtype=float)
        if t.ndim != 2:
            raise OracleConfigError("neg_masked_mae needs a 2-D target feature matrix")
        return make_oracle("neg_masked_mae", target_features=t,
                           mask=np.ones(t.shape[0], dtype=bool), **kwargs)
    raise OracleConfigError(f"harness cannot build oracle kind {config.oracle_kind!r}")


def _distance_fn(oracle):
    if isinstance(oracle, NegL2Oracle):
        return lambda x: float(np.linalg.norm(x - oracle.target))
    return None


def _session_config(config, seed):
    return SessionConfig(n_points=config.n_points,
                         extension_factor=config.extension_factor,
                         max_steps=config.steps, seed=seed,
                         acquisition=config.acquisition, gp=config.gp)


def _validate(config):
    # Fail before any session starts: load the table and build one oracle.
    table = _load_table(config)
    _oracle_for_seed(config, config.base_seed)
    return table


def _write_log(log_dir, seed, events):
    os.makedirs(log_dir, exist_ok=True)
    path = os.path.join(log_dir, f"session_{seed}.jsonl")
    with open(path, "w") as fh:
        for ev in events:
            fh.write(json.dumps(ev) + "\n")
    return path


def run_experiment(config, log_dir=None):
    """Run ``n_seeds`` model-guided sessions and collect per-step metrics.

    Fully deterministic per seed.  When ``log_dir`` is given, each session's
    replayable JSONL log is written there as ``session_<seed>.jsonl``.
    """
    table = _validate(config)
    rows = []
    for i in range(config.n_seeds):
        seed = config.base_seed + i
        oracle = _oracle_for_seed(config, seed)
        dist = _distance_fn(oracle)
        session = Session(config.dim, endpoints=_endpoints_for_seed(config, table),
                          config=_session_config(config, seed))
        best_score = -np.inf
        best_distance = np.inf
        for step in range(config.steps):
            t0 = time.perf_counter()
            idx = oracle.choose(session.segment)
            session.submit_choice(idx)
            chosen = session.history[-1].chosen_point
            score = oracle.score(chosen)
            best_score = max(best_score, score)
            d = dist(chosen) if dist else None
            if d is not None:
                best_distance = min(best_distance, d)
            rows.append(ReportRow(
                seed=seed, step=step, chosen_score=score, best_score=best_score,
                distance=d, best_distance=None if dist is None else best_distance,
                wall_time=time.perf_counter() - t0))
        if log_dir is not None:
            _write_log(log_dir, seed, session.events)
    return ConvergenceReport(rows=rows, aggregates=_aggregate(rows), config=config)


def run_baseline(config, baseline="random_segments", log_dir=None):
    """Control condition: segments with both endpoints drawn uniformly at
    random each step, no preference model.  Shares the seeded initialization
    with ``run_experiment`` so the step-0 segment is identical in random
    endpoint mode."""
    if baseline != "random_segments":
        raise ValueError(f"unknown baseline {baseline!r}")
    table = _validate(config)
    rows = []
    for i in range(config.n_seeds):
        seed = config.base_seed + i
        oracle = _oracle_for_seed(config, seed)
        dist = _distance_fn(oracle)
        rng = np.random.default_rng(seed)
        endpoints = _endpoints_for_seed(config, table)
        if endpoints is None:
            endpoints = draw_initial_endpoints(config.dim, rng)
        segment = build_segment(endpoints[0], endpoints[1],
                                config.extension_factor, config.n_points)
        events = [{"event": "baseline_init", "seed": seed,
                   "segment": segment.to_dict()}]
        best_score = -np.inf
        best_distance = np.inf
        for step in range(config.steps):
            t0 = time.perf_counter()
            idx = oracle.choose(segment)
            chosen = segment.points[idx].copy()
            score = oracle.score(chosen)
            best_score = max(best_score, score)
            d = dist(chosen) if dist else None
            if d is not None:
                best_distance = min(best_distance, d)
            rows.append(ReportRow(
                seed=seed, step=step, chosen_score=score, best_score=best_score,
                distance=d, best_distance=None if dist is None else best_distance,
                wall_time=time.perf_counter() - t0))
            a, b = draw_initial_endpoints(config.dim, rng)
            segment = build_segment(a, b, config.extension_factor, config.n_points)
            events.append({"event": "baseline_segment", "step": step + 1,
                           "segment": segment.to_dict()})
        if log_dir is not None:
            _write_log(log_dir, seed, events)
    return ConvergenceReport(rows=rows, aggregates=_aggregate(rows), config=config)


def replay_log(path):
    """Replay a session JSONL log, verifying bit-exact agreement.

    Returns the replayed Session; raises ReplayMismatchError on divergence.
    """
    with open(path) as fh:
        events = [json.loads(line) for line in fh if line.strip()]
    return replay_events(events)


def load_report_csv(path):
    """Parse a report CSV back into (obs_rows, aggregate_rows) dictionaries."""
    obs, aggs = [], []
    with open(path) as fh:
        header = None
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
                if tuple(header) != CSV_COLUMNS:
                    raise ValueError(f"unexpected CSV columns {header}")
                continue
            parts = line.split(",")
            rec = dict(zip(header, parts))
            for key in ("chosen_score", "best_score", "distance", "best_distance"):
                rec[key] = float(rec[key]) if rec[key] != "" else None
            rec["step"] = int(rec["step"])
            if rec["row"] == "obs":
                rec["seed"] = int(rec["seed"])
                obs.append(rec)
            else:
                aggs.append(rec)
    return obs, aggs
