"""Multi-seed experiment suite: runs every (method, seed) cell, writes per-round
CSVs and the summary (CSV, JSON and a plain-text table)."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .clkd import SimilarityMetric
from .config import ExperimentConfig, config_to_dict
from .federation import (
    FederationResult,
    FederationSettings,
    LocalHyper,
    Method,
    communication_accounting,
    make_clients,
    run_federation,
)
from .scenario import build_scenario
from .stats import mean_std, students_t_test

log = logging.getLogger(__name__)


@dataclass
class CellResult:
    method: str
    seed: int
    best_accuracy: float | None = None
    best_round: int | None = None
    bytes_per_round: int | None = None
    rounds_to_target: int | None = None
    total_bytes: int | None = None
    wall_seconds: float = 0.0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class MethodSummary:
    method: str
    seeds: list[int]
    accuracies: list[float]
    mean: float | None
    std: float | None
    bytes_per_round: int | None
    mean_rounds_to_target: float | None
    mean_total_bytes: float | None
    failures: int


@dataclass
class SummaryReport:
    cells: list[CellResult]
    methods: list[MethodSummary]
    t_tests: list[dict] = field(default_factory=list)
    accuracy_target: float = 0.5

    @property
    def failures(self) -> list[CellResult]:
        return [c for c in self.cells if not c.ok]

    def method(self, label: str) -> MethodSummary:
        return next(m for m in self.methods if m.method == label)


def settings_from_config(cfg: ExperimentConfig) -> FederationSettings:
    hyper = LocalHyper(cfg.lr, cfg.local_epochs, cfg.batch_size, cfg.alpha, cfg.kd_reduction)
    return FederationSettings(
        rounds=cfg.rounds,
        hyper=hyper,
        schedule_mode=cfg.schedule,
        reset_each_round=cfg.schedule_reset,
        weighted_aggregation=cfg.weighted_aggregation,
        sample_fraction=cfg.sample_fraction,
        workers=cfg.workers,
    )


def methods_from_config(cfg: ExperimentConfig) -> list[Method]:
    metric = SimilarityMetric(cfg.metric, cfg.metric_epsilon)
    return [Method.parse(m, metric) for m in cfg.methods]


def run_cell(cfg: ExperimentConfig, method: Method, seed: int, client_order: Sequence[int] | None = None) -> FederationResult:
    scenario = build_scenario(cfg, seed)
    clients = make_clients(scenario.client_arrays(), scenario.architectures, seed)
    return run_federation(clients, method, settings_from_config(cfg), seed, client_order)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(text, encoding="utf-8", newline="")
    os.replace(tmp, path)


def rounds_csv(result: FederationResult) -> str:
    k = len(result.reports[0].accuracy) if result.reports else 0
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(
        ["round"]
        + [f"accuracy_client{i}" for i in range(k)]
        + ["mean_accuracy", "mean_objective", "mean_train_loss", "bytes_up", "bytes_down"]
    )
    for r in result.reports:
        finite = [v for v in r.train_loss if not math.isnan(v)]
        train = sum(finite) / len(finite) if finite else float("nan")
        w.writerow(
            [r.round]
            + [_fmt(a) for a in r.accuracy]
            + [_fmt(r.mean_accuracy), _fmt(r.mean_objective), _fmt(train), r.bytes_up, r.bytes_down]
        )
    return buf.getvalue()


def _summarize(labels: list[str], cells: list[CellResult]) -> tuple[list[MethodSummary], list[dict]]:
    summaries = []
    for label in labels:
        mine = [c for c in cells if c.method == label]
        good = [c for c in mine if c.ok]
        accs = [c.best_accuracy for c in good]
        mean, std = mean_std(accs) if accs else (None, None)
        if std is not None and math.isnan(std):
            std = None
        reached = [c.rounds_to_target for c in good if c.rounds_to_target is not None]
        totals = [c.total_bytes for c in good if c.total_bytes is not None]
        summaries.append(
            MethodSummary(
                label,
                [c.seed for c in good],
                accs,
                mean,
                std,
                good[0].bytes_per_round if good else None,
                sum(reached) / len(reached) if reached else None,
                sum(totals) / len(totals) if totals else None,
                len(mine) - len(good),
            )
        )
    tests = []
    for i, a in enumerate(summaries):
        for b in summaries[i + 1 :]:
            if len(a.accuracies) >= 2 and len(b.accuracies) >= 2:
                t, p = students_t_test(a.accuracies, b.accuracies)
                tests.append({"a": a.method, "b": b.method, "t": t, "p": p})
    return summaries, tests


def render_table(report: SummaryReport) -> str:
    lines = [
        f"{'method':<22} {'n':>3} {'mean acc %':>11} {'std':>7} {'C_r bytes':>11} {'N_c':>6} {'C_t bytes':>12} {'fail':>4}"
    ]
    for m in report.methods:
        mean = "-" if m.mean is None else f"{100 * m.mean:.2f}"
        std = "-" if m.std is None else f"{100 * m.std:.2f}"
        c_r = "-" if m.bytes_per_round is None else str(m.bytes_per_round)
        n_c = "never" if m.mean_rounds_to_target is None else f"{m.mean_rounds_to_target:.1f}"
        c_t = "-" if m.mean_total_bytes is None else f"{m.mean_total_bytes:.0f}"
        lines.append(f"{m.method:<22} {len(m.accuracies):>3} {mean:>11} {std:>7} {c_r:>11} {n_c:>6} {c_t:>12} {m.failures:>4}")
    if report.t_tests:
        lines.append("")
        lines.append("Student's t-test (pooled variance, two-sided)")
        for t in report.t_tests:
            lines.append(f"  {t['a']} vs {t['b']}: t = {t['t']:.4f}, p = {t['p']:.3e}")
    return "\n".join(lines) + "\n"


def summary_csv(report: SummaryReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(
        ["method", "n_runs", "n_failed", "mean_best_accuracy", "std_best_accuracy",
         "bytes_per_round", "mean_rounds_to_target", "mean_total_bytes"]
    )
    for m in report.methods:
        w.writerow(
            [m.method, len(m.accuracies), m.failures, _fmt(m.mean), _fmt(m.std),
             _fmt(m.bytes_per_round), _fmt(m.mean_rounds_to_target), _fmt(m.mean_total_bytes)]
        )
    return buf.getvalue()


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    return v


def summary_json(report: SummaryReport, cfg: ExperimentConfig) -> str:
    payload = {
        "config": config_to_dict(cfg),
        "accuracy_target": report.accuracy_target,
        "methods": [vars(m) for m in report.methods],
        "t_tests": report.t_tests,
        "cells": [vars(c) for c in report.cells],
    }
    return json.dumps(_json_safe(payload), indent=2, allow_nan=False) + "\n"


def _unique_labels(methods: Sequence[Method]) -> list[str]:
    seen: dict[str, int] = {}
    out = []
    for m in methods:
        n = seen.get(m.label, 0) + 1
        seen[m.label] = n
        out.append(m.label if n == 1 else f"{m.label}_{n}")
    return out


def run_suite(
    cfg: ExperimentConfig,
    out_dir: str | Path | None = None,
    *,
    methods: Sequence[str] | None = None,
    seeds: Sequence[int] | None = None,
    write: bool = True,
    client_order: Sequence[int] | None = None,
) -> SummaryReport:
    """Run every (method, seed) cell. A failing cell is recorded and the suite
    carries on; check ``report.failures`` afterwards.

    ``client_order`` sets the execution order of clients inside each round;
    outputs do not depend on it.
    """
    metric = SimilarityMetric(cfg.metric, cfg.metric_epsilon)
    method_list = [Method.parse(m, metric) for m in (methods or cfg.methods)]
    seed_list = list(seeds if seeds is not None else cfg.seeds)
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    if write:
        out.mkdir(parents=True, exist_ok=True)
    labels = _unique_labels(method_list)
    cells = []
    for method, label in zip(method_list, labels):
        for seed in seed_list:
            t0 = time.perf_counter()
            cell = CellResult(label, seed)
            try:
                result = run_cell(cfg, method, seed, client_order)
                acct = communication_accounting(method, result.architectures, result.reports, cfg.accuracy_target)
                cell.best_accuracy = result.best_accuracy
                cell.best_round = result.best_round
                cell.bytes_per_round = acct.bytes_per_round
                cell.rounds_to_target = acct.rounds_to_target
                cell.total_bytes = acct.total_bytes
                if write:
                    _atomic_write(out / f"rounds_{label}_{seed}.csv", rounds_csv(result))
            except Exception as exc:  # recorded per cell, the suite continues
                log.error("cell %s seed %d failed: %s", label, seed, exc)
                log.debug("%s", traceback.format_exc())
                cell.error = f"{type(exc).__name__}: {exc}"
            cell.wall_seconds = time.perf_counter() - t0
            cells.append(cell)
            if cell.ok:
                log.info("%s seed %d: best accuracy %.4f", label, seed, cell.best_accuracy)
    summaries, tests = _summarize(labels, cells)
    report = SummaryReport(cells, summaries, tests, cfg.accuracy_target)
    if write:
        _atomic_write(out / "summary.csv", summary_csv(report))
        _atomic_write(out / "summary.json", summary_json(report, cfg))
        _atomic_write(out / "summary.txt", render_table(report))
    return report
