"""Training-cost accounting: optimizer updates and input-memory proxies.

Update counts come in two independent flavours that cross-check each
other: ``exact`` walks the same shape sequence a materialized schedule
would execute, and ``closed_form`` is the expectation
``epochs * N / mean(scaled batch over the resolution set)`` (for fixed
batches simply ``epochs * floor-or-ceil(N / batch)``).

"Memory" here means input tensors only: batch x channels x H x W x
bytes-per-element. Activation and optimizer-state memory are deliberately
out of scope, so measured-GPU comparisons reproduce as orderings, not
absolute values.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from typing import IO, Iterable, Sequence

import numpy as np

from .core import SamplerConfig, Strategy, ensure_valid
from .rng import derive_seed
from .samplers import EpochSchedule, epoch_batch_shapes, scaled_size_table


class AnalysisError(ValueError):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass(frozen=True)
class UpdateCount:
    exact: int
    closed_form: float


@dataclass(frozen=True)
class MemoryProxy:
    peak_bytes: int
    mean_bytes: float


@dataclass(frozen=True)
class CostReport:
    """One strategy's cost row, with ratios against the single-scale row."""

    strategy: Strategy
    total_updates: int
    expected_updates: float
    peak_input_pixels: int  # batch x H x W x channels, max over iterations
    mean_input_pixels: float
    updates_ratio: float | None = None
    peak_pixels_ratio: float | None = None

    @property
    def ratios_vs_baseline(self) -> dict:
        return {"updates_ratio": self.updates_ratio, "peak_pixels_ratio": self.peak_pixels_ratio}


@dataclass(frozen=True)
class UpdateSimulation:
    mean: float
    stderr: float | None
    trials: int


def _scaled_table(config: SamplerConfig) -> np.ndarray:
    return scaled_size_table(
        config,
        [r.pixel_count() for r in config.resolutions],
        config.base_resolution.pixel_count(),
    )


def closed_form_updates(config: SamplerConfig) -> float:
    """Expected total updates without generating anything."""
    n, batch = config.dataset_size, config.effective_batch()
    if config.strategy in (Strategy.SSC_FBS, Strategy.MSC_FBS):
        per_epoch = n // batch if config.drop_last else math.ceil(n / batch)
        return float(config.epochs * per_epoch)
    if config.strategy is Strategy.MSC_VBS:
        mean_batch = float(_scaled_table(config).mean())
        return config.epochs * n / mean_batch
    raise AnalysisError(
        "UNSUPPORTED_STRATEGY", f"no closed form for strategy {config.strategy.value}"
    )


def count_updates(config: SamplerConfig) -> UpdateCount:
    """Exact (generated) and closed-form total optimizer updates."""
    ensure_valid(config)
    exact = 0
    for epoch in range(config.epochs):
        _, batches = epoch_batch_shapes(config, epoch, config.dataset_size)
        exact += len(batches)
    return UpdateCount(exact=exact, closed_form=closed_form_updates(config))


def simulate_updates(config: SamplerConfig, trials: int) -> UpdateSimulation:
    """Monte-Carlo oracle: exact counts over ``trials`` independent seeds."""
    if trials < 1:
        raise AnalysisError("ZERO_TRIALS", "trials must be >= 1")
    counts = np.array(
        [
            count_updates(replace(config, seed=derive_seed(config.seed, trial))).exact
            for trial in range(trials)
        ],
        dtype=np.float64,
    )
    stderr = float(counts.std(ddof=1) / math.sqrt(trials)) if trials > 1 else None
    return UpdateSimulation(mean=float(counts.mean()), stderr=stderr, trials=trials)


def input_memory_proxy(
    schedule: EpochSchedule | Sequence[EpochSchedule],
    channels: int = 3,
    bytes_per_element: int = 4,
) -> MemoryProxy:
    """Peak and mean input-tensor bytes over a schedule's iterations."""
    schedules = [schedule] if isinstance(schedule, EpochSchedule) else list(schedule)
    volumes = [p.pixel_volume() for s in schedules for p in s.plans]
    if not volumes:
        raise AnalysisError("EMPTY_SCHEDULE", "schedule has no batch plans")
    per_iter = np.asarray(volumes, dtype=np.float64) * channels * bytes_per_element
    return MemoryProxy(peak_bytes=int(per_iter.max()), mean_bytes=float(per_iter.mean()))


def _pixel_stats(config: SamplerConfig, channels: int) -> tuple[int, int, float]:
    """(updates, peak elements, mean elements) over the whole run."""
    px_table = np.asarray([r.pixel_count() for r in config.resolutions], dtype=np.int64)
    base_px = config.base_resolution.pixel_count()
    updates = 0
    peak = 0
    total = 0.0
    for epoch in range(config.epochs):
        res_idx, batches = epoch_batch_shapes(config, epoch, config.dataset_size)
        if len(batches) == 0:
            continue
        px = np.where(res_idx < 0, base_px, px_table[np.maximum(res_idx, 0)])
        elems = batches * px * channels
        updates += len(batches)
        peak = max(peak, int(elems.max()))
        total += float(elems.sum())
    if updates == 0:
        raise AnalysisError("EMPTY_SCHEDULE", "configuration yields no iterations")
    return updates, peak, total / updates


def strategy_cost(config: SamplerConfig, channels: int = 3) -> CostReport:
    """Cost row for one configuration (ratios left unset)."""
    ensure_valid(config)
    updates, peak, mean = _pixel_stats(config, channels)
    return CostReport(
        strategy=config.strategy,
        total_updates=updates,
        expected_updates=closed_form_updates(config),
        peak_input_pixels=peak,
        mean_input_pixels=mean,
    )


def _comparable(a: SamplerConfig, b: SamplerConfig) -> bool:
    return (
        a.dataset_size == b.dataset_size
        and a.epochs == b.epochs
        and a.base_batch == b.base_batch
        and a.world_size == b.world_size
        and a.base_resolution == b.base_resolution
    )


def compare_strategies(
    base_config: SamplerConfig,
    strategies: Sequence[Strategy | SamplerConfig],
    channels: int = 3,
) -> list[CostReport]:
    """One CostReport per requested strategy, ratios against SSc-FBS.

    The single-scale baseline is always computed from ``base_config``
    (whether or not it is in the requested list), so every row's ratios
    share one denominator. Entries may be full configs, which must agree
    with the base on dataset size, epochs, batch, and base resolution.
    """
    configs: list[SamplerConfig] = []
    for entry in strategies:
        if isinstance(entry, SamplerConfig):
            if not _comparable(entry, base_config):
                raise AnalysisError(
                    "INCOMPATIBLE_CONFIGS",
                    "compared configs must share dataset size, epochs, batch, and base resolution",
                )
            configs.append(entry)
        else:
            configs.append(base_config.with_strategy(Strategy(entry)))
    baseline = strategy_cost(base_config.with_strategy(Strategy.SSC_FBS), channels)
    reports = []
    for cfg in configs:
        row = baseline if cfg.strategy is Strategy.SSC_FBS else strategy_cost(cfg, channels)
        reports.append(
            CostReport(
                strategy=row.strategy,
                total_updates=row.total_updates,
                expected_updates=row.expected_updates,
                peak_input_pixels=row.peak_input_pixels,
                mean_input_pixels=row.mean_input_pixels,
                updates_ratio=row.total_updates / baseline.total_updates,
                peak_pixels_ratio=row.peak_input_pixels / baseline.peak_input_pixels,
            )
        )
    return reports


def schedule_cost(
    schedules: Sequence[EpochSchedule],
    strategy: Strategy,
    channels: int = 3,
) -> CostReport:
    """Cost row computed from already-materialized schedules."""
    updates = sum(s.total_updates for s in schedules)
    if updates == 0:
        raise AnalysisError("EMPTY_SCHEDULE", "no batch plans in the given schedules")
    elems = np.asarray(
        [p.pixel_volume() * channels for s in schedules for p in s.plans], dtype=np.int64
    )
    return CostReport(
        strategy=strategy,
        total_updates=updates,
        expected_updates=float(updates),
        peak_input_pixels=int(elems.max()),
        mean_input_pixels=float(elems.mean()),
    )


def with_ratios(
    reports: Sequence[CostReport], baseline: CostReport | None = None
) -> list[CostReport]:
    """Fill ratio columns against a baseline row (default: the SSc-FBS row)."""
    if baseline is None:
        baseline = next((r for r in reports if r.strategy is Strategy.SSC_FBS), reports[0])
    return [
        CostReport(
            strategy=r.strategy,
            total_updates=r.total_updates,
            expected_updates=r.expected_updates,
            peak_input_pixels=r.peak_input_pixels,
            mean_input_pixels=r.mean_input_pixels,
            updates_ratio=r.total_updates / baseline.total_updates,
            peak_pixels_ratio=r.peak_input_pixels / baseline.peak_input_pixels,
        )
        for r in reports
    ]


def cost_reports_payload(reports: Iterable[CostReport], bytes_per_element: int = 4) -> dict:
    return {
        "schema_version": 1,
        "kind": "cost_report",
        "bytes_per_element": bytes_per_element,
        "rows": [
            {
                "strategy": r.strategy.value,
                "updates": r.total_updates,
                "expected_updates": r.expected_updates,
                "updates_ratio": r.updates_ratio,
                "peak_input_bytes": r.peak_input_pixels * bytes_per_element,
                "mean_input_bytes": r.mean_input_pixels * bytes_per_element,
                "peak_ratio": r.peak_pixels_ratio,
            }
            for r in reports
        ],
    }


def write_cost_csv(fp: IO[str], reports: Iterable[CostReport], bytes_per_element: int = 4) -> None:
    writer = csv.writer(fp)
    writer.writerow(["strategy", "updates", "updates_ratio", "peak_input_bytes", "peak_ratio"])
    for r in reports:
        writer.writerow(
            [
                r.strategy.value,
                r.total_updates,
                "" if r.updates_ratio is None else f"{r.updates_ratio:.6f}",
                r.peak_input_pixels * bytes_per_element,
                "" if r.peak_pixels_ratio is None else f"{r.peak_pixels_ratio:.6f}",
            ]
        )


def write_cost_json(fp: IO[str], reports: Iterable[CostReport], bytes_per_element: int = 4) -> None:
    json.dump(cost_reports_payload(reports, bytes_per_element), fp, indent=2)
    fp.write("\n")
