"""Inference-time task routing from pooled expert logits.

For one continuum (m samples assumed to share a task) every expert's logits
are min-max normalized over its own m x N block, all blocks are pooled, and
a noise band is cut out of the pooled values with two percentiles derived
from ``alpha`` and ``beta``. Each expert is scored by the fraction of its
normalized logits that land inside the band. The expert with the smallest
fraction is routed to, ties going to the lowest task id.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .nn import predict_logits, softmax

NORMALIZATIONS = ("minmax", "zscore", "softmax")


@dataclass(frozen=True)
class RouterConfig:
    alpha: float = 0.25
    beta: float = 0.75
    continuum_size: int = 5
    tie_break: str = "lowest-task-id"
    percentile_method: str = "linear"
    normalization: str = "minmax"

    def __post_init__(self):
        noise_percentiles(self.alpha, self.beta)
        if int(self.continuum_size) < 1:
            raise ConfigError("continuum_size must be >= 1")
        if self.tie_break != "lowest-task-id":
            raise ConfigError(f"unsupported tie_break {self.tie_break!r}")
        if self.percentile_method != "linear":
            raise ConfigError(f"unsupported percentile_method {self.percentile_method!r}")
        if self.normalization not in NORMALIZATIONS:
            raise ConfigError(f"normalization must be one of {NORMALIZATIONS}")


@dataclass(frozen=True)
class NoiseRegion:
    lower_percentile: float
    upper_percentile: float
    lower_threshold: float
    upper_threshold: float


@dataclass
class ConfidenceReport:
    per_task_scores: dict
    chosen_task: int
    region: NoiseRegion
    counts: dict = field(default_factory=dict)


def normalize_logits(raw, method: str = "minmax") -> np.ndarray:
    """Normalize one expert's (m, N) logit block as a single pooled sample.

    ``minmax`` maps the block onto [0, 1]; a constant block maps to 0.5.
    ``zscore`` and ``softmax`` (row-wise) are experimental alternatives.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim == 1:
        raw = raw[None, :]
    if raw.ndim != 2 or raw.size == 0:
        raise DataError(f"expected a non-empty (m, N) logit block, got shape {raw.shape}")
    if not np.all(np.isfinite(raw)):
        raise DataError("logits contain non-finite values")
    if method == "minmax":
        lo, hi = raw.min(), raw.max()
        if hi == lo:
            return np.full(raw.shape, 0.5)
        return (raw - lo) / (hi - lo)
    if method == "zscore":
        sd = raw.std()
        return np.zeros(raw.shape) if sd == 0 else (raw - raw.mean()) / sd
    if method == "softmax":
        return softmax(raw)
    raise ConfigError(f"unknown normalization {method!r}")


def noise_percentiles(alpha: float, beta: float) -> tuple:
    """``(alpha - alpha*beta, alpha + (1 - alpha)*beta)`` as fractions in [0, 1]."""
    for name, v in (("alpha", alpha), ("beta", beta)):
        if not 0.0 <= v <= 1.0:
            raise ConfigError(f"{name} must lie in [0, 1], got {v!r}")
    return alpha - alpha * beta, alpha + (1.0 - alpha) * beta


def thresholds(combined, lower_percentile: float, upper_percentile: float) -> tuple:
    """Linear-interpolation percentiles (rank ``p*(K-1)``) of the pooled values."""
    combined = np.asarray(combined, dtype=float).ravel()
    if combined.size < 2:
        raise DataError(f"need at least 2 pooled logits for thresholds, got {combined.size}")
    lo, hi = np.quantile(combined, [lower_percentile, upper_percentile], method="linear")
    return float(lo), float(hi)


def confidence_score(logits, lower_threshold: float, upper_threshold: float) -> float:
    """Fraction of values with ``lower <= v <= upper`` (bounds inclusive)."""
    v = np.asarray(logits, dtype=float).ravel()
    if v.size == 0:
        raise DataError("no logits to score")
    inside = (v >= lower_threshold) & (v <= upper_threshold)
    return int(np.count_nonzero(inside)) / v.size


def route_logits(logits_by_task: dict, config: RouterConfig | None = None) -> ConfidenceReport:
    """Route one continuum given each expert's raw (m, N_t) logit block."""
    config = config or RouterConfig()
    if not logits_by_task:
        raise ConfigError("cannot route with an empty registry")
    task_ids = sorted(logits_by_task)
    normed = {t: normalize_logits(logits_by_task[t], config.normalization) for t in task_ids}
    rows = {v.shape[0] for v in normed.values()}
    if len(rows) != 1:
        raise DataError(f"experts disagree on continuum length: {sorted(rows)}")
    lp, up = noise_percentiles(config.alpha, config.beta)
    lt, ut = thresholds(np.concatenate([normed[t].ravel() for t in task_ids]), lp, up)
    scores, counts = {}, {}
    for t in task_ids:
        v = normed[t].ravel()
        counts[t] = int(np.count_nonzero((v >= lt) & (v <= ut)))
        scores[t] = counts[t] / v.size
    # task_ids is sorted, so min() keeps the lowest id among ties
    chosen = min(task_ids, key=lambda t: scores[t])
    return ConfidenceReport(scores, chosen, NoiseRegion(lp, up, lt, ut), counts)


def _registry_by_task(experts):
    if not experts:
        raise ConfigError("cannot route with an empty registry")
    by_task = {}
    for e in experts:
        if e.task_id in by_task:
            raise ConfigError(f"duplicate task id {e.task_id} in registry")
        by_task[e.task_id] = e
    dims = {e.in_dim for e in experts}
    if len(dims) != 1:
        raise DataError(f"experts disagree on input width: {sorted(dims)}")
    return by_task


def predict_task(experts, continuum, config: RouterConfig | None = None) -> ConfidenceReport:
    """Score every expert on an (m, in_dim) continuum and pick a task."""
    by_task = _registry_by_task(experts)
    X = np.atleast_2d(np.asarray(continuum, dtype=float))
    logits = {t: np.atleast_2d(predict_logits(e, X)) for t, e in by_task.items()}
    return route_logits(logits, config)


def classify(experts, continuum, config: RouterConfig | None = None) -> tuple:
    """Route once, then ``class_offset + argmax`` of the chosen expert per sample.

    Returns ``(task_id, global_predictions, report)``.
    """
    by_task = _registry_by_task(experts)
    X = np.atleast_2d(np.asarray(continuum, dtype=float))
    logits = {t: np.atleast_2d(predict_logits(e, X)) for t, e in by_task.items()}
    report = route_logits(logits, config)
    chosen = by_task[report.chosen_task]
    preds = chosen.class_offset + np.argmax(logits[report.chosen_task], axis=1)
    return report.chosen_task, preds, report


# ---------------------------------------------------------------------------
# report CSV: one row per routed continuum


def report_header(task_ids) -> list:
    return ["continuum_id", "chosen_task", "true_task",
            *(f"score_task{t}" for t in task_ids),
            "lower_percentile", "upper_percentile", "lower_threshold", "upper_threshold"]


def report_row(continuum_id, report: ConfidenceReport, true_task) -> list:
    r = report.region
    return [continuum_id, report.chosen_task, true_task,
            *(repr(report.per_task_scores[t]) for t in sorted(report.per_task_scores)),
            repr(r.lower_percentile), repr(r.upper_percentile),
            repr(r.lower_threshold), repr(r.upper_threshold)]


def write_reports(path, rows) -> None:
    """``rows`` is an iterable of ``(continuum_id, report, true_task)``."""
    rows = list(rows)
    if not rows:
        raise DataError("no reports to write")
    task_ids = sorted(rows[0][1].per_task_scores)
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(report_header(task_ids))
        for cid, rep, true_task in rows:
            w.writerow(report_row(cid, rep, true_task))
