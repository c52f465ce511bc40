"""Bootstrap ensembling over a trained pool and multi-trial metric averaging.

A trial draws ``ensemble_size`` members from the pool with replacement,
aggregates their per-window forecasts elementwise (median by default), and
scores the result. The final report averages each metric across trials and
records the across-trial spread.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evaluation import MetricsReport, REPORT_METRICS, aggregate_metrics, point_errors
from .model import model_forward

AGGREGATIONS = ("median", "mean")


@dataclass(frozen=True)
class EnsembleSpec:
    """Bootstrap draw size, trial count, aggregation function, and RNG seed."""

    ensemble_size: int = 64
    trials: int = 100
    aggregation: str = "median"
    seed: int = 0

    def __post_init__(self):
        if self.ensemble_size < 1:
            raise ValueError("ensemble_size must be >= 1")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")


def draw_member_indices(pool_size: int, spec: EnsembleSpec, trial_index: int) -> np.ndarray:
    """Bootstrap (with replacement) member indices, reproducible from (seed, trial)."""
    if pool_size < 1:
        raise ValueError("cannot draw an ensemble from an empty pool")
    rng = np.random.default_rng([int(spec.seed), int(trial_index)])
    return rng.integers(pool_size, size=spec.ensemble_size)


def draw_ensemble(pool_members, spec: EnsembleSpec, trial_index: int) -> list:
    """The member multiset for one trial."""
    indices = draw_member_indices(len(pool_members), spec, trial_index)
    return [pool_members[i] for i in indices]


def aggregate_forecasts(member_forecasts, aggregation: str = "median") -> np.ndarray:
    """Elementwise median or mean of equal-length member forecasts."""
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
    forecasts = [np.asarray(f, dtype=np.float64) for f in member_forecasts]
    if not forecasts:
        raise ValueError("need at least one member forecast")
    length = forecasts[0].shape
    if any(f.shape != length for f in forecasts):
        raise ValueError("member forecasts differ in length")
    stacked = np.stack(forecasts)
    return np.median(stacked, axis=0) if aggregation == "median" else stacked.mean(axis=0)


def member_forecast_matrix(pool, windows, forecast_fn=None) -> np.ndarray:
    """Forecasts of every pool member on every window, shape (members, windows, H).

    ``forecast_fn(member, window) -> horizon vector`` overrides the model
    forward pass; tests use it to inject oracle forecasts.
    """
    horizon = pool.config.horizon
    out = np.empty((len(pool.members), len(windows), horizon), dtype=np.float64)
    x = np.stack([w.x for w in windows])
    for i, member in enumerate(pool.members):
        if forecast_fn is not None:
            for j, window in enumerate(windows):
                out[i, j] = np.asarray(forecast_fn(member, window), dtype=np.float64)
        else:
            params = member.load_params()
            y_hat, _ = model_forward(params, x, pool.config)
            out[i] = y_hat
    return out


@dataclass
class TrialsReport:
    """Per-trial metrics plus their across-trial mean and spread."""

    spec: EnsembleSpec
    per_trial: list[MetricsReport]
    averaged: dict
    spread: dict
    per_series_averaged: dict
    mean_forecast: np.ndarray  # (windows, H), averaged over trials

    def to_dict(self) -> dict:
        return {
            "ensemble_size": self.spec.ensemble_size,
            "trials": self.spec.trials,
            "aggregation": self.spec.aggregation,
            "ensemble_seed": self.spec.seed,
            "averaged": self.averaged,
            "spread": self.spread,
            "per_series": self.per_series_averaged,
            "per_trial": [r.aggregate_summary() for r in self.per_trial],
        }


def _group_errors(windows, forecasts):
    grouped_y: dict[str, list] = {}
    grouped_f: dict[str, list] = {}
    for window, forecast in zip(windows, forecasts):
        grouped_y.setdefault(window.series_id, []).append(window.y)
        grouped_f.setdefault(window.series_id, []).append(forecast)
    return {
        sid: point_errors(np.concatenate(grouped_y[sid]), np.concatenate(grouped_f[sid]))
        for sid in grouped_y
    }


def run_trials(pool, spec: EnsembleSpec, windows, forecast_fn=None) -> TrialsReport:
    """Draw ``spec.trials`` bootstrap ensembles and score each on ``windows``."""
    if not pool.members:
        raise ValueError("cannot evaluate an empty pool")
    if not windows:
        raise ValueError("no evaluation windows")
    matrix = member_forecast_matrix(pool, windows, forecast_fn)
    reports: list[MetricsReport] = []
    forecast_sum = np.zeros(matrix.shape[1:], dtype=np.float64)
    for trial in range(spec.trials):
        indices = draw_member_indices(len(pool.members), spec, trial)
        chosen = matrix[indices]
        aggregated = (
            np.median(chosen, axis=0) if spec.aggregation == "median" else chosen.mean(axis=0)
        )
        forecast_sum += aggregated
        reports.append(aggregate_metrics(_group_errors(windows, aggregated)))

    values = {
        name: np.array([r.aggregate_summary()[name] for r in reports]) for name in REPORT_METRICS
    }
    averaged = {name: float(vals.mean()) for name, vals in values.items()}
    spread = {
        name: {
            "std": float(vals.std()),
            "iqr": float(np.quantile(vals, 0.75) - np.quantile(vals, 0.25)),
        }
        for name, vals in values.items()
    }
    series_ids = reports[0].per_series.keys()
    per_series_averaged = {
        sid: {
            metric: float(np.mean([r.per_series[sid][metric] for r in reports]))
            for metric in reports[0].per_series[sid]
        }
        for sid in series_ids
    }
    return TrialsReport(
        spec=spec,
        per_trial=reports,
        averaged=averaged,
        spread=spread,
        per_series_averaged=per_series_averaged,
        mean_forecast=forecast_sum / spec.trials,
    )
