"""Forecast accuracy metrics, error-distribution statistics, and the
Diebold-Mariano test of equal forecast accuracy.

Sign convention: PE = 100 * (actual - forecast) / actual, so positive mean
percentage error means the model underpredicts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SERIES_METRICS = ("medape", "mape", "iqr_ape", "rmse", "mpe")
REPORT_METRICS = SERIES_METRICS + ("mpe_skewness", "mpe_kurtosis")


@dataclass(frozen=True)
class PointErrors:
    """Per-point absolute percentage, percentage, and squared errors."""

    ape: np.ndarray
    pe: np.ndarray
    se: np.ndarray


def point_errors(y, y_hat) -> PointErrors:
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: actuals {y.shape} vs forecasts {y_hat.shape}")
    if np.any(y <= 0.0):
        raise ValueError("percentage errors require strictly positive actuals")
    pe = 100.0 * (y - y_hat) / y
    return PointErrors(ape=np.abs(pe), pe=pe, se=(y - y_hat) ** 2)


def skewness(x) -> float:
    """Moment-based skewness; 0.0 for zero-spread samples."""
    x = np.asarray(x, dtype=np.float64)
    centered = x - x.mean()
    m2 = np.mean(centered**2)
    if m2 == 0.0:
        return 0.0
    return float(np.mean(centered**3) / m2**1.5)


def kurtosis(x) -> float:
    """Moment-based kurtosis, non-excess (Gaussian = 3); 0.0 for zero-spread samples."""
    x = np.asarray(x, dtype=np.float64)
    centered = x - x.mean()
    m2 = np.mean(centered**2)
    if m2 == 0.0:
        return 0.0
    return float(np.mean(centered**4) / m2**2)


def series_metrics(errors: PointErrors) -> dict:
    """MedAPE/MAPE/IQR-APE/RMSE/MPE for one series' pooled points.

    Quartiles use linear interpolation between order statistics.
    """
    q1, q3 = np.quantile(errors.ape, [0.25, 0.75])
    return {
        "medape": float(np.median(errors.ape)),
        "mape": float(errors.ape.mean()),
        "iqr_ape": float(q3 - q1),
        "rmse": float(np.sqrt(errors.se.mean())),
        "mpe": float(errors.pe.mean()),
        "n_points": int(errors.pe.size),
    }


@dataclass
class MetricsReport:
    """Per-series metrics, their unweighted aggregate, and pooled-error shape stats."""

    per_series: dict
    aggregate: dict
    mpe_skewness: float
    mpe_kurtosis: float
    n_series: int
    n_points: int

    def aggregate_summary(self) -> dict:
        return {
            **self.aggregate,
            "mpe_skewness": self.mpe_skewness,
            "mpe_kurtosis": self.mpe_kurtosis,
        }

    def to_dict(self) -> dict:
        return {
            "per_series": self.per_series,
            "aggregate": self.aggregate_summary(),
            "n_series": self.n_series,
            "n_points": self.n_points,
        }


def aggregate_metrics(groups: dict) -> MetricsReport:
    """Aggregate per-series point errors into a report.

    ``groups`` maps series id -> PointErrors. The aggregate row is the
    unweighted mean of per-series values; skewness/kurtosis are computed on
    the percentage errors pooled across every series and point.
    """
    if not groups:
        raise ValueError("no series groups to aggregate")
    per_series = {sid: series_metrics(errors) for sid, errors in sorted(groups.items())}
    aggregate = {
        name: float(np.mean([metrics[name] for metrics in per_series.values()]))
        for name in SERIES_METRICS
    }
    pooled_pe = np.concatenate([errors.pe for _, errors in sorted(groups.items())])
    return MetricsReport(
        per_series=per_series,
        aggregate=aggregate,
        mpe_skewness=skewness(pooled_pe),
        mpe_kurtosis=kurtosis(pooled_pe),
        n_series=len(per_series),
        n_points=int(pooled_pe.size),
    )


# ---------------------------------------------------------------------------
# Diebold-Mariano test
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DMResult:
    """Test outcome; ``degenerate`` marks zero/invalid long-run variance cases."""

    statistic: float | None
    p_value: float | None
    n: int
    lag: int
    mean_differential: float
    long_run_variance: float
    degenerate: bool
    reason: str | None = None


def _loss_transform(errors: np.ndarray, loss_kind: str) -> np.ndarray:
    if loss_kind == "absolute":
        return np.abs(errors)
    if loss_kind == "squared":
        return errors**2
    raise ValueError("loss_kind must be 'absolute' or 'squared'")


def diebold_mariano(
    e1, e2, loss_kind: str = "absolute", horizon_correction: int = 1
) -> DMResult:
    """Equal-accuracy test on two aligned forecast-error series.

    The loss differential d_t = g(e1_t) - g(e2_t) is scored with
    DM = mean(d) / sqrt(LRV(d)/n), where the long-run variance is the
    truncated autocovariance sum with lag window ``horizon_correction - 1``
    (the classic h-step correction). Under equal accuracy, DM is
    asymptotically standard normal. Identical models, or a non-positive
    variance estimate, yield a flagged degenerate result instead of NaN.
    """
    e1 = np.asarray(e1, dtype=np.float64)
    e2 = np.asarray(e2, dtype=np.float64)
    if e1.shape != e2.shape or e1.ndim != 1:
        raise ValueError("error series must be one-dimensional and equally long")
    n = e1.size
    if n < 8:
        raise ValueError(f"need at least 8 loss differentials, got {n}")
    if horizon_correction < 1:
        raise ValueError("horizon_correction must be >= 1")
    d = _loss_transform(e1, loss_kind) - _loss_transform(e2, loss_kind)
    lag = min(horizon_correction - 1, n - 1)
    mean_d = float(d.mean())
    if np.ptp(d) == 0.0:
        return DMResult(
            statistic=None, p_value=None, n=n, lag=lag, mean_differential=mean_d,
            long_run_variance=0.0, degenerate=True,
            reason="constant loss differential (identical models?)",
        )
    centered = d - mean_d
    # autocovariances with the 1/n convention at every lag
    lrv = float(np.sum(centered**2)) / n
    for k in range(1, lag + 1):
        lrv += 2.0 * float(np.sum(centered[k:] * centered[:-k])) / n
    if lrv <= 0.0:
        return DMResult(
            statistic=None, p_value=None, n=n, lag=lag, mean_differential=mean_d,
            long_run_variance=lrv, degenerate=True,
            reason="non-positive long-run variance estimate",
        )
    statistic = mean_d / math.sqrt(lrv / n)
    p_value = math.erfc(abs(statistic) / math.sqrt(2.0))  # two-sided
    return DMResult(
        statistic=statistic, p_value=p_value, n=n, lag=lag, mean_differential=mean_d,
        long_run_variance=lrv, degenerate=False,
    )


def z_critical(alpha: float) -> float:
    """Two-sided standard-normal critical value, via bisection on erfc."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    lo, hi = 0.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if math.erfc(mid / math.sqrt(2.0)) > alpha:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def dm_decision(statistic: float, alpha: float = 0.01) -> dict:
    """Two-sided decision against the standard-normal critical value."""
    critical = z_critical(alpha)
    return {
        "alpha": alpha,
        "critical_z": critical,
        "reject_equal_accuracy": abs(statistic) > critical,
    }
