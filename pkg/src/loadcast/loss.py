"""Training losses: pinball-on-percentage-error, variance-normalized squared
error, and their weighted combination, with closed-form gradients and tape
builders for end-to-end training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn


@dataclass(frozen=True)
class LossConfig:
    """Pinball level, weight of the normalized-MSE term, and ablation switches.

    ``no_l2`` drops the squared-error term entirely; ``no_var`` keeps it but
    skips the per-row variance normalization.
    """

    tau: float = 0.35
    nmse_weight: float = 0.35
    no_l2: bool = False
    no_var: bool = False

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if self.nmse_weight < 0.0:
            raise ValueError("nmse_weight must be >= 0")


def _check_pair(y, y_hat):
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    y_hat = np.atleast_2d(np.asarray(y_hat, dtype=np.float64))
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: targets {y.shape} vs forecasts {y_hat.shape}")
    if np.any(y <= 0.0):
        raise ValueError("percentage losses require strictly positive targets")
    return y, y_hat


def pinball_coefficients(y, y_hat, tau: float) -> np.ndarray:
    """tau on the underprediction branch (y >= y_hat, ties included), tau-1 otherwise."""
    return np.where(y >= y_hat, tau, tau - 1.0)


def pmape(y, y_hat, tau: float = 0.35) -> float:
    """Mean pinball loss on percentage errors over all N*H points."""
    y, y_hat = _check_pair(y, y_hat)
    return float(np.mean(pinball_coefficients(y, y_hat, tau) * (y - y_hat) / y))


def row_variance(y) -> np.ndarray:
    """Population variance of each target row (divide by the row length)."""
    return np.atleast_2d(np.asarray(y, dtype=np.float64)).var(axis=-1)


def _checked_variance(var: np.ndarray, no_var: bool) -> np.ndarray:
    if no_var:
        return np.ones_like(var)
    zero = np.flatnonzero(var == 0.0)
    if zero.size:
        raise ValueError(
            f"target row {int(zero[0])} is constant (zero variance); "
            "variance-normalized squared error is undefined"
        )
    return var


def nmse(y, y_hat, *, no_var: bool = False) -> float:
    """Squared error normalized by each row's variance.

    Equals 1.0 when the forecast is the row mean, i.e. when the model does no
    better than a per-window mean baseline.
    """
    y, y_hat = _check_pair(y, y_hat)
    var = _checked_variance(row_variance(y), no_var)
    return float(np.mean((y - y_hat) ** 2 / var[:, None]))


def combined_loss(y, y_hat, config: LossConfig) -> float:
    """pmape + weight * nmse; exactly pmape when the L2 term is disabled."""
    base = pmape(y, y_hat, config.tau)
    if config.no_l2 or config.nmse_weight == 0.0:
        return base
    return base + config.nmse_weight * nmse(y, y_hat, no_var=config.no_var)


def loss_gradients(y, y_hat, config: LossConfig) -> np.ndarray:
    """d(combined loss)/d(forecast); the pinball kink takes the y >= y_hat branch."""
    orig_shape = np.asarray(y_hat, dtype=np.float64).shape
    y2, yh2 = _check_pair(y, y_hat)
    n = y2.size
    grad = -pinball_coefficients(y2, yh2, config.tau) / (n * y2)
    if not (config.no_l2 or config.nmse_weight == 0.0):
        var = _checked_variance(row_variance(y2), config.no_var)
        grad = grad - config.nmse_weight * 2.0 * (y2 - yh2) / (n * var[:, None])
    return grad.reshape(orig_shape)


def combined_loss_graph(y, y_hat: nn.Tensor, config: LossConfig):
    """Record the combined loss on ``y_hat``'s tape.

    Returns ``(loss node, components)`` where components logs the plain float
    value of each term actually added to the loss ("nmse_term" stays 0.0 when
    the L2 term is disabled).
    """
    y2 = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if y2.shape != y_hat.data.shape:
        raise ValueError(f"shape mismatch: targets {y2.shape} vs forecasts {y_hat.data.shape}")
    if np.any(y2 <= 0.0):
        raise ValueError("percentage losses require strictly positive targets")
    diff = y2 - y_hat
    pin = nn.mean(diff * (pinball_coefficients(y2, y_hat.data, config.tau) / y2))
    components = {"pmape": float(pin.data), "nmse": None, "nmse_term": 0.0}
    if config.no_l2 or config.nmse_weight == 0.0:
        return pin, components
    var = _checked_variance(row_variance(y2), config.no_var)
    nm = nn.mean(diff * diff * (1.0 / var[:, None]))
    components["nmse"] = float(nm.data)
    components["nmse_term"] = config.nmse_weight * float(nm.data)
    return pin + nm * config.nmse_weight, components
