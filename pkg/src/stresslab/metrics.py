"""Field error measures: MSE, MAE, smoothed MRE and the max-stress R^2.

Fields of any shape are flattened; dataset-level values are pooled over all
pixels of all samples, which equals the mean of per-sample values because
every sample has the same pixel count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from stresslab.errors import DegenerateVariance, EmptyDataset, LengthMismatch

MRE_EPS = 0.01


def _pair(y, y_hat, mask=None) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise LengthMismatch(f"ground truth {y.shape} vs prediction {y_hat.shape}")
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), y.shape)
        y, y_hat = y[mask], y_hat[mask]
    y, y_hat = y.ravel(), y_hat.ravel()
    if y.size == 0:
        raise EmptyDataset("no values to compare")
    return y, y_hat


def mse(y, y_hat, mask=None) -> float:
    y, y_hat = _pair(y, y_hat, mask)
    d = y - y_hat
    return float(np.mean(d * d))


def mae(y, y_hat, mask=None) -> float:
    y, y_hat = _pair(y, y_hat, mask)
    return float(np.mean(np.abs(y - y_hat)))


def mre(y, y_hat, eps: float = MRE_EPS, mask=None) -> float:
    """Mean of ``|y - y_hat| / (eps + max(y, y_hat))`` in percent."""
    y, y_hat = _pair(y, y_hat, mask)
    return float(np.mean(np.abs(y - y_hat) / (eps + np.maximum(y, y_hat))) * 100.0)


def r2_score(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=np.float64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.float64).ravel()
    if y_true.shape != y_pred.shape:
        raise LengthMismatch(f"{y_true.shape} vs {y_pred.shape}")
    if y_true.size < 2:
        raise DegenerateVariance("R^2 needs at least two pairs")
    ss_tot = np.sum((y_true - y_true.mean()) ** 2)
    if ss_tot == 0:
        raise DegenerateVariance("true values have zero variance")
    return float(1.0 - np.sum((y_true - y_pred) ** 2) / ss_tot)


def max_pairs(y, y_hat) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample maxima of the true and predicted fields (first axis = sample)."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise LengthMismatch(f"ground truth {y.shape} vs prediction {y_hat.shape}")
    n = y.shape[0]
    return y.reshape(n, -1).max(axis=1), y_hat.reshape(n, -1).max(axis=1)


def r2_max(y, y_hat) -> float:
    return r2_score(*max_pairs(y, y_hat))


@dataclass
class MetricsReport:
    mse: float
    mae: float
    mre: float
    r2_max: float
    count: int

    def to_text(self) -> str:
        return (
            f"count = {self.count}\n"
            f"mse = {self.mse!r}\n"
            f"mae = {self.mae!r}\n"
            f"mre = {self.mre!r}\n"
            f"r2_max = {self.r2_max!r}\n"
        )


def report(y, y_hat, mask=None) -> MetricsReport:
    """All metrics for N x H x W fields. ``r2_max`` is NaN when the true maxima do not vary."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] == 0:
        raise EmptyDataset("cannot evaluate an empty dataset")
    try:
        r2 = r2_max(y, y_hat)
    except DegenerateVariance:
        r2 = float("nan")
    return MetricsReport(mse(y, y_hat, mask), mae(y, y_hat, mask), mre(y, y_hat, mask=mask), r2, int(y.shape[0]))
