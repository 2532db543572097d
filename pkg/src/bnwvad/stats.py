"""Batch statistics, EMA running statistics and divergence-from-mean scoring.

Features are stored as float32 but every reduction here accumulates in
float64. Variances are population variances (divide by ``B*T``), which is
what a batch-norm layer uses in training mode.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

DEFAULT_EPS = 1e-5


class DfmMetric(str, enum.Enum):
    """Abnormality criterion used for selection, the pull-push loss and scoring."""

    MAHALANOBIS = "mahalanobis"
    EUCLIDEAN = "euclidean"
    COSINE = "cosine"
    FEATURE_MAGNITUDE = "fm"

    @classmethod
    def parse(cls, value: "str | DfmMetric") -> "DfmMetric":
        if isinstance(value, cls):
            return value
        key = str(value).lower()
        aliases = {"magnitude": "fm", "feature_magnitude": "fm", "l2": "euclidean"}
        return cls(aliases.get(key, key))


@dataclass(frozen=True)
class BatchStats:
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        if self.mean.shape != self.var.shape:
            raise ValueError("mean and var must have the same shape")


@dataclass(frozen=True)
class RunningStats:
    """Per-channel EMA memory of the batch statistics.

    ``momentum`` is the weight of the *new* batch, so ``momentum=1`` keeps no
    history at all.
    """

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        if self.mean.shape != self.var.shape:
            raise ValueError("mean and var must have the same shape")
        if not 0.0 < self.momentum <= 1.0:
            raise ValueError(f"momentum must lie in (0, 1], got {self.momentum}")
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if np.any(self.var < 0):
            raise ValueError("running variance must be non-negative")

    @classmethod
    def initial(cls, channels: int, momentum: float = 0.1, eps: float = DEFAULT_EPS) -> "RunningStats":
        return cls(np.zeros(channels), np.ones(channels), momentum, eps)

    @property
    def channels(self) -> int:
        return self.mean.shape[0]


def batch_stats(X: np.ndarray) -> BatchStats:
    """Mean and population variance over every snippet of a ``[B, T, C]`` tensor.

    Any leading shape is accepted; the last axis is the channel axis.
    """
    X = np.asarray(X)
    if X.ndim < 1 or X.size == 0:
        raise ValueError("empty batch")
    flat = X.reshape(-1, X.shape[-1]).astype(np.float64, copy=False)
    if flat.shape[0] == 0:
        raise ValueError("empty batch")
    if not np.all(np.isfinite(flat)):
        raise ValueError("non-finite feature")
    mean = flat.mean(axis=0)
    # two-pass variance: subtract the mean before squaring
    var = np.mean((flat - mean) ** 2, axis=0)
    return BatchStats(mean, var)


def ema_update(rs: RunningStats, bs: BatchStats) -> RunningStats:
    if rs.mean.shape != bs.mean.shape:
        raise ValueError(
            f"dimension mismatch: running stats have {rs.mean.shape}, batch has {bs.mean.shape}"
        )
    a = rs.momentum
    if a == 1.0:
        # exact copy; (1-a)*old + a*new is not bit-identical in general
        return RunningStats(bs.mean.astype(np.float64).copy(), bs.var.astype(np.float64).copy(), a, rs.eps)
    mean = (1.0 - a) * rs.mean + a * bs.mean
    var = (1.0 - a) * rs.var + a * bs.var
    return RunningStats(mean, var, a, rs.eps)


def _flatten(X: np.ndarray) -> tuple[np.ndarray, tuple[int, ...]]:
    X = np.asarray(X, dtype=np.float64)
    return X.reshape(-1, X.shape[-1]), X.shape[:-1]


def dfm_batch(X: np.ndarray, rs: RunningStats, metric: DfmMetric | str = DfmMetric.MAHALANOBIS) -> np.ndarray:
    """Divergence of every snippet feature from the running mean.

    Returns an array with the shape of ``X`` minus its channel axis. Larger
    always means more abnormal, including for the cosine variant, which is
    reported as ``1 - cos``.
    """
    metric = DfmMetric.parse(metric)
    flat, lead = _flatten(X)
    if flat.shape[-1] != rs.channels and metric is not DfmMetric.FEATURE_MAGNITUDE:
        raise ValueError(f"expected {rs.channels} channels, got {flat.shape[-1]}")
    if not np.all(np.isfinite(flat)):
        raise ValueError("non-finite feature")

    if metric is DfmMetric.FEATURE_MAGNITUDE:
        out = np.sqrt(np.einsum("nc,nc->n", flat, flat))
    elif metric is DfmMetric.COSINE:
        xn = np.sqrt(np.einsum("nc,nc->n", flat, flat))
        mn = float(np.sqrt(rs.mean @ rs.mean))
        if mn == 0.0 or np.any(xn == 0.0):
            raise ValueError("undefined cosine")
        out = 1.0 - (flat @ rs.mean) / (xn * mn)
    else:
        d = flat - rs.mean
        if metric is DfmMetric.MAHALANOBIS:
            denom = rs.var + rs.eps
            if np.any(denom <= 0):
                raise ValueError("Mahalanobis divergence needs var + eps > 0 in every channel")
            out = np.sqrt(np.einsum("nc,nc->n", d, d / denom))
        else:
            out = np.sqrt(np.einsum("nc,nc->n", d, d))
    return out.reshape(lead)


def dfm(x: np.ndarray, rs: RunningStats, metric: DfmMetric | str = DfmMetric.MAHALANOBIS) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("dfm expects a single feature vector")
    return float(dfm_batch(x[None, :], rs, metric)[0])


def dfm_grad(X: np.ndarray, rs: RunningStats, metric: DfmMetric | str = DfmMetric.MAHALANOBIS) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise DFM values and their gradients w.r.t. the features.

    ``X`` is ``[N, C]``. Running statistics are constants. Where the
    divergence is zero (x equal to the mean, or a zero vector for the
    magnitude criterion) the subgradient 0 is returned.
    """
    metric = DfmMetric.parse(metric)
    X = np.asarray(X, dtype=np.float64)
    values = dfm_batch(X, rs, metric)
    safe = np.where(values > 0, values, 1.0)[:, None]

    if metric is DfmMetric.MAHALANOBIS:
        g = (X - rs.mean) / (rs.var + rs.eps) / safe
    elif metric is DfmMetric.EUCLIDEAN:
        g = (X - rs.mean) / safe
    elif metric is DfmMetric.FEATURE_MAGNITUDE:
        g = X / safe
    else:
        xn = np.sqrt(np.einsum("nc,nc->n", X, X))[:, None]
        mn = float(np.sqrt(rs.mean @ rs.mean))
        dot = (X @ rs.mean)[:, None]
        # d/dx [1 - x.m / (|x||m|)]
        return values, -(rs.mean[None, :] / (xn * mn) - dot * X / (xn**3 * mn))

    g = np.where(values[:, None] > 0, g, 0.0)
    return values, g
