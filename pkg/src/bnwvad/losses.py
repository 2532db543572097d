"""Training losses with analytic gradients.

Every loss returns ``(value, grads...)`` where the gradients are taken with
respect to the loss inputs. Running statistics are constants throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .stats import DfmMetric, RunningStats, dfm_batch, dfm_grad

BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class MppConfig:
    margin: float = 1.0
    hinge: bool = True
    metric: DfmMetric = DfmMetric.MAHALANOBIS

    def __post_init__(self):
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        object.__setattr__(self, "metric", DfmMetric.parse(self.metric))


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 5.0
    lambda2: float = 20.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")


def pair_by_dfm(X: np.ndarray, rs: RunningStats, metric: DfmMetric | str) -> np.ndarray:
    """Row order that sorts ``X`` by descending DFM (stable on ties)."""
    return np.argsort(-dfm_batch(X, rs, metric), kind="stable")


def mpp_loss(Xn: np.ndarray, Xa: np.ndarray, rs: RunningStats, cfg: MppConfig = MppConfig()):
    """Mean-based pull-push loss over ``K`` rank-paired normal/abnormal features.

    value = mean_k f(m + DFM(Xn[k]) - DFM(Xa[k])) with f = max(0, .) when
    hinged and the identity otherwise. Rows must already be paired.
    """
    Xn = np.asarray(Xn, dtype=np.float64)
    Xa = np.asarray(Xa, dtype=np.float64)
    if Xn.shape != Xa.shape:
        raise ValueError(f"paired sets differ in shape: {Xn.shape} vs {Xa.shape}")
    K = Xn.shape[0]
    if K == 0:
        raise ValueError("empty selection")
    dn, gn = dfm_grad(Xn, rs, cfg.metric)
    da, ga = dfm_grad(Xa, rs, cfg.metric)
    brackets = cfg.margin + dn - da
    if cfg.hinge:
        active = (brackets > 0).astype(np.float64)
        value = float(np.mean(np.maximum(brackets, 0.0)))
    else:
        active = np.ones(K)
        value = float(np.mean(brackets))
    w = (active / K)[:, None]
    return value, w * gn, -w * ga


def normal_loss(preds: np.ndarray):
    """Sum over normal videos of the L2 norm of their snippet predictions."""
    preds = np.asarray(preds, dtype=np.float64)
    if not np.all(np.isfinite(preds)):
        raise ValueError("non-finite prediction")
    # scale by the row max so tiny sigmoid outputs do not square to zero
    scale = np.max(np.abs(preds), axis=-1, keepdims=True)
    unit = np.divide(preds, scale, out=np.zeros_like(preds), where=scale > 0)
    norms = scale * np.sqrt(np.sum(unit**2, axis=-1, keepdims=True))
    grad = np.divide(unit, norms / np.where(scale > 0, scale, 1.0), out=np.zeros_like(preds), where=norms > 0)
    return float(norms.sum()), grad


def abnormal_loss(preds_abn: np.ndarray):
    """Mean BCE against target 1; only used for the ablation that shows it hurts."""
    p = np.asarray(preds_abn, dtype=np.float64)
    if p.size == 0:
        raise ValueError("empty selection")
    if np.any(p <= 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
        raise ValueError("abnormal loss needs predictions in (0, 1]; clamp before calling")
    K = p.size
    return float(-np.mean(np.log(p))), -1.0 / (K * p)


def total_loss(nor: float, mpp1: float, mpp2: float, w: LossWeights | None = None) -> float:
    if not all(np.isfinite(v) for v in (nor, mpp1, mpp2)):
        raise ValueError("non-finite loss component")
    w = w or LossWeights()
    return float(nor + w.lambda1 * mpp1 + w.lambda2 * mpp2)
