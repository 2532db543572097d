"""Per-snippet network: optional linear enhancer, two projection blocks, classifier.

Each projection block is ``relu(gamma * norm(x @ W + b) + beta)``. The
pre-normalisation outputs of the two blocks (``Xh1``, ``Xh2``) are the
hidden features that the divergence criterion and the pull-push loss act on.
All arithmetic is float64.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .stats import BatchStats, DfmMetric, RunningStats, batch_stats, dfm_batch, ema_update

PARAM_ORDER = ("enh_w", "enh_b", "w1", "b1", "gamma1", "beta1", "w2", "b2", "gamma2", "beta2", "wc", "bc")


@dataclass(frozen=True)
class ModelConfig:
    c_in: int
    h1: int = 32
    h2: int = 16
    c_e: int | None = None  # enhancer width; None means no enhancer
    norm: str = "batch"  # "batch" or "identity"
    classifier_input: int = 2  # which hidden block feeds the classifier
    momentum: float = 0.1
    eps: float = 1e-5

    def __post_init__(self):
        dims = [self.c_in, self.h1, self.h2] + ([self.c_e] if self.c_e is not None else [])
        if any(int(d) <= 0 for d in dims):
            raise ValueError("all layer dimensions must be positive")
        if self.norm not in ("batch", "identity"):
            raise ValueError(f"unknown normalisation {self.norm!r}")
        if self.classifier_input not in (1, 2):
            raise ValueError("classifier_input must be 1 or 2")

    @property
    def feature_dim(self) -> int:
        return self.c_in if self.c_e is None else self.c_e


@dataclass
class ModelParams:
    config: ModelConfig
    weights: dict[str, np.ndarray]
    rs1: RunningStats
    rs2: RunningStats

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.weights.items()}, self.rs1, self.rs2)

    def names(self) -> list[str]:
        return [k for k in PARAM_ORDER if k in self.weights]


@dataclass
class ForwardCache:
    mode: str
    shape: tuple[int, int]
    X: np.ndarray
    Xe: np.ndarray
    Xh1: np.ndarray
    Xh2: np.ndarray
    xhat1: np.ndarray
    xhat2: np.ndarray
    inv_std1: np.ndarray
    inv_std2: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    preds: np.ndarray
    rs_before: tuple[RunningStats, RunningStats] = field(default=None)

    def hidden(self, layer: int) -> np.ndarray:
        """Pre-normalisation features of block ``layer`` as ``[B, T, H]``."""
        B, T = self.shape
        h = self.Xh1 if layer == 1 else self.Xh2
        return h.reshape(B, T, -1)


def init_params(c_in: int, c_e: int | None = None, h1: int = 32, h2: int = 16, seed: int = 0, **config) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit BN scale."""
    cfg = ModelConfig(c_in=c_in, c_e=c_e, h1=h1, h2=h2, **config)
    rng = np.random.default_rng(seed)

    def uniform(fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    w: dict[str, np.ndarray] = {}
    if cfg.c_e is not None:
        w["enh_w"] = uniform(c_in, cfg.c_e)
        w["enh_b"] = np.zeros(cfg.c_e)
    d = cfg.feature_dim
    w["w1"], w["b1"] = uniform(d, h1), np.zeros(h1)
    w["gamma1"], w["beta1"] = np.ones(h1), np.zeros(h1)
    w["w2"], w["b2"] = uniform(h1, h2), np.zeros(h2)
    w["gamma2"], w["beta2"] = np.ones(h2), np.zeros(h2)
    hc = h2 if cfg.classifier_input == 2 else h1
    w["wc"], w["bc"] = uniform(hc, 1), np.zeros(1)
    return ModelParams(
        cfg,
        w,
        RunningStats.initial(h1, cfg.momentum, cfg.eps),
        RunningStats.initial(h2, cfg.momentum, cfg.eps),
    )


def _normalise(h, rs: RunningStats, cfg: ModelConfig, train: bool, bs: BatchStats | None):
    if cfg.norm == "identity":
        return h, np.ones(h.shape[1])
    if train:
        mean, var = bs.mean, bs.var
    else:
        mean, var = rs.mean, rs.var
    inv_std = 1.0 / np.sqrt(var + cfg.eps)
    return (h - mean) * inv_std, inv_std


def sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward(X: np.ndarray, params: ModelParams, mode: str = "eval", update_stats: bool = True) -> ForwardCache:
    """Run the network on a ``[B, T, C_in]`` tensor.

    In ``train`` mode the blocks normalise with the batch statistics and,
    unless ``update_stats`` is False, the running statistics on ``params``
    are replaced by their EMA update. The statistics in force before the call
    are kept on the cache as ``rs_before``.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    X = np.asarray(X)
    if X.ndim != 3:
        raise ValueError("expected a [B, T, C] feature tensor")
    B, T, C = X.shape
    cfg = params.config
    if C != cfg.c_in:
        raise ValueError(f"expected {cfg.c_in} input channels, got {C}")
    train = mode == "train"
    if train and B * T < 2:
        raise ValueError("degenerate batch statistics")
    x = X.reshape(B * T, C).astype(np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite feature")
    w = params.weights
    rs_before = (params.rs1, params.rs2)

    xe = x
    if "enh_w" in w:
        xe = x @ w["enh_w"] + w["enh_b"]
        if cfg.c_e == cfg.c_in:
            xe = xe + x

    h1 = xe @ w["w1"] + w["b1"]
    bs1 = batch_stats(h1) if train else None
    xhat1, inv1 = _normalise(h1, params.rs1, cfg, train, bs1)
    y1 = w["gamma1"] * xhat1 + w["beta1"]
    a1 = np.maximum(y1, 0.0)

    h2 = a1 @ w["w2"] + w["b2"]
    bs2 = batch_stats(h2) if train else None
    xhat2, inv2 = _normalise(h2, params.rs2, cfg, train, bs2)
    y2 = w["gamma2"] * xhat2 + w["beta2"]
    a2 = np.maximum(y2, 0.0)

    feat = a2 if cfg.classifier_input == 2 else a1
    preds = sigmoid(feat @ w["wc"] + w["bc"]).reshape(B, T)

    if train and update_stats:
        params.rs1 = ema_update(params.rs1, bs1)
        params.rs2 = ema_update(params.rs2, bs2)

    return ForwardCache(mode, (B, T), x, xe, h1, h2, xhat1, xhat2, inv1, inv2, y1, y2, a1, a2, preds, rs_before)


def _bn_backward(dxhat, xhat, inv_std):
    # d/dh of (h - mean(h)) * inv_std(h) with batch mean/var
    n = dxhat.shape[0]
    return (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0))


def backward(cache: ForwardCache, params: ModelParams, d_preds=None, d_xh1=None, d_xh2=None) -> dict[str, np.ndarray]:
    """Gradients of a scalar objective w.r.t. every parameter.

    ``d_preds`` is the upstream gradient on the ``[B, T]`` predictions;
    ``d_xh1``/``d_xh2`` are gradients injected directly at the
    pre-normalisation hidden features (the pull-push loss path). Batch-norm
    backward includes the dependence of the batch mean and variance on the
    input. Running statistics get no gradient.
    """
    if cache.mode != "train":
        raise ValueError("backward needs a cache from a train-mode forward")
    cfg = params.config
    w = params.weights
    B, T = cache.shape
    N = B * T

    def flat(g, width):
        if g is None:
            return np.zeros((N, width))
        return np.asarray(g, dtype=np.float64).reshape(N, width)

    dp = flat(d_preds, 1)
    g: dict[str, np.ndarray] = {}

    p = cache.preds.reshape(N, 1)
    dz = dp * p * (1.0 - p)
    feat = cache.a2 if cfg.classifier_input == 2 else cache.a1
    g["wc"] = feat.T @ dz
    g["bc"] = dz.sum(axis=0)
    dfeat = dz @ w["wc"].T

    da2 = dfeat if cfg.classifier_input == 2 else np.zeros_like(cache.a2)
    dy2 = da2 * (cache.y2 > 0)
    g["gamma2"] = np.sum(dy2 * cache.xhat2, axis=0)
    g["beta2"] = dy2.sum(axis=0)
    dxhat2 = dy2 * w["gamma2"]
    dh2 = dxhat2 if cfg.norm == "identity" else _bn_backward(dxhat2, cache.xhat2, cache.inv_std2)
    dh2 = dh2 + flat(d_xh2, cfg.h2)
    g["w2"] = cache.a1.T @ dh2
    g["b2"] = dh2.sum(axis=0)

    da1 = dh2 @ w["w2"].T
    if cfg.classifier_input == 1:
        da1 = da1 + dfeat
    dy1 = da1 * (cache.y1 > 0)
    g["gamma1"] = np.sum(dy1 * cache.xhat1, axis=0)
    g["beta1"] = dy1.sum(axis=0)
    dxhat1 = dy1 * w["gamma1"]
    dh1 = dxhat1 if cfg.norm == "identity" else _bn_backward(dxhat1, cache.xhat1, cache.inv_std1)
    dh1 = dh1 + flat(d_xh1, cfg.h1)
    g["w1"] = cache.Xe.T @ dh1
    g["b1"] = dh1.sum(axis=0)

    if "enh_w" in w:
        dxe = dh1 @ w["w1"].T
        g["enh_w"] = cache.X.T @ dxe
        g["enh_b"] = dxe.sum(axis=0)

    return {k: g[k] for k in params.names()}


def score_components(cache: ForwardCache, params: ModelParams, metric: DfmMetric | str = DfmMetric.MAHALANOBIS):
    """Classifier prediction and the two per-block divergences, each ``[B, T]``."""
    d1 = dfm_batch(cache.hidden(1), params.rs1, metric)
    d2 = dfm_batch(cache.hidden(2), params.rs2, metric)
    return cache.preds, d1, d2


def anomaly_score(cache: ForwardCache, params: ModelParams, metric: DfmMetric | str = DfmMetric.MAHALANOBIS) -> np.ndarray:
    """Prediction times the summed two-block divergence; meant for eval-mode caches."""
    preds, d1, d2 = score_components(cache, params, metric)
    return preds * (d1 + d2)


def clone(params: ModelParams) -> ModelParams:
    return copy.deepcopy(params)
