"""Training loop, scoring and evaluation.

One step: train-mode forward on the normal+abnormal batch (which also
updates the running statistics), divergence grids on both hidden blocks,
sample/batch selection in abnormal videos and matched selection in normal
videos, the loss assembly, backward, and an Adam update.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import checkpoint as ckpt
from .data import BatchSampler, Batch, Dataset
from .losses import BCE_CLAMP, LossWeights, MppConfig, abnormal_loss, mpp_loss, normal_loss, total_loss
from .metrics import MetricReport, subset_and_classwise
from .model import ModelParams, anomaly_score, backward, forward, init_params, score_components
from .optim import AdamState, adam_step
from .selection import SelectionRatios, select_normal_matched, select_sbs
from .stats import DfmMetric, dfm_batch

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("iteration", "L", "L_nor", "L_mpp1", "L_mpp2", "selected_K", "mean_DFM_abn", "mean_DFM_nor")


@dataclass
class TrainConfig:
    iterations: int = 3000
    b_nor: int = 64
    b_abn: int = 64
    T: int | None = None  # resample every video to this length when batching
    rho_s: float = 0.1
    rho_b: float = 0.2
    lambda1: float = 5.0
    lambda2: float = 20.0
    margin: float = 1.0
    hinge: bool = True
    momentum: float = 0.1
    metric: str = "mahalanobis"
    score_metric: str | None = None  # defaults to ``metric``
    selection_metric: str | None = None  # defaults to ``metric``
    h1: int = 32
    h2: int = 16
    enhancer_dim: int | None = None
    lr: float = 1e-4
    weight_decay: float = 5e-5
    # ablation switches
    use_sls: bool = True
    use_bls: bool = True
    use_mpp: bool = True
    use_nor_loss: bool = True
    use_abn_loss: bool = False
    norm: str = "batch"  # "identity" removes the normalisation
    classifier_input: int = 2
    dfm_stats: str = "post"  # running stats used for selection/MPP: after or before this step's EMA
    selection_layer: str = "sum"  # "1", "2" or "sum"
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.dfm_stats not in ("pre", "post"):
            raise ValueError("dfm_stats must be 'pre' or 'post'")
        if str(self.selection_layer) not in ("1", "2", "sum"):
            raise ValueError("selection_layer must be '1', '2' or 'sum'")
        self.selection_layer = str(self.selection_layer)
        for m in (self.metric, self.score_metric, self.selection_metric):
            if m is not None:
                DfmMetric.parse(m)
        self.ratios  # validates the ratio pair
        LossWeights(self.lambda1, self.lambda2)

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Small-batch preset for the synthetic benchmarks."""
        base = dict(iterations=500, b_nor=8, b_abn=8, lr=1e-3)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def ratios(self) -> SelectionRatios:
        return SelectionRatios(self.rho_s if self.use_sls else 0.0, self.rho_b if self.use_bls else 0.0)

    @property
    def mpp(self) -> MppConfig:
        return MppConfig(self.margin, self.hinge, DfmMetric.parse(self.metric))

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2)


@dataclass
class TrainState:
    params: ModelParams
    opt: AdamState
    step: int = 0


@dataclass
class StepLog:
    iteration: int
    L: float
    L_nor: float
    L_mpp1: float
    L_mpp2: float
    selected_K: int
    mean_DFM_abn: float
    mean_DFM_nor: float
    L_abn: float = 0.0

    def row(self) -> list:
        return [getattr(self, c) for c in CURVE_COLUMNS]


def init_state(cfg: TrainConfig, c_in: int) -> TrainState:
    params = init_params(
        c_in,
        c_e=cfg.enhancer_dim,
        h1=cfg.h1,
        h2=cfg.h2,
        seed=cfg.seed,
        norm=cfg.norm,
        classifier_input=cfg.classifier_input,
        momentum=cfg.momentum,
    )
    return TrainState(params, AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay))


@dataclass
class StepPlan:
    """Everything a step decided before differentiation: stats, masks, pairings."""

    rs: tuple
    mask_abn: np.ndarray
    mask_nor: np.ndarray
    pairs: list = field(default_factory=list)  # per layer: (nor flat idx, abn flat idx) in pairing order
    dfm_sum: np.ndarray | None = None


def plan_step(cache, params: ModelParams, cfg: TrainConfig, b_nor: int) -> StepPlan:
    rs = (params.rs1, params.rs2) if cfg.dfm_stats == "post" else cache.rs_before
    metric = DfmMetric.parse(cfg.metric)
    grids = [dfm_batch(cache.hidden(l), rs[l - 1], metric) for l in (1, 2)]
    sel_metric = DfmMetric.parse(cfg.selection_metric or cfg.metric)
    if sel_metric != metric:
        sel_grids = [dfm_batch(cache.hidden(l), rs[l - 1], sel_metric) for l in (1, 2)]
    else:
        sel_grids = grids
    sel = {"1": sel_grids[0], "2": sel_grids[1], "sum": sel_grids[0] + sel_grids[1]}[cfg.selection_layer]
    mask_a = select_sbs(sel[b_nor:], cfg.ratios).selected
    K = int(mask_a.sum())
    assert K > 0, "selection produced no abnormal snippets"
    mask_n = select_normal_matched(sel[:b_nor], K).selected

    pairs = []
    for l in (1, 2):
        g = grids[l - 1]
        # flat indices into the [B*T] rows, ordered by this layer's divergence
        idx_n = np.flatnonzero(mask_n.ravel())
        idx_a = np.flatnonzero(mask_a.ravel()) + b_nor * mask_a.shape[1]
        idx_n = idx_n[np.argsort(-g.ravel()[idx_n], kind="stable")]
        idx_a = idx_a[np.argsort(-g.ravel()[idx_a], kind="stable")]
        pairs.append((idx_n, idx_a))
    return StepPlan(rs, mask_a, mask_n, pairs, sel)


def step_objective(cache, params: ModelParams, cfg: TrainConfig, plan: StepPlan, b_nor: int):
    """Loss value and upstream gradients for a fixed plan."""
    B, T = cache.shape
    preds = cache.preds
    d_preds = np.zeros((B, T))
    parts = {"nor": 0.0, "mpp1": 0.0, "mpp2": 0.0, "abn": 0.0}

    if cfg.use_nor_loss:
        parts["nor"], g = normal_loss(preds[:b_nor])
        d_preds[:b_nor] += g

    d_xh = []
    w = cfg.weights
    for l, lam in ((1, w.lambda1), (2, w.lambda2)):
        h = cache.Xh1 if l == 1 else cache.Xh2
        d = np.zeros_like(h)
        if cfg.use_mpp:
            idx_n, idx_a = plan.pairs[l - 1]
            value, gn, ga = mpp_loss(h[idx_n], h[idx_a], plan.rs[l - 1], cfg.mpp)
            parts[f"mpp{l}"] = value
            np.add.at(d, idx_n, lam * gn)
            np.add.at(d, idx_a, lam * ga)
        d_xh.append(d)

    if cfg.use_abn_loss:
        pa = preds[b_nor:][plan.mask_abn]
        clamped = np.clip(pa, BCE_CLAMP, 1.0 - BCE_CLAMP)
        parts["abn"], g = abnormal_loss(clamped)
        g = np.where((pa > BCE_CLAMP) & (pa < 1.0 - BCE_CLAMP), g, 0.0)
        sub = d_preds[b_nor:]
        sub[plan.mask_abn] += g

    L = total_loss(parts["nor"] + parts["abn"], parts["mpp1"], parts["mpp2"], w)
    return L, parts, d_preds, d_xh


def train_step(state: TrainState, batch: Batch, cfg: TrainConfig) -> tuple[TrainState, StepLog]:
    params = state.params.copy()
    b_nor = batch.X_nor.shape[0]
    X = np.concatenate([batch.X_nor, batch.X_abn], axis=0)
    cache = forward(X, params, "train")
    plan = plan_step(cache, params, cfg, b_nor)
    L, parts, d_preds, d_xh = step_objective(cache, params, cfg, plan, b_nor)
    grads = backward(cache, params, d_preds, d_xh[0], d_xh[1])
    params.weights, opt = adam_step(params.weights, grads, state.opt)

    entry = StepLog(
        iteration=state.step + 1,
        L=L,
        L_nor=parts["nor"],
        L_mpp1=parts["mpp1"],
        L_mpp2=parts["mpp2"],
        selected_K=int(plan.mask_abn.sum()),
        mean_DFM_abn=float(plan.dfm_sum[b_nor:].mean()),
        mean_DFM_nor=float(plan.dfm_sum[:b_nor].mean()),
        L_abn=parts["abn"],
    )
    return TrainState(params, opt, state.step + 1), entry


def fit_state(
    cfg: TrainConfig,
    ds: Dataset,
    checkpoint_dir: str | Path | None = None,
    on_step: Callable[[TrainState, StepLog], None] | None = None,
) -> tuple[TrainState, list[StepLog]]:
    """Train from scratch; returns the final state including optimizer moments."""
    seq = np.random.SeedSequence(cfg.seed)
    sampler = BatchSampler(ds, cfg.b_nor, cfg.b_abn, seed=int(seq.generate_state(1)[0]), T=cfg.T)
    state = init_state(cfg, ds.channels)
    curve = []
    for _ in range(cfg.iterations):
        state, entry = train_step(state, next(sampler), cfg)
        curve.append(entry)
        if on_step:
            on_step(state, entry)
        if checkpoint_dir and cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
            path = Path(checkpoint_dir) / f"step_{state.step:06d}.ckpt"
            ckpt.save_checkpoint(path, state.params, state.opt, {"step": state.step})
        if state.step % 100 == 0:
            log.debug("step %d L=%.4f K=%d", state.step, entry.L, entry.selected_K)
    return state, curve


def fit(cfg: TrainConfig, ds: Dataset, **kw) -> tuple[ModelParams, list[StepLog]]:
    state, curve = fit_state(cfg, ds, **kw)
    return state.params, curve


def write_curve(path: str | Path, curve: list[StepLog]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_COLUMNS)
        for e in curve:
            w.writerow(e.row())


# --------------------------------------------------------------------------
# inference


def score_video(params: ModelParams, feats: np.ndarray, metric: DfmMetric | str = DfmMetric.MAHALANOBIS) -> dict[str, np.ndarray]:
    """Crop-averaged ``pred``, ``dfm1``, ``dfm2`` and fused ``score`` for one ``[crops, T, C]`` video."""
    cache = forward(feats, params, "eval")
    preds, d1, d2 = score_components(cache, params, metric)
    return {
        "pred": preds.mean(axis=0),
        "dfm1": d1.mean(axis=0),
        "dfm2": d2.mean(axis=0),
        "score": anomaly_score(cache, params, metric).mean(axis=0),
    }


def score_dataset(params: ModelParams, ds: Dataset, metric: DfmMetric | str = DfmMetric.MAHALANOBIS) -> dict[str, dict[str, np.ndarray]]:
    return {v.id: score_video(params, ds.features[v.id], metric) for v in ds.videos}


def report_from_scores(ds: Dataset, scores: dict[str, np.ndarray], frames_per_snippet: int = 1) -> MetricReport:
    return subset_and_classwise(
        scores,
        {v.id: v.snippet_labels for v in ds.videos},
        {v.id: v.label for v in ds.videos},
        {v.id: v.class_name for v in ds.videos},
        frames_per_snippet,
    )


def evaluate(params: ModelParams, ds: Dataset, metric: DfmMetric | str = DfmMetric.MAHALANOBIS, frames_per_snippet: int = 1) -> MetricReport:
    if not ds.has_snippet_labels():
        raise ValueError("evaluation requires snippet labels")
    scored = score_dataset(params, ds, metric)
    return report_from_scores(ds, {k: v["score"] for k, v in scored.items()}, frames_per_snippet)


def score_metric(cfg: TrainConfig) -> DfmMetric:
    return DfmMetric.parse(cfg.score_metric or cfg.metric)


def with_overrides(cfg: TrainConfig, **kw) -> TrainConfig:
    return replace(cfg, **kw)
