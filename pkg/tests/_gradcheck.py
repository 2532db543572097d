"""Random finite-difference instances for the losses and the full training objective."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from _oracles import central_difference, grad_close
from bnwvad.losses import MppConfig, abnormal_loss, mpp_loss, normal_loss
from bnwvad.model import forward, backward, init_params
from bnwvad.stats import RunningStats, dfm_batch
from bnwvad.trainer import TrainConfig, plan_step, step_objective

KINK = 1e-3  # instances this close to a ReLU or hinge corner are redrawn
METRICS = ("mahalanobis", "euclidean", "cosine", "fm")


def _rs(rng, C):
    return RunningStats(rng.normal(size=C), rng.uniform(0.3, 2.0, size=C))


def mpp_instance(seed: int) -> bool | None:
    rng = np.random.default_rng(seed)
    K, C = int(rng.integers(1, 6)), int(rng.integers(2, 7))
    cfg = MppConfig(margin=float(rng.uniform(0, 2)), hinge=bool(seed % 2), metric=METRICS[seed % 4])
    rs = _rs(rng, C)
    Xn, Xa = rng.normal(size=(K, C)), rng.normal(scale=2.0, size=(K, C))
    brackets = cfg.margin + dfm_batch(Xn, rs, cfg.metric) - dfm_batch(Xa, rs, cfg.metric)
    if cfg.hinge and np.min(np.abs(brackets)) < KINK:
        return None
    _, gn, ga = mpp_loss(Xn, Xa, rs, cfg)
    fn = central_difference(lambda: mpp_loss(Xn, Xa, rs, cfg)[0], Xn)
    fa = central_difference(lambda: mpp_loss(Xn, Xa, rs, cfg)[0], Xa)
    return grad_close(gn, fn) and grad_close(ga, fa)


def normal_instance(seed: int) -> bool:
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.01, 1.0, size=(int(rng.integers(1, 5)), int(rng.integers(1, 8))))
    _, g = normal_loss(p)
    return grad_close(g, central_difference(lambda: normal_loss(p)[0], p))


def abnormal_instance(seed: int) -> bool:
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.05, 0.95, size=int(rng.integers(1, 10)))
    _, g = abnormal_loss(p)
    return grad_close(g, central_difference(lambda: abnormal_loss(p)[0], p))


def model_config(seed: int) -> TrainConfig:
    """Tiny training config; the seed also cycles through the ablation switches."""
    base = TrainConfig(iterations=1, b_nor=2, b_abn=2, h1=4, h2=3, rho_s=0.5, rho_b=0.25, seed=seed)
    variants = [
        {},
        {"hinge": False},
        {"use_abn_loss": True},
        {"metric": "euclidean"},
        {"metric": "cosine"},
        {"classifier_input": 1},
        {"enhancer_dim": 5},
        {"norm": "identity"},
        {"dfm_stats": "pre"},
        {"selection_layer": "2", "lambda1": 0.5},
    ]
    return replace(base, **variants[seed % len(variants)])


def model_instance(seed: int) -> bool | None:
    """End-to-end: gradient of the assembled step objective w.r.t. every parameter.

    The step plan (running statistics, masks, pairings) is frozen after the
    first forward, exactly as the trainer treats it.
    """
    rng = np.random.default_rng(seed)
    cfg = model_config(seed)
    C, T = 6, 4
    params = init_params(C, c_e=cfg.enhancer_dim, h1=cfg.h1, h2=cfg.h2, seed=seed, norm=cfg.norm,
                         classifier_input=cfg.classifier_input)
    for k in ("gamma1", "gamma2"):
        params.weights[k] = rng.uniform(0.5, 1.5, size=params.weights[k].shape)
    for k in ("beta1", "beta2", "b1", "b2", "bc"):
        params.weights[k] = rng.normal(scale=0.3, size=params.weights[k].shape)
    X = rng.normal(size=(cfg.b_nor + cfg.b_abn, T, C))
    X[cfg.b_nor:, : T // 2] += 1.5

    cache = forward(X, params, "train")
    plan = plan_step(cache, params, cfg, cfg.b_nor)
    if min(np.min(np.abs(cache.y1)), np.min(np.abs(cache.y2))) < KINK:
        return None
    if cfg.hinge:
        for layer, (idx_n, idx_a) in enumerate(plan.pairs, start=1):
            h = cache.Xh1 if layer == 1 else cache.Xh2
            br = cfg.margin + dfm_batch(h[idx_n], plan.rs[layer - 1], cfg.metric) - dfm_batch(h[idx_a], plan.rs[layer - 1], cfg.metric)
            if np.min(np.abs(br)) < KINK:
                return None
    _, _, d_preds, d_xh = step_objective(cache, params, cfg, plan, cfg.b_nor)
    grads = backward(cache, params, d_preds, d_xh[0], d_xh[1])

    def objective():
        c = forward(X, params, "train", update_stats=False)
        return step_objective(c, params, cfg, plan, cfg.b_nor)[0]

    return all(grad_close(grads[k], central_difference(objective, params.weights[k])) for k in params.names())


def run_instances(check, want: int, start: int = 0) -> tuple[int, int]:
    """Draw instances from ``start`` until ``want`` of them are usable; returns (passed, used)."""
    passed = used = 0
    seed = start
    while used < want:
        res = check(seed)
        seed += 1
        if res is None:
            continue
        used += 1
        passed += bool(res)
    return passed, used
