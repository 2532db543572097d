"""Named synthetic benchmarks, train/evaluate runs and ablation sweeps.

Every run trains on the benchmark drawn with ``seed`` and evaluates on an
independent draw (``seed + TEST_SEED_OFFSET``) that shares the anomaly
definition, so results measure generalisation rather than memorisation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

from .data import ClassSpec, Dataset, SynthConfig, generate_synthetic
from .metrics import MetricReport
from .model import ModelParams
from .trainer import TrainConfig, evaluate, fit, score_metric

TEST_SEED_OFFSET = 10_000

BENCHMARKS: dict[str, SynthConfig] = {
    # 2-sigma shift on all 16 channels, Beta(2, 8) abnormality ratios
    "separable": SynthConfig(T=50, C=16),
    # same layout, half the shift: nothing saturates
    "hard": SynthConfig(T=50, C=16, shift_sigma=1.0),
    # features sit away from the origin; anomalies turn the feature
    # direction but keep its length, across unequal channel variances
    "norm_preserving": SynthConfig(
        T=50, C=16, normal_mean=[3.0] * 16, anisotropy=1.0, preserve_norm=True, shift_sigma=1.5
    ),
    # uniform abnormality ratios plus a rare, short, faint class
    "mixed_ratio": SynthConfig(
        T=50,
        C=16,
        ratio_a=1.0,
        ratio_b=1.0,
        classes=[
            ClassSpec("common", 0.85, shift_sigma=1.5),
            ClassSpec("rare", 0.15, shift_sigma=1.0, ratio_range=(0.02, 0.1)),
        ],
    ),
}


def benchmark(name: str, seed: int = 0) -> SynthConfig:
    try:
        base = BENCHMARKS[name]
    except KeyError:
        raise ValueError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}") from None
    return replace(base, seed=seed)


def split(synth: SynthConfig) -> tuple[Dataset, Dataset]:
    """Train and test draws of one benchmark."""
    train = generate_synthetic(synth)
    test = generate_synthetic(replace(synth, seed=synth.seed + TEST_SEED_OFFSET))
    return train, test


@dataclass
class RunResult:
    seed: int
    report: MetricReport
    seconds: float
    params: ModelParams | None = None


def train_and_evaluate(synth: SynthConfig, cfg: TrainConfig, keep_params: bool = False) -> RunResult:
    train, test = split(synth)
    start = time.perf_counter()
    params, _ = fit(cfg, train)
    seconds = time.perf_counter() - start
    report = evaluate(params, test, score_metric(cfg))
    return RunResult(cfg.seed, report, seconds, params if keep_params else None)


def run_seeds(bench: str | SynthConfig, cfg: TrainConfig, seeds=range(5)) -> list[RunResult]:
    """Same benchmark and config, one run per seed (data and init both follow the seed)."""
    out = []
    for s in seeds:
        synth = benchmark(bench, s) if isinstance(bench, str) else replace(bench, seed=s)
        out.append(train_and_evaluate(synth, replace(cfg, seed=s)))
    return out


# --------------------------------------------------------------------------
# sweeps

SWEEP_AXES = ("rho_s", "rho_b", "momentum", "metric", "batch", "selection")


def axis_overrides(axis: str, value: str) -> dict:
    """Translate one sweep point into TrainConfig overrides."""
    if axis in ("rho_s", "rho_b", "momentum"):
        return {axis: float(value)}
    if axis == "metric":
        return {"metric": value}
    if axis == "batch":
        # "16" -> 16+16, "16x32" -> 16 normal + 32 abnormal
        nor, _, abn = value.lower().partition("x")
        return {"b_nor": int(nor), "b_abn": int(abn or nor)}
    if axis == "selection":
        flags = {"sls": (True, False), "bls": (False, True), "sbs": (True, True)}
        if value not in flags:
            raise ValueError(f"selection must be one of {sorted(flags)}, got {value!r}")
        use_sls, use_bls = flags[value]
        return {"use_sls": use_sls, "use_bls": use_bls}
    raise ValueError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")


SWEEP_COLUMNS = ("axis", "value", "seed", "auc", "ap", "auc_abn", "ap_abn", "seconds")


def sweep(axis: str, values: list[str], train: Dataset, test: Dataset, base: TrainConfig, seeds=(0,)) -> list[dict]:
    rows = []
    for value in values:
        overrides = axis_overrides(axis, value)
        for s in seeds:
            cfg = replace(base, seed=s, **overrides)
            cfg.__post_init__()
            start = time.perf_counter()
            params, _ = fit(cfg, train)
            seconds = time.perf_counter() - start
            rep = evaluate(params, test, score_metric(cfg))
            rows.append(
                {
                    "axis": axis, "value": value, "seed": s, "auc": rep.auc, "ap": rep.ap,
                    "auc_abn": rep.auc_abn, "ap_abn": rep.ap_abn, "seconds": round(seconds, 3),
                }
            )
    return rows
