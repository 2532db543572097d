#!/usr/bin/env python3
"""Paired ablation on a synthetic benchmark: one CSV row per (variant, seed).

    python3 scripts/ablation.py norm --benchmark separable
    python3 scripts/ablation.py momentum --benchmark hard --seeds 0,1,2,3,4
"""

from __future__ import annotations

import argparse
import csv
import sys

from bnwvad.experiments import BENCHMARKS, run_seeds
from bnwvad.trainer import TrainConfig

VARIANTS = {
    "norm": {"batch": {}, "identity": {"norm": "identity"}},
    "selection_metric": {"mahalanobis": {}, "fm": {"selection_metric": "fm"}},
    "selection": {"sbs": {}, "sls": {"use_bls": False}, "bls": {"use_sls": False}},
    "momentum": {"0.01": {"momentum": 0.01}, "0.1": {}, "1": {"momentum": 1.0}},
    "abn_loss": {"off": {}, "on": {"use_abn_loss": True}},
    "mpp": {"on": {}, "off": {"use_mpp": False}},
    "dfm_stats": {"post": {}, "pre": {"dfm_stats": "pre"}},
    "selection_layer": {"sum": {}, "1": {"selection_layer": "1"}, "2": {"selection_layer": "2"}},
}


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("ablation", choices=sorted(VARIANTS))
    p.add_argument("--benchmark", default="hard", choices=sorted(BENCHMARKS))
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--iterations", type=int, default=500)
    args = p.parse_args(argv)
    seeds = [int(s) for s in args.seeds.split(",")]

    w = csv.writer(sys.stdout)
    w.writerow(["variant", "seed", "auc", "ap", "auc_abn", "ap_abn", "classwise_ap", "seconds"])
    for name, overrides in VARIANTS[args.ablation].items():
        cfg = TrainConfig.desk(iterations=args.iterations, **overrides)
        for r in run_seeds(args.benchmark, cfg, seeds):
            rep = r.report
            classes = ";".join(f"{k}={v:.4f}" for k, v in sorted(rep.classwise_ap.items()))
            w.writerow([name, r.seed, f"{rep.auc:.5f}", f"{rep.ap:.5f}", rep.auc_abn, rep.ap_abn, classes, f"{r.seconds:.2f}"])
            sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
