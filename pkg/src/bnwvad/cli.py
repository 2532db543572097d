"""Command-line entry point: ``synth``, ``train``, ``score``, ``eval``, ``sweep``.

Exit status is 0 on success, 2 on a usage error and 1 on a runtime error,
in which case a one-line diagnostic goes to standard error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from collections import defaultdict
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .data import SynthConfig, generate_synthetic, load_dataset, save_dataset
from .experiments import BENCHMARKS, SWEEP_AXES, SWEEP_COLUMNS, benchmark, split, sweep
from .trainer import TrainConfig, fit_state, report_from_scores, score_dataset, score_metric, write_curve

log = logging.getLogger("bnwvad")

SCORE_COLUMNS = ("video_id", "snippet_index", "pred", "dfm1", "dfm2", "score", "label")


class CliError(Exception):
    """Runtime failure reported as exit status 1."""


def _read_json(path: str | None) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON ({exc})") from exc


def _parse_overrides(pairs: list[str] | None) -> dict:
    out = {}
    for item in pairs or []:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise CliError(f"override {item!r} is not of the form key=value")
        try:
            out[key.replace("-", "_")] = json.loads(raw)
        except json.JSONDecodeError:
            out[key.replace("-", "_")] = raw
    return out


def _train_config(args) -> TrainConfig:
    values = _read_json(args.config)
    values.update(_parse_overrides(args.set))
    if args.seed is not None:
        values["seed"] = args.seed
    cfg = TrainConfig.from_dict(values)  # rejects unknown keys
    return TrainConfig.desk(**values) if args.desk else cfg


def _fmt(x: float) -> str:
    return repr(float(x))


# --------------------------------------------------------------------------
# commands


def cmd_synth(args) -> None:
    values = _read_json(args.config)
    unknown = set(values) - set(SynthConfig.__dataclass_fields__)
    if unknown:
        raise CliError(f"unknown generator options: {sorted(unknown)}")
    base = benchmark(args.benchmark) if args.benchmark else SynthConfig()
    synth = replace(base, **values)
    if args.seed is not None:
        synth = replace(synth, seed=args.seed)
    ds = generate_synthetic(synth)
    path = save_dataset(ds, args.out, {"synth_config": synth.to_dict()})
    print(json.dumps({"manifest": str(path), "videos": len(ds), "normal": len(ds.normal), "abnormal": len(ds.abnormal)}))


def cmd_train(args) -> None:
    cfg = _train_config(args)
    ds = load_dataset(args.data)
    state, curve = fit_state(cfg, ds, checkpoint_dir=args.checkpoint_dir)
    extra = {"train_config": cfg.to_dict(), "step": state.step}
    save_checkpoint(args.out, state.params, state.opt, extra)
    if args.curve:
        write_curve(args.curve, curve)
    last = curve[-1]
    print(json.dumps({"checkpoint": str(args.out), "iterations": state.step, "final_loss": last.L}))


def _checkpoint_metric(extra: dict, override: str | None):
    if override:
        return override
    cfg = extra.get("train_config")
    return score_metric(TrainConfig.from_dict(cfg)) if cfg else "mahalanobis"


def cmd_score(args) -> None:
    params, _, extra = load_checkpoint(args.ckpt)
    ds = load_dataset(args.data)
    scored = score_dataset(params, ds, _checkpoint_metric(extra, args.metric))
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCORE_COLUMNS)
        for v in ds.videos:
            parts = scored[v.id]
            for t in range(len(parts["score"])):
                label = "" if v.snippet_labels is None else int(v.snippet_labels[t])
                w.writerow([v.id, t] + [_fmt(parts[k][t]) for k in ("pred", "dfm1", "dfm2", "score")] + [label])
    print(json.dumps({"scores": str(args.out), "videos": len(ds)}))


def _read_scores(path: str) -> dict[str, np.ndarray]:
    rows = defaultdict(dict)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"video_id", "snippet_index", "score"} - set(reader.fieldnames or ())
        if missing:
            raise CliError(f"{path}: missing columns {sorted(missing)}")
        for r in reader:
            rows[r["video_id"]][int(r["snippet_index"])] = float(r["score"])
    out = {}
    for vid, by_index in rows.items():
        idx = sorted(by_index)
        if idx != list(range(len(idx))):
            raise CliError(f"{path}: snippet indices of {vid} are not contiguous from 0")
        out[vid] = np.array([by_index[i] for i in idx])
    return out


def cmd_eval(args) -> None:
    ds = load_dataset(args.data)
    if not ds.has_snippet_labels():
        raise CliError("evaluation requires snippet labels")
    if args.scores:
        scores = _read_scores(args.scores)
        unknown = set(scores) - {v.id for v in ds.videos}
        if unknown:
            raise CliError(f"scores for videos not in the dataset: {sorted(unknown)[:3]}")
        absent = {v.id for v in ds.videos} - set(scores)
        if absent:
            raise CliError(f"no scores for {len(absent)} dataset videos, e.g. {sorted(absent)[0]}")
    else:
        params, _, extra = load_checkpoint(args.ckpt)
        scored = score_dataset(params, ds, _checkpoint_metric(extra, args.metric))
        scores = {k: v["score"] for k, v in scored.items()}
    report = report_from_scores(ds, scores, args.frames_per_snippet)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)


def cmd_sweep(args) -> None:
    cfg = _train_config(args)
    if args.data:
        train = load_dataset(args.data)
        test = load_dataset(args.test) if args.test else train
    else:
        train, test = split(benchmark(args.benchmark, cfg.seed))
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise CliError("--values needs at least one value")
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg.seed]
    rows = sweep(args.axis, values, train, test, cfg, seeds)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.DictWriter(fh, SWEEP_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    finally:
        if args.out:
            fh.close()


# --------------------------------------------------------------------------
# parser


def _add_train_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of training options")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one training option (repeatable)")
    p.add_argument("--seed", type=int)
    p.add_argument("--desk", action="store_true", help="start from the small-batch desk preset")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bnwvad", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", help="JSON file of generator options")
    p.add_argument("--benchmark", choices=sorted(BENCHMARKS), help="start from a named benchmark")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path (.json for the text form)")
    p.add_argument("--curve", help="write the training curve CSV here")
    p.add_argument("--checkpoint-dir", help="directory for periodic checkpoints")
    _add_train_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="write per-snippet scores")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--metric", help="divergence used for scoring (default: from the checkpoint)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="compute a metric report")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scores", help="score CSV written by 'score'")
    src.add_argument("--ckpt")
    p.add_argument("--data", required=True)
    p.add_argument("--metric")
    p.add_argument("--frames-per-snippet", type=int, default=1)
    p.add_argument("--out", help="also write the report JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train and evaluate over one ablation axis")
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True, help="comma-separated points")
    p.add_argument("--data", help="training dataset (default: generate --benchmark)")
    p.add_argument("--test", help="evaluation dataset (default: the training set)")
    p.add_argument("--benchmark", default="hard", choices=sorted(BENCHMARKS))
    p.add_argument("--seeds", help="comma-separated seeds (default: --seed)")
    p.add_argument("--out", help="CSV path (default: stdout)")
    _add_train_options(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        args.func(args)
    except (CliError, ValueError, KeyError, OSError, AssertionError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"bnwvad: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
