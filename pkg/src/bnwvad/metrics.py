"""Snippet-level ROC-AUC / AP plus abnormal-subset and class-wise reports."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata


@dataclass
class MetricReport:
    auc: float
    ap: float
    auc_abn: float | None = None
    ap_abn: float | None = None
    classwise_ap: dict[str, float] = field(default_factory=dict)
    n_snippets: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _prepare(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).astype(bool).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return s, y


def roc_auc(scores, labels) -> float:
    """Mann-Whitney form: P(pos > neg) + 0.5 P(pos == neg), via average ranks."""
    s, y = _prepare(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("undefined AUC: need both positive and negative labels")
    ranks = rankdata(s, method="average")
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Step-wise AP over the descending-score sweep; tied scores enter together."""
    s, y = _prepare(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("undefined AP: no positive labels")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of each block of equal scores
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.cumsum(y)[ends]
    predicted = ends + 1
    precision = tp / predicted
    recall = tp / n_pos
    recall_prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - recall_prev) * precision))


def expand_frames(values: np.ndarray, frames_per_snippet: int) -> np.ndarray:
    """Repeat each snippet value ``k`` times to emulate frame-level scoring."""
    if frames_per_snippet < 1:
        raise ValueError("frames_per_snippet must be >= 1")
    return np.repeat(np.asarray(values), frames_per_snippet)


def subset_and_classwise(
    scores: dict[str, np.ndarray],
    snippet_labels: dict[str, np.ndarray | None],
    video_labels: dict[str, int],
    classes: dict[str, str | None] | None = None,
    frames_per_snippet: int = 1,
) -> MetricReport:
    """Overall, abnormal-only and per-class metrics from per-video score vectors.

    Class-wise AP pools the snippets of one class's videos with every
    normal-video snippet.
    """
    classes = classes or {}
    ids = sorted(scores)
    for vid in ids:
        if snippet_labels.get(vid) is None:
            raise ValueError("evaluation requires snippet labels")
        if len(snippet_labels[vid]) != len(scores[vid]):
            raise ValueError(f"{vid}: {len(scores[vid])} scores but {len(snippet_labels[vid])} labels")

    def pooled(subset):
        s = np.concatenate([expand_frames(scores[v], frames_per_snippet) for v in subset])
        y = np.concatenate([expand_frames(snippet_labels[v], frames_per_snippet) for v in subset])
        return s, y

    s_all, y_all = pooled(ids)
    report = MetricReport(roc_auc(s_all, y_all), average_precision(s_all, y_all), n_snippets=int(s_all.size))

    abn = [v for v in ids if video_labels[v] == 1]
    nor = [v for v in ids if video_labels[v] != 1]
    if not abn:
        raise ValueError("abnormal subset is empty")
    s_abn, y_abn = pooled(abn)
    if y_abn.all():
        # every snippet abnormal: ranking is undefined, AP trivially 1
        report.auc_abn, report.ap_abn = None, 1.0
    else:
        report.auc_abn = roc_auc(s_abn, y_abn)
        report.ap_abn = average_precision(s_abn, y_abn)

    names = sorted({classes[v] for v in abn if classes.get(v)})
    for name in names:
        s, y = pooled([v for v in abn if classes.get(v) == name] + nor)
        report.classwise_ap[name] = average_precision(s, y)
    return report
