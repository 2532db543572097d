"""Snippet selection over ``[B, T]`` abnormality-score grids.

All strategies are rank based and deterministic: ties go to the lower
video index, then the lower snippet index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# provenance codes
NONE, SLS, BLS, BOTH = 0, 1, 2, 3
PROVENANCE_NAMES = {NONE: "none", SLS: "sls", BLS: "bls", BOTH: "both"}


@dataclass(frozen=True)
class SelectionRatios:
    rho_s: float
    rho_b: float

    def __post_init__(self):
        for name in ("rho_s", "rho_b"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.rho_s == 0 and self.rho_b == 0:
            raise ValueError("at least one selection ratio must be positive")


@dataclass(frozen=True)
class SelectionMask:
    selected: np.ndarray  # bool [B, T]
    provenance: np.ndarray  # uint8 [B, T], codes above

    def __post_init__(self):
        if self.selected.shape != self.provenance.shape:
            raise ValueError("selected and provenance shapes differ")
        if not np.array_equal(self.selected, self.provenance != NONE):
            raise ValueError("provenance must be set exactly on selected cells")

    @property
    def count(self) -> int:
        return int(self.selected.sum())

    @classmethod
    def from_bool(cls, selected: np.ndarray, source: int) -> "SelectionMask":
        selected = np.asarray(selected, dtype=bool)
        return cls(selected, np.where(selected, source, NONE).astype(np.uint8))


def k_from_ratio(rho: float, n: int) -> int:
    """Number of items picked for ratio ``rho`` out of ``n``; 0 when disabled."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"selection ratio must lie in [0, 1], got {rho}")
    if rho == 0:
        return 0
    # guard against 0.3*10 = 3.0000000000000004 style rounding
    return min(n, max(1, math.ceil(round(rho * n, 9))))


def _check_grid(scores: np.ndarray) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] < 1:
        raise ValueError("scores must be a [B, T] grid with T >= 1")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    return scores


def _top_k_rows(scores: np.ndarray, k: int) -> np.ndarray:
    B, T = scores.shape
    out = np.zeros((B, T), dtype=bool)
    if k == 0:
        return out
    # stable sort on -score keeps lower indices first among ties
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    np.put_along_axis(out, order, True, axis=1)
    return out


def select_sls(scores: np.ndarray, rho_s: float) -> SelectionMask:
    """Per-video top ``ceil(rho_s * T)`` snippets."""
    scores = _check_grid(scores)
    k = k_from_ratio(rho_s, scores.shape[1])
    return SelectionMask.from_bool(_top_k_rows(scores, k), SLS)


def select_bls(scores: np.ndarray, rho_b: float) -> SelectionMask:
    """Top ``ceil(rho_b * B * T)`` snippets of the whole mini-batch."""
    scores = _check_grid(scores)
    k = k_from_ratio(rho_b, scores.size)
    flat = np.zeros(scores.size, dtype=bool)
    if k:
        # row-major flattening makes the stable order (video, snippet)
        flat[np.argsort(-scores.ravel(), kind="stable")[:k]] = True
    return SelectionMask.from_bool(flat.reshape(scores.shape), BLS)


def select_sbs(scores: np.ndarray, ratios: SelectionRatios) -> SelectionMask:
    """Union of sample-level and batch-level selection; a zero ratio disables its half."""
    sls = select_sls(scores, ratios.rho_s).selected
    bls = select_bls(scores, ratios.rho_b).selected
    prov = np.full(sls.shape, NONE, dtype=np.uint8)
    prov[sls] = SLS
    prov[bls] = BLS
    prov[sls & bls] = BOTH
    return SelectionMask(sls | bls, prov)


def select_normal_matched(scores_norm: np.ndarray, k_abn: int) -> SelectionMask:
    """Pick exactly ``k_abn`` snippets from normal videos.

    Each video contributes its top ``k_abn // Bn`` snippets; the remaining
    ``k_abn % Bn`` go to the highest scores left anywhere in the batch.
    """
    scores = _check_grid(scores_norm)
    B, T = scores.shape
    k_abn = int(k_abn)
    if k_abn < 0:
        raise ValueError("k_abn must be non-negative")
    if k_abn > B * T:
        raise ValueError("insufficient normal snippets")
    quota, rem = divmod(k_abn, B)
    chosen = _top_k_rows(scores, quota)
    if rem:
        left = np.where(chosen, -np.inf, scores).ravel()
        # -inf placeholders sort last; stable order keeps the tie rule
        idx = np.argsort(-left, kind="stable")
        idx = idx[~chosen.ravel()[idx]][:rem]
        flat = chosen.ravel()
        flat[idx] = True
        chosen = flat.reshape(B, T)
    return SelectionMask.from_bool(chosen, SLS)
