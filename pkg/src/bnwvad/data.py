"""Video feature datasets: synthetic generation, on-disk format, batching.

On disk a dataset is a ``manifest.json`` next to one payload file per video.
Payloads are header-free little-endian float32 arrays laid out row-major as
``[crops, T_raw, C]`` (``.bin``), or CSV with one snippet per row and the
crops stacked one after another (``.csv``).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

MANIFEST_VERSION = 1
NORMAL, ABNORMAL = 0, 1
_LABEL_NAMES = {NORMAL: "normal", ABNORMAL: "abnormal"}
_LABEL_CODES = {v: k for k, v in _LABEL_NAMES.items()}


@dataclass
class VideoRecord:
    id: str
    label: int
    T_raw: int
    C: int
    crops: int = 1
    class_name: str | None = None
    snippet_labels: np.ndarray | None = None
    payload: str | None = None

    def __post_init__(self):
        if self.label not in (NORMAL, ABNORMAL):
            raise ValueError(f"{self.id}: label must be normal (0) or abnormal (1)")
        if self.crops < 1 or self.T_raw < 1 or self.C < 1:
            raise ValueError(f"{self.id}: crops, T_raw and C must be positive")
        if self.snippet_labels is not None:
            self.snippet_labels = np.asarray(self.snippet_labels, dtype=bool)
            if self.snippet_labels.shape != (self.T_raw,):
                raise ValueError(f"{self.id}: snippet_labels must have length T_raw={self.T_raw}")
            if bool(self.snippet_labels.any()) != (self.label == ABNORMAL):
                raise ValueError(f"{self.id}: video label disagrees with snippet labels")

    @property
    def is_abnormal(self) -> bool:
        return self.label == ABNORMAL

    def to_json(self) -> dict:
        d = {
            "id": self.id,
            "label": _LABEL_NAMES[self.label],
            "class_name": self.class_name,
            "crops": self.crops,
            "T_raw": self.T_raw,
            "C": self.C,
            "payload": self.payload,
        }
        if self.snippet_labels is not None:
            d["snippet_labels"] = self.snippet_labels.astype(int).tolist()
        return d

    @classmethod
    def from_json(cls, d: dict) -> "VideoRecord":
        label = d["label"]
        label = _LABEL_CODES[label] if isinstance(label, str) else int(label)
        sl = d.get("snippet_labels")
        return cls(
            id=str(d["id"]),
            label=label,
            T_raw=int(d["T_raw"]),
            C=int(d["C"]),
            crops=int(d.get("crops", 1)),
            class_name=d.get("class_name"),
            snippet_labels=None if sl is None else np.asarray(sl, dtype=bool),
            payload=d.get("payload"),
        )


@dataclass
class Dataset:
    videos: list[VideoRecord]
    features: dict[str, np.ndarray]  # id -> float32 [crops, T_raw, C]

    def __post_init__(self):
        ids = [v.id for v in self.videos]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate video ids")
        for v in self.videos:
            f = self.features.get(v.id)
            if f is None:
                raise ValueError(f"missing features for video {v.id}")
            if f.shape != (v.crops, v.T_raw, v.C):
                raise ValueError(f"{v.id}: features {f.shape} disagree with manifest {(v.crops, v.T_raw, v.C)}")

    def __len__(self) -> int:
        return len(self.videos)

    @property
    def normal(self) -> list[VideoRecord]:
        return [v for v in self.videos if not v.is_abnormal]

    @property
    def abnormal(self) -> list[VideoRecord]:
        return [v for v in self.videos if v.is_abnormal]

    @property
    def channels(self) -> int:
        return self.videos[0].C

    def has_snippet_labels(self) -> bool:
        return all(v.snippet_labels is not None for v in self.videos)


# --------------------------------------------------------------------------
# synthetic generation


@dataclass
class ClassSpec:
    """One abnormal event class.

    ``shift_sigma`` is the per-channel shift in units of that channel's
    standard deviation; ``ratio_range`` overrides the global Beta draw with a
    uniform draw on the given interval.
    """

    name: str
    weight: float = 1.0
    shift_sigma: float = 2.0
    shift_channels: int | None = None
    ratio_range: tuple[float, float] | None = None
    shift: list[float] | None = None


@dataclass
class SynthConfig:
    n_normal: int = 64
    n_abnormal: int = 64
    T: int = 200
    C: int = 16
    normal_mean: list[float] | None = None
    normal_var: list[float] | None = None
    # log-spread of the default per-channel variances: exp(a * linspace(-1, 1, C))
    anisotropy: float = 0.0
    # per-video random offset of the normal mean, in channel standard deviations
    video_offset_std: float = 0.0
    anomaly_shift: list[float] | None = None
    shift_sigma: float = 2.0
    shift_channels: int | None = None
    # point the shift into the lowest-variance channels instead of random ones
    shift_low_variance: bool = False
    # rescale abnormal snippets back to the norm they had before the shift
    preserve_norm: bool = False
    ratio_a: float = 2.0
    ratio_b: float = 8.0
    segments: int = 1
    classes: list[ClassSpec] | None = None
    crops: int = 1
    crop_jitter: float = 0.05
    seed: int = 0
    # the anomaly definition (shift channels and signs) has its own seed so
    # that train and test draws of one benchmark share it
    shift_seed: int = 0
    # distractor events: a fraction of snippets in every video, normal ones
    # included, carry a shared nuisance shift and stay labelled normal
    nuisance_rate: float = 0.0
    nuisance_sigma: float = 3.0

    def __post_init__(self):
        if self.classes:
            self.classes = [c if isinstance(c, ClassSpec) else ClassSpec(**c) for c in self.classes]
            for c in self.classes:
                if c.ratio_range is not None:
                    c.ratio_range = tuple(c.ratio_range)

    def validate(self) -> None:
        if self.ratio_a <= 0 or self.ratio_b <= 0 or not all(map(math.isfinite, (self.ratio_a, self.ratio_b))):
            raise ValueError(f"invalid Beta parameters ({self.ratio_a}, {self.ratio_b})")
        if self.n_normal < 0 or self.n_abnormal < 0 or self.T < 1 or self.C < 1:
            raise ValueError("counts and dimensions must be positive")
        if not 0.0 <= self.nuisance_rate < 1.0:
            raise ValueError("nuisance_rate must be in [0, 1)")
        if self.segments < 1 or self.crops < 1:
            raise ValueError("segments and crops must be >= 1")
        for c in self.classes or []:
            if c.ratio_range is not None and not 0 < c.ratio_range[0] <= c.ratio_range[1] <= 1:
                raise ValueError(f"class {c.name}: ratio_range must satisfy 0 < lo <= hi <= 1")
            if c.shift is None and c.shift_sigma == 0:
                raise ValueError(f"class {c.name}: abnormal classes need a nonzero shift")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def _shift_vector(rng, sigma, n_channels, magnitude, explicit, low_variance):
    C = sigma.shape[0]
    if explicit is not None:
        v = np.asarray(explicit, dtype=np.float64)
        if v.shape != (C,):
            raise ValueError(f"anomaly shift must have {C} entries")
        return v
    k = C if n_channels is None else min(C, int(n_channels))
    channels = np.argsort(sigma, kind="stable")[:k] if low_variance else rng.permutation(C)[:k]
    signs = rng.choice([-1.0, 1.0], size=k)
    v = np.zeros(C)
    v[channels] = magnitude * sigma[channels] * signs
    return v


def _abnormal_segments(rng, T, n_abn, segments):
    mask = np.zeros(T, dtype=bool)
    segments = max(1, min(segments, n_abn))
    if segments == 1:
        start = rng.integers(0, T - n_abn + 1)
        mask[start : start + n_abn] = True
        return mask
    # split n_abn into pieces and scatter them over the free gaps
    cuts = np.sort(rng.choice(np.arange(1, n_abn), size=segments - 1, replace=False))
    lengths = np.diff(np.concatenate([[0], cuts, [n_abn]]))
    free = T - n_abn
    gaps = np.sort(rng.integers(0, free + 1, size=segments))
    pos = 0
    prev_gap = 0
    for length, gap in zip(lengths, gaps):
        pos += gap - prev_gap
        mask[pos : pos + length] = True
        pos += length
        prev_gap = gap
    return mask


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    """Gaussian snippet features with shifted abnormal segments.

    Normal snippets are drawn around ``normal_mean`` (plus an optional
    per-video offset). An abnormal video draws an abnormality ratio, marks
    that fraction of its snippets (at least one) and adds the class shift
    to them.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    C, T = cfg.C, cfg.T
    mean = np.zeros(C) if cfg.normal_mean is None else np.asarray(cfg.normal_mean, dtype=np.float64)
    if cfg.normal_var is None:
        var = np.exp(cfg.anisotropy * np.linspace(-1.0, 1.0, C)) if C > 1 else np.ones(1)
    else:
        var = np.asarray(cfg.normal_var, dtype=np.float64)
    if mean.shape != (C,) or var.shape != (C,) or np.any(var <= 0):
        raise ValueError("normal_mean/normal_var must be length-C with positive variances")
    sigma = np.sqrt(var)

    classes = cfg.classes or [ClassSpec("abnormal", 1.0, cfg.shift_sigma, cfg.shift_channels, None, cfg.anomaly_shift)]
    shift_rng = np.random.default_rng(cfg.shift_seed)
    shifts = [
        _shift_vector(shift_rng, sigma, c.shift_channels, c.shift_sigma, c.shift, cfg.shift_low_variance) for c in classes
    ]
    nuisance = cfg.nuisance_sigma * sigma * shift_rng.choice([-1.0, 1.0], size=C)
    weights = np.array([c.weight for c in classes], dtype=np.float64)
    weights /= weights.sum()

    videos, feats = [], {}

    def draw_base():
        offset = cfg.video_offset_std * sigma * rng.standard_normal(C)
        return mean + offset + sigma * rng.standard_normal((T, C))

    def add_nuisance(x, labels):
        if cfg.nuisance_rate > 0:
            hit = (rng.random(T) < cfg.nuisance_rate) & ~labels
            x[hit] += nuisance
        return x

    def add_crops(x):
        if cfg.crops == 1:
            return x[None].astype(np.float32)
        jitter = cfg.crop_jitter * sigma * rng.standard_normal((cfg.crops, T, C))
        return (x[None] + jitter).astype(np.float32)

    for i in range(cfg.n_normal):
        vid = f"normal_{i:04d}"
        labels = np.zeros(T, dtype=bool)
        feats[vid] = add_crops(add_nuisance(draw_base(), labels))
        videos.append(VideoRecord(vid, NORMAL, T, C, cfg.crops, None, labels))

    for i in range(cfg.n_abnormal):
        ci = int(rng.choice(len(classes), p=weights))
        spec = classes[ci]
        if spec.ratio_range is not None:
            ratio = rng.uniform(*spec.ratio_range)
        else:
            ratio = rng.beta(cfg.ratio_a, cfg.ratio_b)
        n_abn = int(min(T, max(1, round(ratio * T))))
        labels = _abnormal_segments(rng, T, n_abn, cfg.segments)
        x = draw_base()
        shifted = x[labels] + shifts[ci]
        if cfg.preserve_norm:
            before = np.linalg.norm(x[labels], axis=1, keepdims=True)
            shifted *= before / np.linalg.norm(shifted, axis=1, keepdims=True)
        x[labels] = shifted
        vid = f"abnormal_{i:04d}"
        feats[vid] = add_crops(add_nuisance(x, labels))
        name = spec.name if cfg.classes else None
        videos.append(VideoRecord(vid, ABNORMAL, T, C, cfg.crops, name, labels))

    return Dataset(videos, feats)


# --------------------------------------------------------------------------
# preprocessing


def interpolate(X: np.ndarray, T: int) -> np.ndarray:
    """Linear resampling of a ``[T0, C]`` sequence to ``T`` snippets."""
    X = np.asarray(X)
    if X.ndim != 2:
        raise ValueError("expected a [T0, C] array")
    T0 = X.shape[0]
    if T0 == 0:
        raise ValueError("cannot interpolate an empty sequence")
    if T < 1:
        raise ValueError("target length must be >= 1")
    if T0 == T:
        return X.copy()
    if T0 == 1:
        return np.repeat(X, T, axis=0)
    pos = np.linspace(0.0, T0 - 1, T)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, T0 - 1)
    frac = (pos - lo)[:, None]
    Xd = X.astype(np.float64)
    out = Xd[lo] * (1.0 - frac) + Xd[hi] * frac
    return out.astype(X.dtype, copy=False)


def crop_average(scores: np.ndarray) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] < 1:
        raise ValueError("expected a [crops, T] array with at least one crop")
    return scores.mean(axis=0)


# --------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    X_nor: np.ndarray  # [b_nor, T, C]
    X_abn: np.ndarray  # [b_abn, T, C]
    ids_nor: list[str] = field(default_factory=list)
    ids_abn: list[str] = field(default_factory=list)


def _video_tensor(ds: Dataset, v: VideoRecord, T: int | None, crop: int) -> np.ndarray:
    x = ds.features[v.id][crop]
    if T is not None and x.shape[0] != T:
        x = interpolate(x, T)
    return x


def _check_counts(ds: Dataset, b_nor: int, b_abn: int) -> None:
    if b_nor < 1 or b_abn < 1:
        raise ValueError("batch sizes must be >= 1")
    if len(ds.normal) < b_nor or len(ds.abnormal) < b_abn:
        raise ValueError(
            f"dataset has {len(ds.normal)} normal / {len(ds.abnormal)} abnormal videos, "
            f"batch needs {b_nor} / {b_abn}"
        )


def sample_batch(ds: Dataset, b_nor: int, b_abn: int, rng: np.random.Generator, T: int | None = None) -> Batch:
    """Independent batch: each half drawn uniformly without replacement."""
    _check_counts(ds, b_nor, b_abn)
    nor, abn = ds.normal, ds.abnormal
    pick_n = [nor[i] for i in rng.choice(len(nor), b_nor, replace=False)]
    pick_a = [abn[i] for i in rng.choice(len(abn), b_abn, replace=False)]
    return _assemble(ds, pick_n, pick_a, rng, T)


def _assemble(ds, pick_n, pick_a, rng, T):
    Xn = np.stack([_video_tensor(ds, v, T, int(rng.integers(v.crops))) for v in pick_n])
    Xa = np.stack([_video_tensor(ds, v, T, int(rng.integers(v.crops))) for v in pick_a])
    return Batch(Xn, Xa, [v.id for v in pick_n], [v.id for v in pick_a])


class _EpochQueue:
    """Endless stream of reshuffled permutations, never repeating an item inside one draw."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n = n
        self.rng = rng
        self.queue: list[int] = []

    def take(self, k: int) -> list[int]:
        out = self.queue[:k]
        self.queue = self.queue[k:]
        while len(out) < k:
            perm = [int(i) for i in self.rng.permutation(self.n)]
            taken = set(out)
            fresh = [i for i in perm if i not in taken]
            deferred = [i for i in perm if i in taken]
            need = k - len(out)
            out += fresh[:need]
            # deferred items keep their slot in this epoch, just later
            self.queue = fresh[need:] + deferred
        return out


class BatchSampler:
    """Seeded balanced batches; every video is seen once per pass over its half."""

    def __init__(self, ds: Dataset, b_nor: int, b_abn: int, seed: int = 0, T: int | None = None):
        _check_counts(ds, b_nor, b_abn)
        self.ds = ds
        self.b_nor, self.b_abn = b_nor, b_abn
        self.T = T
        self.rng = np.random.default_rng(seed)
        self._nor = ds.normal
        self._abn = ds.abnormal
        self._qn = _EpochQueue(len(self._nor), self.rng)
        self._qa = _EpochQueue(len(self._abn), self.rng)

    def __iter__(self):
        return self

    def __next__(self) -> Batch:
        pick_n = [self._nor[i] for i in self._qn.take(self.b_nor)]
        pick_a = [self._abn[i] for i in self._qa.take(self.b_abn)]
        return _assemble(self.ds, pick_n, pick_a, self.rng, self.T)


# --------------------------------------------------------------------------
# on-disk format


def _write_payload(path: Path, x: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(x, dtype="<f4").tofile(path)


def read_payload(path: Path, crops: int, T_raw: int, C: int) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".csv":
        rows = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
        arr = rows.astype(np.float32)
    else:
        arr = np.fromfile(path, dtype="<f4")
    expected = crops * T_raw * C
    if arr.size != expected:
        raise ValueError(f"{path}: expected {expected} floats for [{crops}, {T_raw}, {C}], found {arr.size}")
    return arr.reshape(crops, T_raw, C).astype(np.float32, copy=False)


def save_dataset(ds: Dataset, root: str | Path, extra: dict | None = None) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    records = []
    for v in ds.videos:
        rel = v.payload if v.payload and not v.payload.endswith(".csv") else f"features/{v.id}.bin"
        _write_payload(root / rel, ds.features[v.id])
        rec = v.to_json()
        rec["payload"] = rel
        records.append(rec)
    manifest = {"version": MANIFEST_VERSION, "videos": records}
    if extra:
        manifest.update(extra)
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path


def load_dataset(path: str | Path) -> Dataset:
    """Load a dataset from a manifest file or the directory holding ``manifest.json``."""
    path = Path(path)
    manifest_path = path / "manifest.json" if path.is_dir() else path
    manifest = json.loads(manifest_path.read_text())
    version = manifest.get("version", MANIFEST_VERSION)
    if version != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {version}")
    root = manifest_path.parent
    videos, feats = [], {}
    for rec in manifest["videos"]:
        v = VideoRecord.from_json(rec)
        if not v.payload:
            raise ValueError(f"{v.id}: manifest entry has no payload path")
        feats[v.id] = read_payload(root / v.payload, v.crops, v.T_raw, v.C)
        videos.append(v)
    return Dataset(videos, feats)
