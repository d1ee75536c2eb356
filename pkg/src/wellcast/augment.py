"""Spatial augmentation and the train/valid/test split.

Each non-test well is expanded into one record per requested transform
(identity, flips, quarter-turn rotations, blur, noise). Held-out test wells
pass through untouched. The augmented pool is shuffled with the manifest seed
and cut into train/valid, with any fractional remainder going to train.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch, UnknownWell
from .video import DatasetManifest, Split, Video, WellRecord

HORIZONTAL, VERTICAL = "horizontal", "vertical"


def apply_flip(video: Video, axis: str) -> Video:
    """Mirror every frame; ``horizontal`` swaps columns, ``vertical`` rows."""
    if axis == HORIZONTAL:
        return video.with_data(video.data[:, :, ::-1, :])
    if axis == VERTICAL:
        return video.with_data(video.data[:, ::-1, :, :])
    raise ValueError(f"flip axis must be {HORIZONTAL!r} or {VERTICAL!r}, got {axis!r}")


def apply_rotation(video: Video, degrees: int) -> Video:
    """Counter-clockwise rotation by a multiple of 90 degrees."""
    if degrees not in (90, 180, 270):
        raise ValueError(f"rotation must be 90, 180 or 270 degrees, got {degrees}")
    if video.height != video.width:
        raise ShapeMismatch(f"rotation needs square frames, got {video.height}x{video.width}")
    return video.with_data(np.rot90(video.data, k=degrees // 90, axes=(1, 2)))


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _blur_axis(data: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    r = len(kernel) // 2
    pad = [(0, 0)] * data.ndim
    pad[axis] = (r, r)
    # 'symmetric' mirrors about the border (edge pixel repeated), which keeps sums exact
    padded = np.pad(data, pad, mode="symmetric")
    n = data.shape[axis]
    out = np.zeros_like(data)
    for i, w in enumerate(kernel):
        out += w * np.take(padded, np.arange(i, i + n), axis=axis)
    return out


def apply_blur(video: Video, sigma: float) -> Video:
    if sigma < 0:
        raise ValueError("blur sigma must be >= 0")
    if sigma == 0:
        return video
    k = gaussian_kernel(sigma)
    if len(k) // 2 >= min(video.height, video.width):
        raise ShapeMismatch(f"blur radius {len(k) // 2} too large for {video.height}x{video.width} frames")
    out = _blur_axis(_blur_axis(video.data, k, 1), k, 2)
    return video.with_data(np.clip(out, 0.0, 1.0))


def apply_noise(video: Video, sigma: float, rng: np.random.Generator) -> Video:
    """Add i.i.d. Gaussian noise and clamp back into [0, 1]."""
    if sigma < 0:
        raise ValueError("noise sigma must be >= 0")
    if sigma == 0:
        return video
    noisy = video.data + rng.normal(0.0, sigma, size=video.data.shape)
    return video.with_data(np.clip(noisy, 0.0, 1.0))


@dataclass(frozen=True)
class AugmentConfig:
    flips: tuple[str, ...] = (HORIZONTAL, VERTICAL)
    rotations: tuple[int, ...] = (90, 180, 270)
    blur_sigma: float = 0.5
    noise_sigma: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if any(f not in (HORIZONTAL, VERTICAL) for f in self.flips):
            raise ValueError(f"unknown flip in {self.flips}")
        if any(r not in (90, 180, 270) for r in self.rotations):
            raise ValueError(f"unknown rotation in {self.rotations}")
        if len(set(self.flips)) != len(self.flips) or len(set(self.rotations)) != len(self.rotations):
            raise ValueError("duplicate transforms requested")
        if self.blur_sigma < 0 or self.noise_sigma < 0:
            raise ValueError("sigmas must be >= 0")

    def transforms(self) -> list[str]:
        ops = ["identity"]
        ops += [f"flip:{f}" for f in self.flips]
        ops += [f"rot:{r}" for r in self.rotations]
        if self.blur_sigma > 0:
            ops.append(f"blur:{self.blur_sigma:g}")
        if self.noise_sigma > 0:
            ops.append(f"noise:{self.noise_sigma:g}")
        return ops

    @property
    def multiplicity(self) -> int:
        return len(self.transforms())


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    test_well_ids: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not (0.0 < self.train_fraction < 1.0):
            raise ValueError("train_fraction must lie in (0, 1)")


def apply_transform(video: Video, op: str, cfg: AugmentConfig, rng_key: tuple[int, ...]) -> Video:
    kind, _, arg = op.partition(":")
    if kind == "identity":
        return video
    if kind == "flip":
        return apply_flip(video, arg)
    if kind == "rot":
        return apply_rotation(video, int(arg))
    if kind == "blur":
        return apply_blur(video, cfg.blur_sigma)
    if kind == "noise":
        return apply_noise(video, cfg.noise_sigma, np.random.default_rng(rng_key))
    raise ValueError(f"unknown transform {op!r}")


def source_of(record: WellRecord) -> str:
    """Original well id an augmented record descends from."""
    for tag in record.lineage:
        if tag.startswith("source="):
            return tag[len("source="):]
    return record.well_id


def _expand_one(args) -> list[WellRecord]:
    index, record, cfg = args
    out = []
    for k, op in enumerate(cfg.transforms()):
        video = apply_transform(record.video, op, cfg, (cfg.seed, index, k))
        out.append(WellRecord(f"{record.well_id}-a{k}", video, Split.RAW,
                              (f"source={record.well_id}", op)))
    return out


def train_count(n: int, fraction: float) -> int:
    # the 1e-9 guards against 0.8 * 320 = 256.00000000000003
    return min(n, math.ceil(fraction * n - 1e-9))


def expand_dataset(records: list[WellRecord], cfg: AugmentConfig = AugmentConfig(),
                   split: SplitSpec = SplitSpec(), workers: int = 1) -> DatasetManifest:
    ids = [r.well_id for r in records]
    unknown = sorted(set(split.test_well_ids) - set(ids))
    if unknown:
        raise UnknownWell(f"test wells not in the dataset: {unknown}")
    shapes = {r.load().data.shape for r in records}
    if len(shapes) > 1:
        raise ShapeMismatch(f"records must share one shape before augmentation, got {sorted(shapes)}")

    test_ids = set(split.test_well_ids)
    test = [WellRecord(r.well_id, r.video, Split.TEST, ()) for r in records if r.well_id in test_ids]
    jobs = [(i, r, cfg) for i, r in enumerate(records) if r.well_id not in test_ids]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            expanded = list(pool.map(_expand_one, jobs))
    else:
        expanded = [_expand_one(j) for j in jobs]
    pool_records = [rec for group in expanded for rec in group]

    order = np.random.default_rng(cfg.seed).permutation(len(pool_records))
    n_train = train_count(len(pool_records), split.train_fraction)
    for rank, idx in enumerate(order):
        pool_records[idx].split = Split.TRAIN if rank < n_train else Split.VALID
    shuffled = [pool_records[i] for i in order]
    return DatasetManifest(test + shuffled, seed=cfg.seed)
