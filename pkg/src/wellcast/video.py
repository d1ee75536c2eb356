"""Frame/video containers, colour-space conversion and on-disk formats.

Pixel data is held as float64 numpy arrays in [0, 1]. A frame is ``(H, W, 3)``
and a video stacks frames along a leading time axis, ``(T, H, W, 3)``. Both are
immutable: the arrays are marked read-only on construction.

On disk a video is a directory of ``frame_0000.png, frame_0001.png, ...``
(8-bit RGB, no alpha) and a dataset is a JSON manifest pointing at such
directories by relative path.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .errors import MissingFrame, OutOfRange, ShapeMismatch, WrongColorSpace

FRAME_PATTERN = re.compile(r"^frame_(\d{4})\.png$")
MANIFEST_SCHEMA_VERSION = 1


class ColorSpace(str, Enum):
    RGB = "RGB"
    HSV = "HSV"


class Split(str, Enum):
    TRAIN = "train"
    VALID = "valid"
    TEST = "test"
    RAW = "raw"


def _checked(data, ndim: int) -> np.ndarray:
    arr = np.array(data, dtype=np.float64, copy=True)
    if arr.ndim != ndim or arr.shape[-1] != 3:
        raise ShapeMismatch(f"expected {ndim}-d array with 3 channels, got shape {arr.shape}")
    if arr.size == 0:
        raise ShapeMismatch("empty pixel array")
    if not np.all(np.isfinite(arr)):
        raise OutOfRange("pixel data contains NaN or Inf")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise OutOfRange(f"pixel data outside [0, 1]: [{arr.min()}, {arr.max()}]")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Frame:
    data: np.ndarray
    space: ColorSpace = ColorSpace.RGB

    def __post_init__(self):
        object.__setattr__(self, "data", _checked(self.data, 3))
        object.__setattr__(self, "space", ColorSpace(self.space))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 3


@dataclass(frozen=True, eq=False)
class Video:
    data: np.ndarray
    space: ColorSpace = ColorSpace.RGB
    frame_interval_minutes: float = 30.0

    def __post_init__(self):
        object.__setattr__(self, "data", _checked(self.data, 4))
        object.__setattr__(self, "space", ColorSpace(self.space))

    @classmethod
    def from_frames(cls, frames: Sequence[Frame], frame_interval_minutes: float = 30.0) -> "Video":
        if len(frames) == 0:
            raise ShapeMismatch("a video needs at least one frame")
        spaces = {f.space for f in frames}
        shapes = {f.data.shape for f in frames}
        if len(spaces) != 1:
            raise WrongColorSpace("frames mix colour spaces")
        if len(shapes) != 1:
            raise ShapeMismatch(f"frames have differing shapes: {sorted(shapes)}")
        return cls(np.stack([f.data for f in frames]), frames[0].space, frame_interval_minutes)

    def __len__(self) -> int:
        return self.data.shape[0]

    def __getitem__(self, index: int) -> Frame:
        return Frame(self.data[index], self.space)

    @property
    def frames(self) -> list[Frame]:
        return [self[i] for i in range(len(self))]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def with_data(self, data: np.ndarray, space: ColorSpace | None = None) -> "Video":
        return Video(data, self.space if space is None else space, self.frame_interval_minutes)


# -- colour space -----------------------------------------------------------------


def rgb_to_hsv_array(rgb: np.ndarray) -> np.ndarray:
    """Hexcone RGB -> HSV on the trailing axis; hue is angle/360, 0 when grey."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    vmax = rgb.max(axis=-1)
    vmin = rgb.min(axis=-1)
    delta = vmax - vmin

    sat = np.zeros_like(vmax)
    np.divide(delta, vmax, out=sat, where=vmax > 0)

    safe = np.where(delta > 0, delta, 1.0)
    hue = np.zeros_like(vmax)
    red_max = (delta > 0) & (vmax == r)
    green_max = (delta > 0) & (vmax == g) & ~red_max
    blue_max = (delta > 0) & ~red_max & ~green_max
    hue = np.where(red_max, ((g - b) / safe) % 6.0, hue)
    hue = np.where(green_max, (b - r) / safe + 2.0, hue)
    hue = np.where(blue_max, (r - g) / safe + 4.0, hue)
    hue = hue / 6.0
    hue = np.where(hue >= 1.0, hue - 1.0, hue)
    out = np.stack([hue, sat, vmax], axis=-1)
    return np.clip(out, 0.0, 1.0)


def hsv_to_rgb_array(hsv: np.ndarray) -> np.ndarray:
    hsv = np.asarray(hsv, dtype=np.float64)
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    h6 = (h * 6.0) % 6.0
    sector = np.floor(h6).astype(np.int64)
    f = h6 - sector
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    choices_r = [v, q, p, p, t, v]
    choices_g = [t, v, v, q, p, p]
    choices_b = [p, p, t, v, v, q]
    idx = [sector == k for k in range(6)]
    r = np.select(idx, choices_r)
    g = np.select(idx, choices_g)
    b = np.select(idx, choices_b)
    return np.clip(np.stack([r, g, b], axis=-1), 0.0, 1.0)


def rgb_to_hsv(frame: Frame) -> Frame:
    if frame.space is not ColorSpace.RGB:
        raise WrongColorSpace(f"rgb_to_hsv expects RGB input, got {frame.space.value}")
    return Frame(rgb_to_hsv_array(frame.data), ColorSpace.HSV)


def hsv_to_rgb(frame: Frame) -> Frame:
    if frame.space is not ColorSpace.HSV:
        raise WrongColorSpace(f"hsv_to_rgb expects HSV input, got {frame.space.value}")
    return Frame(hsv_to_rgb_array(frame.data), ColorSpace.RGB)


def video_to_hsv(video: Video) -> Video:
    if video.space is ColorSpace.HSV:
        return video
    return video.with_data(rgb_to_hsv_array(video.data), ColorSpace.HSV)


def video_to_rgb(video: Video) -> Video:
    if video.space is ColorSpace.RGB:
        return video
    return video.with_data(hsv_to_rgb_array(video.data), ColorSpace.RGB)


# -- PNG directories --------------------------------------------------------------


def quantize(values: np.ndarray) -> np.ndarray:
    """[0,1] -> uint8 with round-half-up."""
    return np.floor(np.asarray(values) * 255.0 + 0.5).astype(np.uint8)


def load_video(dir_path: str | os.PathLike, frame_interval_minutes: float = 30.0) -> Video:
    dir_path = Path(dir_path)
    if not dir_path.is_dir():
        raise MissingFrame(f"no such video directory: {dir_path}")
    indexed = {}
    for entry in dir_path.iterdir():
        m = FRAME_PATTERN.match(entry.name)
        if m:
            indexed[int(m.group(1))] = entry
    if not indexed:
        raise MissingFrame(f"no frame_NNNN.png files in {dir_path}")
    expected = list(range(len(indexed)))
    if sorted(indexed) != expected:
        missing = sorted(set(range(max(indexed) + 1)) - set(indexed))
        raise MissingFrame(f"non-consecutive frames in {dir_path}; missing indices {missing}")

    frames = []
    for i in expected:
        with Image.open(indexed[i]) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
        if frames and arr.shape != frames[0].shape:
            raise ShapeMismatch(f"{indexed[i].name} is {arr.shape}, expected {frames[0].shape}")
        frames.append(arr)
    data = np.stack(frames).astype(np.float64) / 255.0
    return Video(data, ColorSpace.RGB, frame_interval_minutes)


def save_video(video: Video, dir_path: str | os.PathLike) -> None:
    if video.space is not ColorSpace.RGB:
        raise WrongColorSpace("save_video writes 8-bit RGB; convert HSV videos first")
    if len(video) == 0:
        raise ShapeMismatch("refusing to write an empty video")
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    for stale in dir_path.glob("frame_*.png"):
        stale.unlink()
    for i, frame in enumerate(quantize(video.data)):
        Image.fromarray(frame, mode="RGB").save(dir_path / f"frame_{i:04d}.png")


# -- manifests --------------------------------------------------------------------


@dataclass
class WellRecord:
    well_id: str
    video: Video | None
    split: Split = Split.RAW
    lineage: tuple[str, ...] = ()
    path: Path | None = None

    def __post_init__(self):
        self.split = Split(self.split)
        self.lineage = tuple(self.lineage)
        if self.split is Split.TEST and self.lineage:
            raise ValueError(f"test well {self.well_id} must not carry augmentation lineage")

    def load(self) -> Video:
        if self.video is None:
            if self.path is None:
                raise MissingFrame(f"record {self.well_id} has neither pixels nor a path")
            self.video = load_video(self.path)
        return self.video


@dataclass
class DatasetManifest:
    records: list[WellRecord] = field(default_factory=list)
    seed: int = 0
    schema_version: int = MANIFEST_SCHEMA_VERSION

    def __post_init__(self):
        ids = [r.well_id for r in self.records]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate well ids in manifest: {dupes}")

    def by_split(self, split: Split | str) -> list[WellRecord]:
        split = Split(split)
        return [r for r in self.records if r.split is split]

    def split_counts(self) -> dict[str, int]:
        return {s.value: len(self.by_split(s)) for s in Split}

    def get(self, well_id: str) -> WellRecord:
        for r in self.records:
            if r.well_id == well_id:
                return r
        raise KeyError(well_id)

    def to_json(self, base_dir: Path) -> dict:
        rows = []
        for r in self.records:
            if r.path is None:
                raise ValueError(f"record {r.well_id} has not been written to disk")
            rows.append({
                "well_id": r.well_id,
                "path": Path(os.path.relpath(r.path, base_dir)).as_posix(),
                "split": r.split.value,
                "lineage": list(r.lineage),
            })
        return {"schema_version": self.schema_version, "seed": int(self.seed), "records": rows}


def write_manifest(manifest: DatasetManifest, out_dir: str | os.PathLike,
                   name: str = "manifest.json", video_subdir: str = "videos") -> Path:
    """Write every in-memory video under ``out_dir/video_subdir`` and the JSON index."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for r in manifest.records:
        if r.video is not None:
            target = out_dir / video_subdir / r.well_id
            save_video(video_to_rgb(r.video), target)
            r.path = target
    path = out_dir / name
    path.write_text(json.dumps(manifest.to_json(out_dir), indent=2) + "\n")
    return path


def read_manifest(path: str | os.PathLike, load: bool = True) -> DatasetManifest:
    path = Path(path)
    doc = json.loads(path.read_text())
    version = doc.get("schema_version")
    if version != MANIFEST_SCHEMA_VERSION:
        raise ValueError(f"unsupported manifest schema_version {version!r}")
    records = []
    for row in doc["records"]:
        video_dir = path.parent / row["path"]
        if not video_dir.is_dir():
            raise MissingFrame(f"manifest entry {row['well_id']} points at missing {video_dir}")
        rec = WellRecord(row["well_id"], None, row["split"], tuple(row["lineage"]), video_dir)
        if load:
            rec.load()
        records.append(rec)
    return DatasetManifest(records, int(doc["seed"]), version)


def stack_videos(videos: Iterable[Video]) -> np.ndarray:
    return np.stack([v.data for v in videos])
