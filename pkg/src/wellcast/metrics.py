"""Groundtruth-vs-prediction evaluation: image metrics, population curves, colonies.

Frame MSE is reported on the 8-bit scale (differences in 0..255 units) so the
numbers are commensurate with published video-prediction tables; the [0,1]
value is kept alongside. SSIM is the perceptual-similarity slot: a metric
backend is any callable ``(Frame, Frame) -> float`` registered in
``SIMILARITY_BACKENDS``.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import ndimage

from .errors import ShapeMismatch
from .video import ColorSpace, Frame, Video, hsv_to_rgb_array, video_to_rgb

SSIM_WINDOW = 8
SSIM_K1, SSIM_K2 = 0.01, 0.03
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def _rgb_pair(a: Frame, b: Frame) -> tuple[np.ndarray, np.ndarray]:
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"frame shapes differ: {a.data.shape} vs {b.data.shape}")
    if a.space is not b.space:
        raise ShapeMismatch(f"frames in different colour spaces: {a.space.value} vs {b.space.value}")
    if a.space is ColorSpace.HSV:
        return hsv_to_rgb_array(a.data), hsv_to_rgb_array(b.data)
    return a.data, b.data


def frame_mse_unit(a: Frame, b: Frame) -> float:
    x, y = _rgb_pair(a, b)
    return float(np.mean((x - y) ** 2))


def frame_mse(a: Frame, b: Frame) -> float:
    """Mean squared RGB difference in 8-bit units (0..65025)."""
    x, y = _rgb_pair(a, b)
    d = (x - y) * 255.0
    return float(np.mean(d * d))


def _window_means(img: np.ndarray, win: int) -> np.ndarray:
    # summed-area table gives every win x win window mean
    s = np.pad(img, ((1, 0), (1, 0))).cumsum(0).cumsum(1)
    tot = s[win:, win:] - s[:-win, win:] - s[win:, :-win] + s[:-win, :-win]
    return tot / (win * win)


def frame_ssim(a: Frame, b: Frame, window: int = SSIM_WINDOW, data_range: float = 1.0) -> float:
    """Mean SSIM over all ``window`` x ``window`` windows of the channel-mean image."""
    x, y = _rgb_pair(a, b)
    x = x.mean(axis=2)
    y = y.mean(axis=2)
    win = min(window, x.shape[0], x.shape[1])
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mx, my = _window_means(x, win), _window_means(y, win)
    vx = _window_means(x * x, win) - mx * mx
    vy = _window_means(y * y, win) - my * my
    cxy = _window_means(x * y, win) - mx * my
    num = (2 * mx * my + c1) * (2 * cxy + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


SIMILARITY_BACKENDS: dict[str, Callable[[Frame, Frame], float]] = {"ssim": frame_ssim}


@dataclass
class PopulationCurve:
    green: np.ndarray
    red: np.ndarray

    def __len__(self):
        return len(self.green)

    def pairs(self) -> list[list[float]]:
        return [[float(g), float(r)] for g, r in zip(self.green, self.red)]


def population_curve(video: Video) -> PopulationCurve:
    """Per-frame sums of the green and red channels."""
    rgb = video_to_rgb(video).data
    return PopulationCurve(rgb[..., 1].sum(axis=(1, 2)), rgb[..., 0].sum(axis=(1, 2)))


@dataclass(frozen=True)
class Colony:
    species: str
    pixel_count: int
    centroid: tuple[float, float]


def label_colonies(frame: Frame, value_threshold: float = 0.2, min_colony_pixels: int = 4) -> list[Colony]:
    """8-connected same-species components, largest first."""
    rgb = hsv_to_rgb_array(frame.data) if frame.space is ColorSpace.HSV else frame.data
    red, green = rgb[..., 0], rgb[..., 1]
    fg = np.maximum(red, green) >= value_threshold
    red_mask = fg & (red >= green)
    masks = {"red": red_mask, "green": fg & ~red_mask}
    colonies = []
    for species, mask in masks.items():
        labels, n = ndimage.label(mask, structure=EIGHT_CONNECTED)
        for k in range(1, n + 1):
            rows, cols = np.nonzero(labels == k)
            if rows.size >= min_colony_pixels:
                colonies.append(Colony(species, int(rows.size), (float(rows.mean()), float(cols.mean()))))
    colonies.sort(key=lambda c: (-c.pixel_count, c.centroid[0], c.centroid[1], c.species))
    return colonies


@dataclass(frozen=True)
class EvalConfig:
    value_threshold: float = 0.2
    min_colony_pixels: int = 4
    first_frame_number: int = 11
    similarity: str = "ssim"


@dataclass
class FrameMetrics:
    frame_index: int
    mse: float
    mse_unit: float
    ssim: float


@dataclass
class EvalReport:
    well_id: str
    config: EvalConfig
    frames: list[FrameMetrics]
    population_gt: PopulationCurve
    population_pred: PopulationCurve
    colonies_gt: list[list[Colony]]
    colonies_pred: list[list[Colony]]
    averages: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        def table(rows):
            return [[{"species": c.species, "pixel_count": c.pixel_count, "centroid": list(c.centroid)}
                     for c in frame] for frame in rows]

        return {
            "well_id": self.well_id,
            "config": asdict(self.config),
            "frames": [{"index": f.frame_index, "mse": f.mse, "mse_unit": f.mse_unit, "ssim": f.ssim}
                       for f in self.frames],
            "population": {"gt": self.population_gt.pairs(), "pred": self.population_pred.pairs()},
            "colonies": {"gt": table(self.colonies_gt), "pred": table(self.colonies_pred)},
            "averages": self.averages,
        }

    def csv_rows(self) -> list[tuple]:
        rows = []
        for k, f in enumerate(self.frames):
            i = f.frame_index
            rows += [(self.well_id, i, "mse", f.mse), (self.well_id, i, "mse_unit", f.mse_unit),
                     (self.well_id, i, self.config.similarity, f.ssim)]
            for who, curve in (("gt", self.population_gt), ("pred", self.population_pred)):
                rows += [(self.well_id, i, f"green_total_{who}", float(curve.green[k])),
                         (self.well_id, i, f"red_total_{who}", float(curve.red[k]))]
            for who, table in (("gt", self.colonies_gt), ("pred", self.colonies_pred)):
                for sp in ("red", "green"):
                    cols = [c for c in table[k] if c.species == sp]
                    rows += [(self.well_id, i, f"{sp}_colonies_{who}", len(cols)),
                             (self.well_id, i, f"{sp}_colony_pixels_{who}", sum(c.pixel_count for c in cols))]
        return rows


def evaluate_well(groundtruth: Video, predicted: Video, cfg: EvalConfig = EvalConfig(),
                  well_id: str = "well") -> EvalReport:
    if len(groundtruth) != len(predicted):
        raise ShapeMismatch(f"{len(groundtruth)} groundtruth frames vs {len(predicted)} predicted")
    gt, pred = video_to_rgb(groundtruth), video_to_rgb(predicted)
    if gt.data.shape != pred.data.shape:
        raise ShapeMismatch(f"video shapes differ: {gt.data.shape} vs {pred.data.shape}")
    similarity = SIMILARITY_BACKENDS[cfg.similarity]
    frames = []
    for k in range(len(gt)):
        a, b = gt[k], pred[k]
        frames.append(FrameMetrics(cfg.first_frame_number + k, frame_mse(a, b), frame_mse_unit(a, b),
                                   similarity(a, b)))
    report = EvalReport(
        well_id, cfg, frames,
        population_curve(gt), population_curve(pred),
        [label_colonies(f, cfg.value_threshold, cfg.min_colony_pixels) for f in gt.frames],
        [label_colonies(f, cfg.value_threshold, cfg.min_colony_pixels) for f in pred.frames],
    )
    report.averages = {
        "mse": float(np.mean([f.mse for f in frames])),
        "mse_unit": float(np.mean([f.mse_unit for f in frames])),
        cfg.similarity: float(np.mean([f.ssim for f in frames])),
    }
    return report


def write_report(report: EvalReport, json_path: str | os.PathLike, csv_path: str | os.PathLike | None = None) -> None:
    json_path = Path(json_path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(json.dumps(report.to_json(), indent=2) + "\n")
    if csv_path is None:
        csv_path = json_path.with_suffix(".csv")
    write_csv([report], csv_path)


def write_csv(reports: list[EvalReport], path: str | os.PathLike) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["well_id", "frame", "metric", "value"])
        for rep in reports:
            for row in rep.csv_rows():
                w.writerow([row[0], row[1], row[2], repr(row[3]) if isinstance(row[3], float) else row[3]])
