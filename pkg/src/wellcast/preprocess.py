"""Well centring and spatio-temporal resampling of raw microwell videos.

Raw wells (e.g. 14 frames of 24x24) become training sequences (20 frames of
32x32, HSV): keep the dynamic frames, centre the well on its bright region,
linearly interpolate in time, bilinearly resize each frame, convert to HSV.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import CropTooLarge, DegenerateHistogram, EmptyWell, ShapeMismatch, TooFewFrames, WrongColorSpace
from .video import ColorSpace, Frame, Video, WellRecord, rgb_to_hsv_array

HISTOGRAM_BINS = 256


@dataclass(frozen=True)
class BoundingBox:
    row_min: int
    row_max: int
    col_min: int
    col_max: int

    def __post_init__(self):
        if self.row_min > self.row_max or self.col_min > self.col_max or self.row_min < 0 or self.col_min < 0:
            raise ValueError(f"invalid bounding box {self}")

    @property
    def center(self) -> tuple[float, float]:
        return (self.row_min + self.row_max) / 2.0, (self.col_min + self.col_max) / 2.0


@dataclass(frozen=True)
class PreprocessConfig:
    keep_frames: int = 7
    target_frames: int = 20
    crop_size: int = 24
    target_size: int = 32

    def __post_init__(self):
        if self.keep_frames < 2:
            raise ValueError("keep_frames must be >= 2")
        if self.target_frames < self.keep_frames:
            raise ValueError("target_frames must be >= keep_frames")
        if self.crop_size <= 0 or self.target_size <= 0:
            raise ValueError("sizes must be positive")


def triangle_threshold(histogram) -> int:
    """Triangle method: the bin farthest below the peak-to-tail chord.

    The chord joins the histogram peak to the farthest non-empty bin on the
    longer side. Ties resolve to the bin nearest the peak.
    """
    hist = np.asarray(histogram, dtype=np.float64)
    if hist.ndim != 1 or hist.size == 0:
        raise DegenerateHistogram("histogram must be a non-empty 1-d array")
    nonzero = np.flatnonzero(hist > 0)
    if nonzero.size < 2:
        raise DegenerateHistogram(f"need at least two non-empty bins, got {nonzero.size}")

    peak = int(np.argmax(hist))
    lo, hi = int(nonzero[0]), int(nonzero[-1])
    tail = hi if (hi - peak) >= (peak - lo) else lo
    if tail == peak:
        # peak sits on both extremes; only possible with a single bin, excluded above
        raise DegenerateHistogram("peak coincides with tail")

    step = 1 if tail > peak else -1
    bins = np.arange(peak, tail + step, step)
    x0, y0 = float(peak), hist[peak]
    x1, y1 = float(tail), hist[tail]
    # signed distance below the chord, up to the constant chord length
    dist = (y1 - y0) * (bins - x0) - (x1 - x0) * (hist[bins] - y0)
    dist = dist * np.sign(x1 - x0)
    # argmax returns the first maximum, i.e. the one nearest the peak
    return int(bins[int(np.argmax(dist))])


def luminance_bins(video: Video) -> np.ndarray:
    """Per-pixel histogram bin of the time-averaged channel mean."""
    lum = video.data.mean(axis=3).mean(axis=0)
    return np.floor(lum * (HISTOGRAM_BINS - 1) + 0.5).astype(np.int64)


def locate_well(video: Video) -> BoundingBox:
    if video.space is not ColorSpace.RGB:
        raise WrongColorSpace("locate_well expects an RGB video")
    bins = luminance_bins(video)
    hist = np.bincount(bins.ravel(), minlength=HISTOGRAM_BINS)
    try:
        mask = bins > triangle_threshold(hist)
    except DegenerateHistogram:
        # one grey level everywhere: either an empty or a uniformly lit field
        mask = bins > 0
    if not mask.any():
        raise EmptyWell("no pixel above the well threshold")
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return BoundingBox(int(rows[0]), int(rows[-1]), int(cols[0]), int(cols[-1]))


def _window_start(center: float, size: int, extent: int) -> int:
    start = int(np.floor(center - (size - 1) / 2.0 + 0.5))
    return min(max(start, 0), extent - size)


def center_crop(video: Video, box: BoundingBox, crop_size: int) -> Video:
    if crop_size > video.height or crop_size > video.width:
        raise CropTooLarge(f"crop {crop_size} exceeds frame {video.height}x{video.width}")
    cr, cc = box.center
    r0 = _window_start(cr, crop_size, video.height)
    c0 = _window_start(cc, crop_size, video.width)
    return video.with_data(video.data[:, r0:r0 + crop_size, c0:c0 + crop_size])


def _lerp(a: np.ndarray, b: np.ndarray, w: float) -> np.ndarray:
    # a + w(b - a) is exact when a == b; the clip absorbs last-ulp overshoot
    return np.clip(a + w * (b - a), np.minimum(a, b), np.maximum(a, b))


def interpolate_time(video: Video, target_frames: int) -> Video:
    n = len(video)
    if n < 2:
        raise TooFewFrames(f"temporal interpolation needs >= 2 frames, got {n}")
    if target_frames < 2:
        raise TooFewFrames("target_frames must be >= 2")
    src = video.data
    out = np.empty((target_frames,) + src.shape[1:])
    span = target_frames - 1
    for k in range(target_frames):
        i0, rem = divmod(k * (n - 1), span)
        if rem == 0:
            out[k] = src[i0]
        else:
            out[k] = _lerp(src[i0], src[i0 + 1], rem / span)
    return video.with_data(out)


def _axis_weights(n_in: int, n_out: int):
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    i0 = np.floor(pos).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, pos - i0


def resize_bilinear_array(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centred bilinear resize of ``(..., H, W, C)``."""
    if out_h <= 0 or out_w <= 0:
        raise ShapeMismatch("target size must be positive")
    r0, r1, wr = _axis_weights(img.shape[-3], out_h)
    c0, c1, wc = _axis_weights(img.shape[-2], out_w)
    wr = wr[:, None, None]
    wc = wc[None, :, None]
    top = _lerp(img[..., r0, :, :][..., :, c0, :], img[..., r0, :, :][..., :, c1, :], wc)
    bot = _lerp(img[..., r1, :, :][..., :, c0, :], img[..., r1, :, :][..., :, c1, :], wc)
    return _lerp(top, bot, wr)


def resize_bilinear(frame: Frame, target_size: int) -> Frame:
    return Frame(resize_bilinear_array(frame.data, target_size, target_size), frame.space)


def preprocess_video(video: Video, cfg: PreprocessConfig = PreprocessConfig()) -> Video:
    if len(video) < cfg.keep_frames:
        raise TooFewFrames(f"raw video has {len(video)} frames, need {cfg.keep_frames}")
    if video.space is not ColorSpace.RGB:
        raise WrongColorSpace("raw videos must be RGB")
    kept = video.with_data(video.data[: cfg.keep_frames])
    box = locate_well(kept)
    cropped = center_crop(kept, box, cfg.crop_size)
    timed = interpolate_time(cropped, cfg.target_frames)
    resized = resize_bilinear_array(timed.data, cfg.target_size, cfg.target_size)
    return Video(rgb_to_hsv_array(resized), ColorSpace.HSV, video.frame_interval_minutes)


def preprocess_well(record: WellRecord, cfg: PreprocessConfig = PreprocessConfig()) -> WellRecord:
    video = preprocess_video(record.load(), cfg)
    return replace(record, video=video, path=None)
