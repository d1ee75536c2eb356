"""Training loop, validation and checkpoint-backed inference."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numeric as nm
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .errors import ConfigMismatch, EmptyDataset, ShapeMismatch
from .numeric import AdamState
from .predictor import PredictorModel, forward_sequence, video_batch
from .video import DatasetManifest, Split, Video, video_to_hsv, video_to_rgb

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 50_000
    learning_rate: float = 3e-4
    batch_size: int = 8
    seed: int = 0
    valid_every: int = 500
    valid_limit: int = 64
    checkpoint_every: int = 5_000
    checkpoint_path: str | None = None
    log_path: str | None = None


@dataclass
class LogRow:
    iteration: int
    train_mse: float
    valid_mse: float | None = None


@dataclass
class TrainResult:
    rows: list[LogRow] = field(default_factory=list)
    optimizer: AdamState | None = None
    iteration: int = 0

    @property
    def train_curve(self) -> np.ndarray:
        return np.array([r.train_mse for r in self.rows])

    @property
    def valid_curve(self) -> list[tuple[int, float]]:
        return [(r.iteration, r.valid_mse) for r in self.rows if r.valid_mse is not None]


def write_log(rows: list[LogRow], path: str | os.PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "train_mse", "valid_mse"])
        for r in rows:
            w.writerow([r.iteration, repr(r.train_mse), "" if r.valid_mse is None else repr(r.valid_mse)])


def read_log(path: str | os.PathLike) -> list[LogRow]:
    with Path(path).open() as fh:
        return [LogRow(int(row["iteration"]), float(row["train_mse"]),
                       float(row["valid_mse"]) if row["valid_mse"] else None)
                for row in csv.DictReader(fh)]


def _split_array(manifest: DatasetManifest, split: Split, model: PredictorModel) -> np.ndarray:
    records = manifest.by_split(split)
    if not records:
        raise EmptyDataset(f"manifest has no {split.value} records")
    videos = [r.load() for r in records]
    cfg = model.config
    for r, v in zip(records, videos):
        if len(v) != cfg.total_frames:
            raise ShapeMismatch(f"{r.well_id} has {len(v)} frames, model expects {cfg.total_frames}")
    return video_batch(videos, cfg.patch_size)


def evaluate_loss(model: PredictorModel, data: np.ndarray, chunk: int = 16) -> float:
    """Mean MSE over predicted frames, in patchified HSV units."""
    total, count = 0.0, 0
    with nm.no_grad():
        for start in range(0, len(data), chunk):
            part = data[start:start + chunk]
            total += model.sequence_loss(part).item() * len(part)
            count += len(part)
    return total / count


def train(model: PredictorModel, manifest: DatasetManifest, cfg: TrainConfig = TrainConfig(),
          optimizer: AdamState | None = None, start_iteration: int = 0) -> TrainResult:
    train_data = _split_array(manifest, Split.TRAIN, model)
    valid_data = _split_array(manifest, Split.VALID, model)[: cfg.valid_limit]
    optimizer = optimizer or AdamState(learning_rate=cfg.learning_rate)
    params = model.parameters()
    # sampling stream is kept apart from the weight-init stream
    rng = np.random.default_rng([cfg.seed, 1])
    batch = min(cfg.batch_size, len(train_data))
    result = TrainResult(optimizer=optimizer, iteration=start_iteration)

    for it in range(start_iteration + 1, cfg.iterations + 1):
        idx = np.sort(rng.choice(len(train_data), size=batch, replace=False))
        model.zero_grad()
        with nm.Tape():
            loss = model.sequence_loss(train_data[idx])
            nm.backward(loss)
        nm.adam_step(params, [p.grad for p in params], optimizer)
        row = LogRow(it, loss.item())
        if it % cfg.valid_every == 0 or it == cfg.iterations:
            row.valid_mse = evaluate_loss(model, valid_data)
            log.info("iter %d train_mse %.6f valid_mse %.6f", it, row.train_mse, row.valid_mse)
        result.rows.append(row)
        result.iteration = it
        if cfg.checkpoint_path and (it % cfg.checkpoint_every == 0 or it == cfg.iterations):
            save_checkpoint(cfg.checkpoint_path, model, optimizer, it)
            if cfg.log_path:
                write_log(result.rows, cfg.log_path)
    if cfg.log_path:
        write_log(result.rows, cfg.log_path)
    return result


def predict_with_model(model: PredictorModel, input_video: Video) -> Video:
    """Forecast the frames after ``input_video`` and return them as RGB."""
    cfg = model.config
    if len(input_video) != cfg.input_frames:
        raise ConfigMismatch(f"model conditions on {cfg.input_frames} frames, got {len(input_video)}")
    side = cfg.patch_size
    if input_video.height % side or input_video.width % side:
        raise ConfigMismatch(f"frame {input_video.height}x{input_video.width} not divisible by patch {side}")
    hsv = forward_sequence(model, video_to_hsv(input_video), "infer")
    return video_to_rgb(hsv)


def predict(checkpoint_path: str | os.PathLike, input_video: Video) -> Video:
    ckpt: Checkpoint = load_checkpoint(checkpoint_path)
    return predict_with_model(ckpt.model, input_video)
