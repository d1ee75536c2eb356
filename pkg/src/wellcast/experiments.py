"""In-memory experiment drivers shared by ``scripts/`` and the acceptance tests.

These skip the on-disk manifest plumbing (the CLI covers that) and run
simulate -> preprocess -> augment -> train -> evaluate directly.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .augment import AugmentConfig, SplitSpec, expand_dataset
from .metrics import frame_mse, population_curve
from .predictor import ModelConfig, PredictorModel, repeat_last_baseline
from .preprocess import PreprocessConfig, preprocess_well
from .simulate import CorpusConfig, SimConfig, saturation_frame, simulate_corpus, simulate_well
from .training import TrainConfig, TrainResult, predict_with_model, train
from .video import Split, Video, WellRecord, video_to_rgb

log = logging.getLogger(__name__)

# Fits the 2 h single-core budget for 5000 steps. Patch 2 keeps the 12 values per
# grid cell below the hidden width, so the recurrence can carry a frame forward
# without blurring hue.
DESK_MODEL = ModelConfig(num_layers=1, hidden_channels=24, kernel_size=3, patch_size=2)
DESK_LEARNING_RATE = 2e-3
# Used where ten independent trainings have to fit in under an hour.
TINY_MODEL = ModelConfig(num_layers=1, hidden_channels=12, kernel_size=3, patch_size=2)


def raw_records(n_wells: int, corpus: CorpusConfig, workers: int = 1) -> list[WellRecord]:
    return [WellRecord(f"W{i:03d}", video, Split.RAW)
            for i, (_, video, _) in enumerate(simulate_corpus(n_wells, corpus, workers))]


def preprocessed(records: list[WellRecord], cfg: PreprocessConfig = PreprocessConfig()) -> list[WellRecord]:
    return [preprocess_well(r, cfg) for r in records]


def split_conditioning(video: Video, input_frames: int) -> tuple[Video, Video]:
    return video.with_data(video.data[:input_frames]), video.with_data(video.data[input_frames:])


def mean_frame_mse(gt: Video, pred: Video) -> float:
    gt, pred = video_to_rgb(gt), video_to_rgb(pred)
    return float(np.mean([frame_mse(a, b) for a, b in zip(gt.frames, pred.frames)]))


@dataclass
class WellScore:
    well_id: str
    model_mse: float
    baseline_mse: float


@dataclass
class GeneralizationResult:
    scores: list[WellScore]
    history: TrainResult
    seconds: float

    @property
    def model_mse(self) -> float:
        return float(np.mean([s.model_mse for s in self.scores]))

    @property
    def baseline_mse(self) -> float:
        return float(np.mean([s.baseline_mse for s in self.scores]))

    @property
    def improvement(self) -> float:
        """Relative MSE reduction over holding the last conditioning frame."""
        return 1.0 - self.model_mse / self.baseline_mse


def score_wells(model: PredictorModel, records: list[WellRecord]) -> list[WellScore]:
    n_in, n_out = model.config.input_frames, model.config.output_frames
    scores = []
    for rec in records:
        cond, gt = split_conditioning(rec.video, n_in)
        pred = predict_with_model(model, cond)
        base = repeat_last_baseline(rec.video, n_in, n_out)
        scores.append(WellScore(rec.well_id, mean_frame_mse(gt, pred), mean_frame_mse(gt, base)))
    return scores


def run_generalization(n_train_wells: int = 40, n_test_wells: int = 4, iterations: int = 5000,
                       model_cfg: ModelConfig = DESK_MODEL, train_cfg: TrainConfig | None = None,
                       sim: SimConfig = SimConfig(), seed: int = 0, workers: int = 1) -> GeneralizationResult:
    """Train on augmented simulator wells and score held-out wells against repeat-last."""
    start = time.perf_counter()
    corpus = CorpusConfig(base=sim, rng_seed=seed)
    wells = preprocessed(raw_records(n_train_wells + n_test_wells, corpus, workers))
    test_ids = tuple(r.well_id for r in wells[-n_test_wells:])
    manifest = expand_dataset(wells, AugmentConfig(seed=seed), SplitSpec(0.8, test_ids), workers=workers)
    train_cfg = train_cfg or TrainConfig(iterations=iterations, learning_rate=DESK_LEARNING_RATE, batch_size=4,
                                        seed=seed, valid_every=500)
    model = PredictorModel(model_cfg, seed=seed)
    history = train(model, manifest, train_cfg)
    scores = score_wells(model, manifest.by_split(Split.TEST))
    return GeneralizationResult(scores, history, time.perf_counter() - start)


@dataclass
class ImbalanceRun:
    seed: int
    predicted_red: float
    groundtruth_red: float
    predicted_green: float
    groundtruth_green: float

    @property
    def predicted_red_share(self) -> float:
        return self.predicted_red / max(self.predicted_red + self.predicted_green, 1e-12)

    @property
    def groundtruth_red_share(self) -> float:
        return self.groundtruth_red / max(self.groundtruth_red + self.groundtruth_green, 1e-12)

    @property
    def red_overestimated(self) -> bool:
        return self.predicted_red > self.groundtruth_red


@dataclass
class ImbalanceResult:
    runs: list[ImbalanceRun] = field(default_factory=list)

    @property
    def overestimated_fraction(self) -> float:
        return float(np.mean([r.red_overestimated for r in self.runs]))


def balanced_probe(seed: int, sim: SimConfig = SimConfig(), pre: PreprocessConfig = PreprocessConfig()) -> WellRecord:
    """A held-out well drawn with equal red/green weights."""
    raw, _ = simulate_well(replace(sim, red_green_balance=0.5, rng_seed=10_000 + seed))
    return preprocess_well(WellRecord("probe", raw, Split.RAW), pre)


def run_imbalance(runs: int = 10, n_wells: int = 24, iterations: int = 800, balance: float = 0.9,
                  model_cfg: ModelConfig = TINY_MODEL, sim: SimConfig = SimConfig(), first_seed: int = 0,
                  workers: int = 1, learning_rate: float = DESK_LEARNING_RATE) -> ImbalanceResult:
    """Train on a red-biased corpus and compare final-frame red totals on a balanced well."""
    result = ImbalanceResult()
    for seed in range(first_seed, first_seed + runs):
        corpus = CorpusConfig(base=replace(sim, red_green_balance=balance), rng_seed=seed)
        wells = preprocessed(raw_records(n_wells, corpus, workers))
        manifest = expand_dataset(wells, AugmentConfig(seed=seed), SplitSpec(0.8), workers=workers)
        model = PredictorModel(model_cfg, seed=seed)
        train(model, manifest, TrainConfig(iterations=iterations, learning_rate=learning_rate, batch_size=4,
                                           seed=seed, valid_every=iterations))
        probe = balanced_probe(seed, sim)
        cond, gt = split_conditioning(probe.video, model_cfg.input_frames)
        pred_curve = population_curve(predict_with_model(model, cond))
        gt_curve = population_curve(gt)
        run = ImbalanceRun(seed, float(pred_curve.red[-1]), float(gt_curve.red[-1]),
                           float(pred_curve.green[-1]), float(gt_curve.green[-1]))
        log.info("imbalance seed %d: red pred %.1f gt %.1f", seed, run.predicted_red, run.groundtruth_red)
        result.runs.append(run)
    return result


def saturation_report(n_seeds: int = 50, sim: SimConfig = SimConfig()) -> dict:
    """Frame at which total occupancy first reaches 90% of carrying capacity, per seed."""
    frames = []
    for seed in range(n_seeds):
        cfg = replace(sim, rng_seed=seed)
        _, truth = simulate_well(cfg)
        frames.append(saturation_frame(truth, cfg.carrying_capacity))
    reached = [f for f in frames if f is not None]
    return {"frames": frames, "reached": len(reached), "seeds": n_seeds,
            "median": float(np.median(reached)) if reached else None}

