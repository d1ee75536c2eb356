"""Command-line entry point: ``wellcast <subcommand> ...``.

Stages communicate through manifests on disk, so each one can be rerun on its
own. Every invocation writes the fully resolved configuration as JSON next to
its outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, is_dataclass, replace
from pathlib import Path

import numpy as np

from .augment import HORIZONTAL, VERTICAL, AugmentConfig, SplitSpec, expand_dataset
from .checkpoint import load_checkpoint
from .errors import WellcastError
from .metrics import EvalConfig, evaluate_well, frame_mse, write_csv, write_report
from .predictor import ModelConfig, PredictorModel, repeat_last_baseline
from .preprocess import PreprocessConfig, preprocess_well
from .simulate import CorpusConfig, SimConfig, generate_corpus
from .training import TrainConfig, predict_with_model, train
from .video import DatasetManifest, Split, Video, load_video, read_manifest, save_video, write_manifest

log = logging.getLogger("wellcast")


class StageError(Exception):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage


def _jsonable(obj):
    if is_dataclass(obj):
        return _jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_run_config(path: Path, subcommand: str, args: argparse.Namespace, **configs) -> None:
    doc = {"subcommand": subcommand,
           "args": {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k != "func"},
           **{k: _jsonable(v) for k, v in configs.items()}}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _pmap(fn, jobs, workers: int):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


# -- stages -----------------------------------------------------------------------


def stage_simulate(out: Path, wells: int, sim: SimConfig, corpus_seed: int, workers: int) -> Path:
    generate_corpus(wells, CorpusConfig(base=sim, rng_seed=corpus_seed), out, workers=workers)
    return out / "manifest.json"


def _preprocess_job(args):
    record, cfg = args
    return preprocess_well(record, cfg)


def stage_preprocess(manifest_path: Path, out: Path, cfg: PreprocessConfig, workers: int) -> Path:
    src = read_manifest(manifest_path)
    records = _pmap(_preprocess_job, [(r, cfg) for r in src.records], workers)
    return write_manifest(DatasetManifest(records, seed=src.seed), out)


def stage_augment(manifest_path: Path, out: Path, cfg: AugmentConfig, split: SplitSpec, workers: int) -> Path:
    src = read_manifest(manifest_path)
    manifest = expand_dataset(src.records, cfg, split, workers=workers)
    return write_manifest(manifest, out)


def stage_train(manifest_path: Path, ckpt: Path, model_cfg: ModelConfig, train_cfg: TrainConfig):
    manifest = read_manifest(manifest_path)
    model = PredictorModel(model_cfg, seed=train_cfg.seed)
    result = train(model, manifest, train_cfg)
    return model, result


def stage_eval(gt: Video, pred: Video, cfg: EvalConfig, well_id: str, out_json: Path):
    if len(gt) > len(pred):
        gt = gt.with_data(gt.data[len(gt) - len(pred):])
    report = evaluate_well(gt, pred, cfg, well_id)
    write_report(report, out_json)
    return report


# -- argument handling ------------------------------------------------------------


def _model_config(args) -> ModelConfig:
    return ModelConfig(num_layers=args.layers, hidden_channels=args.hidden, kernel_size=args.kernel,
                       patch_size=args.patch, input_frames=args.input_frames, total_frames=args.total_frames)


def _sim_config(args) -> SimConfig:
    return SimConfig(image_size=args.size, frames=args.frames, red_green_balance=args.balance,
                     kill_strength=args.kill, symmetric_kill=args.symmetric_kill,
                     well_radius=args.well_radius if args.well_radius else args.size * 10.0 / 24.0)


def _augment_config(args) -> AugmentConfig:
    return AugmentConfig(
        flips=() if args.no_flips else (HORIZONTAL, VERTICAL),
        rotations=() if args.no_rotations else (90, 180, 270),
        blur_sigma=args.blur, noise_sigma=args.noise, seed=args.seed)


def cmd_simulate(args) -> None:
    out = Path(args.out)
    sim = _sim_config(args)
    stage_simulate(out, args.wells, sim, args.seed, args.workers)
    write_run_config(out / "simulate_config.json", "simulate", args, sim=sim)


def cmd_preprocess(args) -> None:
    out = Path(args.out)
    cfg = PreprocessConfig(args.keep_frames, args.target_frames, args.crop_size, args.size)
    stage_preprocess(Path(args.manifest), out, cfg, args.workers)
    write_run_config(out / "preprocess_config.json", "preprocess", args, preprocess=cfg)


def cmd_augment(args) -> None:
    out = Path(args.out)
    cfg = _augment_config(args)
    test_ids = tuple(w for w in args.test_wells.split(",") if w) if args.test_wells else ()
    split = SplitSpec(args.train_fraction, test_ids)
    stage_augment(Path(args.manifest), out, cfg, split, args.workers)
    write_run_config(out / "augment_config.json", "augment", args, augment=cfg, split=split)


def _train_config(args, ckpt: Path, log_path: Path) -> TrainConfig:
    return TrainConfig(iterations=args.iterations, learning_rate=args.lr, batch_size=args.batch, seed=args.seed,
                       valid_every=args.valid_every, checkpoint_every=args.checkpoint_every,
                       checkpoint_path=str(ckpt), log_path=str(log_path))


def cmd_train(args) -> None:
    ckpt = Path(args.out)
    log_path = Path(args.log) if args.log else ckpt.with_suffix(".log.csv")
    model_cfg = _model_config(args)
    train_cfg = _train_config(args, ckpt, log_path)
    write_run_config(ckpt.with_suffix(".config.json"), "train", args, model=model_cfg, train=train_cfg)
    stage_train(Path(args.manifest), ckpt, model_cfg, train_cfg)


def cmd_predict(args) -> None:
    ckpt = load_checkpoint(args.ckpt)
    video = load_video(args.input)
    n = ckpt.model.config.input_frames
    if len(video) > n:
        log.info("using the first %d of %d input frames", n, len(video))
        video = video.with_data(video.data[:n])
    pred = predict_with_model(ckpt.model, video)
    save_video(pred, args.out)
    write_run_config(Path(args.out) / "predict_config.json", "predict", args, model=ckpt.model.config)


def cmd_eval(args) -> None:
    cfg = EvalConfig(value_threshold=args.threshold, min_colony_pixels=args.min_pixels,
                     first_frame_number=args.first_frame)
    well_id = args.well_id or Path(args.gt).name
    stage_eval(load_video(args.gt), load_video(args.pred), cfg, well_id, Path(args.out))
    write_run_config(Path(args.out).with_suffix(".config.json"), "eval", args, eval=cfg)


def cmd_pipeline(args) -> None:
    out = Path(args.out)
    workers = args.workers
    sim = _sim_config(args)
    pre = PreprocessConfig(keep_frames=args.keep_frames, target_frames=args.total_frames,
                           crop_size=args.crop_size or args.size, target_size=args.target_size)
    aug = _augment_config(args)
    model_cfg = _model_config(args)
    ckpt = out / "model.wckp"
    train_cfg = _train_config(args, ckpt, out / "train_log.csv")
    eval_cfg = EvalConfig(value_threshold=args.threshold, min_colony_pixels=args.min_pixels,
                          first_frame_number=model_cfg.input_frames + 1)

    def run_stage(name, fn, *a):
        log.info("stage %s", name)
        try:
            return fn(*a)
        except (WellcastError, OSError, ValueError) as exc:
            raise StageError(name, exc) from exc

    raw = run_stage("simulate", stage_simulate, out / "raw", args.wells, sim, args.seed, workers)
    prep = run_stage("preprocess", stage_preprocess, raw, out / "preprocessed", pre, workers)
    ids = [r.well_id for r in read_manifest(prep, load=False).records]
    if not (0 < args.test_wells < len(ids)):
        raise StageError("augment", ValueError(f"--test-wells must be in [1, {len(ids) - 1}]"))
    test_ids = tuple(sorted(np.random.default_rng([args.seed, 2]).choice(ids, args.test_wells, replace=False)))
    split = SplitSpec(args.train_fraction, test_ids)
    write_run_config(out / "pipeline_config.json", "pipeline", args, sim=sim, preprocess=pre, augment=aug,
                     split=split, model=model_cfg, train=train_cfg, eval=eval_cfg)
    dataset = run_stage("augment", stage_augment, prep, out / "dataset", aug, split, workers)
    model, _ = run_stage("train", stage_train, dataset, ckpt, model_cfg, train_cfg)

    def evaluate_all():
        manifest = read_manifest(dataset)
        reports, summary = [], []
        for rec in manifest.by_split(Split.TEST):
            video = rec.load()
            cond = video.with_data(video.data[: model_cfg.input_frames])
            gt = video.with_data(video.data[model_cfg.input_frames:])
            pred = predict_with_model(model, cond)
            save_video(pred, out / "predictions" / rec.well_id)
            report = stage_eval(gt, pred, eval_cfg, rec.well_id, out / "reports" / f"{rec.well_id}.json")
            reports.append(report)
            base = repeat_last_baseline(video, model_cfg.input_frames, model_cfg.output_frames)
            base_mse = float(np.mean([frame_mse(g, b) for g, b in zip(gt.frames, base.frames)]))
            summary.append({"well_id": rec.well_id, "mse": report.averages["mse"],
                            "ssim": report.averages["ssim"], "baseline_mse": base_mse})
        write_csv(reports, out / "reports" / "all_wells.csv")
        doc = {"wells": summary,
               "mean_mse": float(np.mean([s["mse"] for s in summary])),
               "mean_baseline_mse": float(np.mean([s["baseline_mse"] for s in summary]))}
        (out / "reports" / "summary.json").write_text(json.dumps(doc, indent=2) + "\n")
        return doc

    doc = run_stage("eval", evaluate_all)
    log.info("test mean MSE %.3f (repeat-last baseline %.3f)", doc["mean_mse"], doc["mean_baseline_mse"])


def _add_model_flags(p):
    d = ModelConfig()
    p.add_argument("--layers", type=int, default=d.num_layers)
    p.add_argument("--hidden", type=int, default=d.hidden_channels)
    p.add_argument("--kernel", type=int, default=d.kernel_size)
    p.add_argument("--patch", type=int, default=d.patch_size)
    p.add_argument("--input-frames", type=int, default=d.input_frames)
    p.add_argument("--total-frames", type=int, default=d.total_frames)


def _add_train_flags(p, iterations: int):
    d = TrainConfig()
    p.add_argument("--iterations", type=int, default=iterations)
    p.add_argument("--lr", type=float, default=d.learning_rate)
    p.add_argument("--batch", type=int, default=d.batch_size)
    p.add_argument("--valid-every", type=int, default=d.valid_every)
    p.add_argument("--checkpoint-every", type=int, default=d.checkpoint_every)


def _add_sim_flags(p):
    d = SimConfig()
    p.add_argument("--wells", type=int, default=48)
    p.add_argument("--frames", type=int, default=d.frames)
    p.add_argument("--size", type=int, default=d.image_size)
    p.add_argument("--balance", type=float, default=d.red_green_balance)
    p.add_argument("--kill", type=float, default=d.kill_strength)
    p.add_argument("--symmetric-kill", action="store_true")
    p.add_argument("--well-radius", type=float, default=None)


def _add_augment_flags(p):
    d = AugmentConfig()
    p.add_argument("--blur", type=float, default=d.blur_sigma)
    p.add_argument("--noise", type=float, default=d.noise_sigma)
    p.add_argument("--no-flips", action="store_true")
    p.add_argument("--no-rotations", action="store_true")
    p.add_argument("--train-fraction", type=float, default=SplitSpec().train_fraction)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wellcast", description="Microwell growth video forecasting toolkit.")
    parser.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                        help="parallel workers for per-well stages (results do not depend on it)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic raw well corpus")
    _add_sim_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("preprocess", help="centre, trim and resample raw wells")
    d = PreprocessConfig()
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--keep-frames", type=int, default=d.keep_frames)
    p.add_argument("--target-frames", type=int, default=d.target_frames)
    p.add_argument("--crop-size", type=int, default=d.crop_size)
    p.add_argument("--size", type=int, default=d.target_size)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("augment", help="expand wells with spatial transforms and split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--test-wells", default="", help="comma-separated held-out well ids")
    p.add_argument("--seed", type=int, default=0)
    _add_augment_flags(p)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train the predictor on a split manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", default=None, help="training log CSV (default: next to the checkpoint)")
    p.add_argument("--seed", type=int, default=0)
    _add_train_flags(p, TrainConfig().iterations)
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="forecast frames for one video directory")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="compare groundtruth and predicted video directories")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=EvalConfig().value_threshold)
    p.add_argument("--min-pixels", type=int, default=EvalConfig().min_colony_pixels)
    p.add_argument("--first-frame", type=int, default=EvalConfig().first_frame_number)
    p.add_argument("--well-id", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="simulate -> preprocess -> augment -> train -> predict -> eval")
    _add_sim_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/pipeline")
    p.add_argument("--test-wells", type=int, default=4)
    p.add_argument("--keep-frames", type=int, default=PreprocessConfig().keep_frames)
    p.add_argument("--crop-size", type=int, default=None)
    p.add_argument("--target-size", type=int, default=PreprocessConfig().target_size)
    p.add_argument("--threshold", type=float, default=EvalConfig().value_threshold)
    p.add_argument("--min-pixels", type=int, default=EvalConfig().min_colony_pixels)
    _add_augment_flags(p)
    _add_train_flags(p, 2000)
    _add_model_flags(p)
    p.set_defaults(func=cmd_pipeline)
    return parser


def _configure_logging(verbose: bool) -> None:
    level = os.environ.get("WELLCAST_LOG", "DEBUG" if verbose else "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _configure_logging(args.verbose)
    try:
        args.func(args)
    except StageError as exc:
        print(f"wellcast {args.subcommand}: stage {exc}", file=sys.stderr)
        return 1
    except (WellcastError, OSError, ValueError) as exc:
        print(f"wellcast {args.subcommand}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
