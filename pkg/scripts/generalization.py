"""Train on simulator wells and compare held-out MSE with the repeat-last baseline."""

import argparse
import json
import logging

from wellcast.experiments import DESK_LEARNING_RATE, DESK_MODEL, run_generalization
from wellcast.predictor import ModelConfig
from wellcast.training import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--train-wells", type=int, default=40)
    ap.add_argument("--test-wells", type=int, default=4)
    ap.add_argument("--iterations", type=int, default=5000)
    ap.add_argument("--layers", type=int, default=DESK_MODEL.num_layers)
    ap.add_argument("--hidden", type=int, default=DESK_MODEL.hidden_channels)
    ap.add_argument("--kernel", type=int, default=DESK_MODEL.kernel_size)
    ap.add_argument("--patch", type=int, default=DESK_MODEL.patch_size)
    ap.add_argument("--lr", type=float, default=DESK_LEARNING_RATE)
    ap.add_argument("--batch", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    model = ModelConfig(num_layers=args.layers, hidden_channels=args.hidden, kernel_size=args.kernel,
                        patch_size=args.patch)
    train_cfg = TrainConfig(iterations=args.iterations, learning_rate=args.lr, batch_size=args.batch,
                            seed=args.seed, valid_every=500)
    result = run_generalization(args.train_wells, args.test_wells, args.iterations, model, train_cfg,
                                seed=args.seed, workers=args.workers)
    print(json.dumps({
        "model_mse": result.model_mse,
        "baseline_mse": result.baseline_mse,
        "improvement": result.improvement,
        "minutes": result.seconds / 60,
        "wells": [vars(s) for s in result.scores],
    }, indent=2))


if __name__ == "__main__":
    main()
