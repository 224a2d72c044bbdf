"""Train and evaluate the perceptual scorer.

Mini-batch Adam on the Huber loss, augmentation on training examples only,
learning rate halved after 3 epochs without validation improvement (floor
1e-6). The returned model is the snapshot with the lowest validation loss.
Every random draw (init, shuffling, augmentation, dropout) comes from the
config seed, and batch gradients are summed in example order, so a run is
bit-reproducible.

Usage as library:
    from roomrank.scorer.training import TrainConfig, train, evaluate
    result = train(train_examples, val_examples, TrainConfig(seed=1))
    result.model, result.log

Usage as CLI:
    roomrank train --synthetic 200 --audio toy/ --out scorer.rrsc --seed 1
    roomrank train --ratings ratings.csv --audio notes/ --out scorer.rrsc
    roomrank evaluate --model scorer.rrsc --ratings ratings.csv --audio notes/
"""

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from tqdm import tqdm

from roomrank.audio_io import AudioIOError
from roomrank.config import ConfigError, configure_logging, load_run_config
from roomrank.scorer.augment import AugmentConfig, augment
from roomrank.scorer.dataset import (
    RATINGS_NAME,
    RatingsError,
    RatingsManifest,
    build_training_set,
    consensus_labels,
    generate_synthetic_labeled_corpus,
    load_examples,
)
from roomrank.scorer.network import (
    ScorerArchitecture,
    accumulate,
    adam_step,
    backward,
    forward,
    huber_loss,
    init_adam_state,
    init_model,
    to_float32_precision,
)
from roomrank.scorer.serialize import ModelFormatError, load_model, save_model

logger = logging.getLogger(__name__)

LOG_COLUMNS = ["epoch", "train_loss", "val_loss", "lr"]
ACCURACY_THRESHOLD = 0.5
MIN_SCALE = 1e-6


class TrainingError(Exception):
    """Training cannot start or diverged."""
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    lr_start: float = 1e-4
    lr_floor: float = 1e-6
    lr_decay: float = 0.5
    patience: int = 3
    batch_size: int = 16
    huber_delta: float = 1.0
    seed: int = 42
    augment: bool = True
    augmentations: AugmentConfig = field(default_factory=AugmentConfig)
    architecture: ScorerArchitecture = field(default_factory=ScorerArchitecture)

    def validate(self):
        if self.epochs < 1:
            raise TrainingError(f"epochs must be >= 1, got {self.epochs}")
        if not (0 < self.lr_floor <= self.lr_start):
            raise TrainingError(
                f"need 0 < lr_floor <= lr_start, got {self.lr_floor} and {self.lr_start}"
            )
        if self.batch_size < 1:
            raise TrainingError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.huber_delta <= 0:
            raise TrainingError(f"huber_delta must be positive, got {self.huber_delta}")


@dataclass
class EvalResult:
    loss: float
    accuracy: float
    n: int


@dataclass
class TrainResult:
    model: object
    log: pd.DataFrame
    best_epoch: int
    best_val_loss: float
    best_val_accuracy: float


def evaluate(model, examples, delta=1.0):
    """Mean Huber loss and threshold-0.5 accuracy against binarized labels."""
    if not examples:
        raise TrainingError("cannot evaluate on zero examples")
    losses, hits = [], 0
    for ex in examples:
        score = forward(model, ex.mel, mode="infer")
        losses.append(huber_loss(score, ex.label, delta)[0])
        hits += (score >= ACCURACY_THRESHOLD) == (ex.label >= ACCURACY_THRESHOLD)
    return EvalResult(loss=float(np.mean(losses)), accuracy=hits / len(examples), n=len(examples))


def input_standardization(examples):
    """(shift, scale) from training mel values, rounded to float32."""
    stacked = np.stack([ex.mel.values for ex in examples])
    shift = float(to_float32_precision(stacked.mean()))
    scale = float(to_float32_precision(max(stacked.std(), MIN_SCALE)))
    return shift, scale


def train(train_examples, val_examples, config=None, progress=False):
    """Fit a scorer.

    Args:
        train_examples: LabeledExamples (>= 2).
        val_examples: LabeledExamples (>= 2).
        config: TrainConfig.
        progress: Show a tqdm bar over epochs.

    Returns:
        TrainResult with the best-validation snapshot and the per-epoch log.

    Raises:
        TrainingError on too few examples or a non-finite training loss.
    """
    config = config or TrainConfig()
    config.validate()
    if len(train_examples) < 2 or len(val_examples) < 2:
        raise TrainingError(
            f"need >= 2 training and >= 2 validation examples, "
            f"got {len(train_examples)} and {len(val_examples)}"
        )

    init_seq, loop_seq = np.random.SeedSequence(config.seed).spawn(2)
    model = init_model(config.architecture, rng=np.random.default_rng(init_seq))
    model.input_shift, model.input_scale = input_standardization(train_examples)
    rng = np.random.default_rng(loop_seq)
    state = init_adam_state(model.params)

    lr = config.lr_start
    best = None
    best_eval = None
    best_epoch = 0
    stale = 0
    rows = []

    epochs = tqdm(range(1, config.epochs + 1), desc="Training", unit="epoch",
                  disable=not progress, file=sys.stderr)
    for epoch in epochs:
        order = rng.permutation(len(train_examples))
        total_loss = 0.0
        for start in range(0, order.size, config.batch_size):
            batch = [train_examples[i] for i in order[start:start + config.batch_size]]
            grad_list = []
            for ex in batch:
                spec = augment(ex.mel, rng, config.augmentations) if config.augment else ex.mel
                result = backward(model, spec, ex.label, mode="train", rng=rng,
                                  delta=config.huber_delta)
                total_loss += result.loss
                grad_list.append(result.grads)
            grads = {k: v / len(batch) for k, v in accumulate(grad_list).items()}
            params, state = adam_step(model.params, grads, state, lr)
            model.params = {k: to_float32_precision(v) for k, v in params.items()}

        train_loss = total_loss / len(train_examples)
        if not math.isfinite(train_loss):
            raise TrainingError(f"training diverged at epoch {epoch}")

        val = evaluate(model, val_examples, config.huber_delta)
        rows.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val.loss, "lr": lr})
        logger.debug(f"epoch {epoch}: train {train_loss:.6f} val {val.loss:.6f} "
                     f"acc {val.accuracy:.3f} lr {lr:g}")

        if best_eval is None or val.loss < best_eval.loss:
            best, best_eval, best_epoch, stale = model.copy(), val, epoch, 0
        else:
            stale += 1
            if stale >= config.patience:
                lr = max(lr * config.lr_decay, config.lr_floor)
                stale = 0

    return TrainResult(
        model=best,
        log=pd.DataFrame(rows, columns=LOG_COLUMNS),
        best_epoch=best_epoch,
        best_val_loss=best_eval.loss,
        best_val_accuracy=best_eval.accuracy,
    )


def write_log(log, path):
    log.to_csv(path, index=False, float_format="%.8g")
    return path


# --- CLI ---

def _default_log_path(model_path):
    return os.path.splitext(model_path)[0] + "_log.csv"


def cmd_train(args, parser):
    if args.epochs < 1:
        parser.error(f"--epochs must be >= 1, got {args.epochs}")
    try:
        run = load_run_config("train", seed=args.seed, paths={"out": args.out},
                              progress=not args.no_progress)
    except ConfigError as e:
        parser.error(str(e))

    if args.synthetic is not None:
        if args.synthetic < 2:
            parser.error(f"--synthetic must be >= 2, got {args.synthetic}")
        audio_dir = args.audio or os.path.splitext(args.out)[0] + "_notes"
        try:
            generate_synthetic_labeled_corpus(args.synthetic, run.seed, audio_dir)
        except (OSError, AudioIOError) as e:
            print(f"Error: {e}", file=sys.stderr)
            sys.exit(1)
        ratings_path = os.path.join(audio_dir, RATINGS_NAME)
    else:
        if not args.ratings or not args.audio:
            parser.error("--ratings and --audio are required unless --synthetic is given")
        if not os.path.exists(args.ratings):
            parser.error(f"ratings file not found: {args.ratings}")
        audio_dir, ratings_path = args.audio, args.ratings

    config = TrainConfig(epochs=args.epochs, seed=run.seed, augment=not args.no_augment)
    log_path = args.log or _default_log_path(args.out)
    try:
        manifest = RatingsManifest.from_csv(ratings_path)
        split = build_training_set(manifest, seed=run.seed)
        print(f"Training on {len(split.train)} notes, validating on {len(split.val)} "
              f"({split.n_dropped} without consensus)", file=sys.stderr)
        result = train(load_examples(split.train, audio_dir), load_examples(split.val, audio_dir),
                       config, progress=run.progress)
        save_model(result.model, args.out)
        write_log(result.log, log_path)
    except (RatingsError, TrainingError, AudioIOError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(1)

    print(f"Best validation loss: {result.best_val_loss:.6f} (epoch {result.best_epoch})",
          file=sys.stderr)
    print(f"Validation accuracy: {result.best_val_accuracy:.3f}", file=sys.stderr)
    print(f"Model: {args.out}", file=sys.stderr)
    print(f"Log: {log_path}", file=sys.stderr)


def cmd_evaluate(args, parser):
    if not os.path.exists(args.ratings):
        parser.error(f"ratings file not found: {args.ratings}")
    try:
        model = load_model(args.model)
        items, dropped = consensus_labels(RatingsManifest.from_csv(args.ratings))
        if not items:
            raise RatingsError("no consensus labels")
        result = evaluate(model, load_examples(items, args.audio))
    except (ModelFormatError, RatingsError, TrainingError, AudioIOError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(1)

    print(f"Evaluated {result.n} notes ({len(dropped)} without consensus)", file=sys.stderr)
    print(json.dumps({"n": result.n, "loss": result.loss, "accuracy": result.accuracy}))


def cli_main(argv=None):
    """CLI entry point for scorer training and evaluation."""
    parser = argparse.ArgumentParser(
        prog="roomrank",
        description="Train or evaluate the perceptual note scorer",
        epilog="Examples:\n"
        "  roomrank train --synthetic 200 --audio toy --out scorer.rrsc --seed 1\n"
        "  roomrank train --ratings ratings.csv --audio notes --out scorer.rrsc\n"
        "  roomrank evaluate --model scorer.rrsc --ratings ratings.csv --audio notes\n",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    sp_train = subparsers.add_parser("train", help="Train a scorer model")
    sp_train.add_argument("--ratings", default=None, help="Ratings CSV (audio_path,rater_id,rating)")
    sp_train.add_argument("--audio", default=None, help="Directory holding the rated notes")
    sp_train.add_argument("--out", required=True, help="Output model file")
    sp_train.add_argument("--synthetic", type=int, default=None, metavar="N",
                          help="Generate N synthetic rated notes into --audio first")
    sp_train.add_argument("--log", default=None, help="Training log CSV (default: <out>_log.csv)")
    sp_train.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    sp_train.add_argument("--no-augment", action="store_true", help="Disable augmentation")
    sp_train.add_argument("--seed", type=int, default=None, help="Random seed (default: 42)")
    sp_train.add_argument("--no-progress", action="store_true", help="Hide progress bar")
    sp_train.add_argument("--verbose", "-v", action="store_true", help="Debug logging")

    sp_eval = subparsers.add_parser("evaluate", help="Loss and accuracy on rated notes")
    sp_eval.add_argument("--model", required=True, help="Model file")
    sp_eval.add_argument("--ratings", required=True, help="Ratings CSV")
    sp_eval.add_argument("--audio", required=True, help="Directory holding the rated notes")
    sp_eval.add_argument("--verbose", "-v", action="store_true", help="Debug logging")

    args = parser.parse_args(argv)
    configure_logging(args.verbose)

    if args.command == "train":
        cmd_train(args, sp_train)
    elif args.command == "evaluate":
        cmd_evaluate(args, sp_eval)
