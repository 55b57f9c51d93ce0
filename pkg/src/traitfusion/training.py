"""Training loop, evaluation metric and ablation runner.

Adam minimizes the MSE between predicted and target trait scores; a
reduce-on-plateau scheduler halves the learning rate after `patience` epochs
without validation improvement. Reported train MSE for epoch e is always
computed from the parameters as of the start of epoch e, so a replay of the
histories is exactly reproducible from the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .config import ModelConfig, NUM_TRAITS
from .data import VideoSample
from .errors import DimensionError, ParameterError, UsageError
from .model import ModelParams, init_model_params, model_forward
from .reports import AblationReport, TrainReport
from .tensor import Tape, Tensor

PAPER_LEARNING_RATE = 1e-5
DESK_LEARNING_RATE = 1e-3


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters; the defaults are the paper-faithful ones.

    `desk()` is the preset for small synthetic datasets, where 1e-5 is too
    slow to converge in a reasonable epoch budget.
    """

    batch_size: int = 8
    learning_rate: float = PAPER_LEARNING_RATE
    max_epochs: int = 100
    seed: int = 0
    patience: int = 5
    factor: float = 0.5
    improvement_threshold: float = 1e-6
    target_train_mse: Optional[float] = None
    disabled: tuple[str, ...] = ()

    def __post_init__(self):
        if not 0.0 < self.factor < 1.0:
            raise ParameterError(f"factor must be in (0, 1), got {self.factor}")
        if self.patience < 1:
            raise ParameterError(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        overrides.setdefault("learning_rate", DESK_LEARNING_RATE)
        return cls(**overrides)


class PlateauScheduler:
    """Halve the learning rate after `patience` non-improving epochs.

    Improvement means the monitored value dropped by more than `threshold`
    below the best seen. Prime with a pre-training baseline so the very first
    epoch already counts against the patience budget.
    """

    def __init__(self, lr: float, patience: int = 5, factor: float = 0.5,
                 threshold: float = 1e-6):
        if not 0.0 < factor < 1.0:
            raise ParameterError(f"factor must be in (0, 1), got {factor}")
        if patience < 1:
            raise ParameterError(f"patience must be >= 1, got {patience}")
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.threshold = threshold
        self.best: Optional[float] = None
        self.bad_epochs = 0
        self.reduction_epochs: list[int] = []
        self._epoch = 0

    def prime(self, value: float) -> None:
        self.best = value

    def step(self, value: float) -> float:
        """Consume one epoch's monitored value; returns the LR for the next epoch."""
        self._epoch += 1
        if self.best is None or value < self.best - self.threshold:
            self.best = value
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs > self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
                self.reduction_epochs.append(self._epoch)
        return self.lr


class Adam:
    """Adam over a named parameter dict; state keyed by parameter name."""

    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data, dtype=np.float64)
                  for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data, dtype=np.float64)
                  for k, p in params.items()}

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            g = g.astype(np.float64, copy=False)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            mhat = self.m[name] / b1c
            vhat = self.v[name] / b2c
            p.data -= (lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)


def mean_accuracy(preds, targets) -> tuple[np.ndarray, float]:
    """Per-trait accuracies A_j = 1 - mean |t - p| over videos, plus their mean."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise DimensionError(
            f"prediction shape {preds.shape} != target shape {targets.shape}")
    if preds.ndim == 1:
        preds = preds.reshape(1, -1)
        targets = targets.reshape(1, -1)
    if preds.shape[1] != NUM_TRAITS:
        raise DimensionError(f"expected {NUM_TRAITS} trait columns, got {preds.shape}")
    per_trait = 1.0 - np.abs(targets - preds).mean(axis=0)
    return per_trait, float(per_trait.mean())


def evaluate_mse(samples: Sequence[VideoSample], params: ModelParams,
                 cfg: ModelConfig) -> float:
    """Deterministic (inference-mode, unclamped) MSE over the given samples."""
    if not samples:
        raise UsageError("evaluate_mse needs at least one sample")
    total = 0.0
    for s in samples:
        out = model_forward(s, params, cfg, training=False)
        total += T.mse(out, s.targets.as_array().reshape(1, -1)).item()
    return total / len(samples)


def predict_matrix(samples: Sequence[VideoSample], params: ModelParams,
                   cfg: ModelConfig) -> np.ndarray:
    """Clamped inference predictions, one row per video."""
    rows = []
    for s in samples:
        out = model_forward(s, params, cfg, training=False)
        rows.append(np.clip(out.data.reshape(-1), 0.0, 1.0))
    return np.asarray(rows)


def targets_matrix(samples: Sequence[VideoSample]) -> np.ndarray:
    return np.asarray([s.targets.as_array() for s in samples], dtype=np.float64)


def split_samples(samples: Sequence[VideoSample]) -> dict[str, list[VideoSample]]:
    out: dict[str, list[VideoSample]] = {"train": [], "val": [], "test": []}
    for s in samples:
        if s.split not in out:
            raise UsageError(f"sample {s.video_id} has unknown split {s.split!r}")
        out[s.split].append(s)
    return out


def train(samples: Sequence[VideoSample], cfg: TrainConfig,
          model_cfg: ModelConfig,
          params: Optional[ModelParams] = None) -> tuple[ModelParams, TrainReport]:
    """Minimize trait MSE on the train split, monitoring the val split.

    Returns the trained parameters and the per-epoch report. Deterministic
    given `cfg.seed`: parameter init, batch shuffling and dropout all draw
    from streams derived from it.
    """
    if cfg.disabled:
        model_cfg = model_cfg.with_disabled(set(cfg.disabled))
    splits = split_samples(samples)
    train_set = splits["train"]
    val_set = splits["val"] or train_set
    if not train_set:
        raise UsageError("training needs a non-empty train split")

    if params is None:
        params = init_model_params(
            model_cfg, np.random.default_rng(np.random.SeedSequence([cfg.seed, 0])))
    dropout_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))

    named = params.named_parameters()
    optimizer = Adam(named)
    scheduler = PlateauScheduler(cfg.learning_rate, cfg.patience, cfg.factor,
                                 cfg.improvement_threshold)
    report = TrainReport(seed=cfg.seed)
    report.initial_val_mse = evaluate_mse(val_set, params, model_cfg)
    scheduler.prime(report.initial_val_mse)

    targets = {id(s): s.targets.as_array().reshape(1, -1) for s in samples}
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        train_mse_start = evaluate_mse(train_set, params, model_cfg)
        if cfg.target_train_mse is not None and train_mse_start < cfg.target_train_mse:
            report.final_train_mse = train_mse_start
            epoch -= 1
            break
        lr_used = scheduler.lr

        order = shuffle_rng.permutation(len(train_set))
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_set[i] for i in order[start:start + cfg.batch_size]]
            with Tape() as tape:
                losses = [
                    T.mse(model_forward(s, params, model_cfg, training=True,
                                        rng=dropout_rng), targets[id(s)])
                    for s in batch
                ]
                loss = losses[0]
                for extra in losses[1:]:
                    loss = T.add(loss, extra)
                loss = T.scale(loss, 1.0 / len(batch))
                tape.backward(loss)
                grads = {name: tape.grad(p) for name, p in named.items()}
            optimizer.step(grads, lr_used)

        val_mse = evaluate_mse(val_set, params, model_cfg)
        scheduler.step(val_mse)

        report.epochs.append(epoch)
        report.train_mse.append(train_mse_start)
        report.val_mse.append(val_mse)
        report.lr.append(lr_used)

    report.epochs_run = len(report.epochs)
    if math.isnan(report.final_train_mse):
        report.final_train_mse = evaluate_mse(train_set, params, model_cfg)
    report.final_val_mse = evaluate_mse(val_set, params, model_cfg)
    per_trait, mean_acc = mean_accuracy(
        predict_matrix(val_set, params, model_cfg), targets_matrix(val_set))
    report.per_trait_accuracy = tuple(float(a) for a in per_trait)
    report.mean_accuracy = mean_acc
    return params, report


ABLATION_CONFIGS: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("full", ()),
    ("no_behaviour", ("behaviour",)),
    ("no_transcript", ("transcript",)),
    ("no_lstm", ("lstm",)),
    ("no_metadata", ("metadata",)),
)


def ablate(samples: Sequence[VideoSample], cfg: TrainConfig,
           model_cfg: ModelConfig,
           configs: Optional[Sequence[tuple[str, tuple[str, ...]]]] = None,
           eval_split: str = "test",
           first_config_index: int = 0) -> list[AblationReport]:
    """Train one fresh model per configuration and score it on `eval_split`.

    Configurations never share parameters or seeds with each other: each gets
    its own seed derived from the base seed and its position, so later models
    are in no way finetuned from earlier ones. `first_config_index` keeps the
    seed assignment stable when configurations are dispatched one at a time.
    """
    known = {"behaviour", "transcript", "metadata", "lstm"}
    configs = list(configs if configs is not None else ABLATION_CONFIGS)
    for _, disabled in configs:
        unknown = set(disabled) - known
        if unknown:
            raise ParameterError(f"unknown ablation inputs: {sorted(unknown)}")
    splits = split_samples(samples)
    eval_set = splits[eval_split] or splits["val"] or splits["train"]

    reports = []
    for i, (name, disabled) in enumerate(configs):
        run_seed = cfg.seed + 1000 * (first_config_index + i + 1)
        run_cfg = TrainConfig(
            batch_size=cfg.batch_size,
            learning_rate=cfg.learning_rate,
            max_epochs=cfg.max_epochs,
            seed=run_seed,
            patience=cfg.patience,
            factor=cfg.factor,
            improvement_threshold=cfg.improvement_threshold,
            target_train_mse=cfg.target_train_mse,
            disabled=tuple(disabled),
        )
        ablated_cfg = model_cfg.with_disabled(set(disabled))
        params, train_report = train(samples, run_cfg, model_cfg)
        per_trait, mean_acc = mean_accuracy(
            predict_matrix(eval_set, params, ablated_cfg),
            targets_matrix(eval_set))
        reports.append(AblationReport(
            name=name,
            disabled=tuple(disabled),
            final_val_mse=train_report.final_val_mse,
            per_trait_accuracy=tuple(float(a) for a in per_trait),
            mean_accuracy=mean_acc,
            epochs_run=train_report.epochs_run,
            seed=run_seed,
            train_report=train_report,
        ))
    return reports
