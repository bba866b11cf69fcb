"""Training loops: source training and the fine-tuning transfer recipe."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError
from .net import (
    DEFAULT_GRAD_CLIP,
    ModelConfig,
    ModelParams,
    adam_step,
    backward,
    clip_gradients,
    init_model,
    init_optimizer,
    model_forward,
    mse_loss,
)
from .series import WindowSet


@dataclass(frozen=True)
class TrainConfig:
    """Knobs of one training run.

    The fine-tuning default learning rate is the source default divided
    by 100, per the transfer recipe.
    """

    learning_rate: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    freeze_first_layer: bool = False
    grad_clip: float = DEFAULT_GRAD_CLIP

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be positive")
        if self.patience < 0:
            raise ConfigError("patience must be non-negative")

    @classmethod
    def finetune_defaults(cls, **overrides) -> "TrainConfig":
        overrides.setdefault("learning_rate", 1e-6)
        overrides.setdefault("freeze_first_layer", True)
        return cls(**overrides)


@dataclass
class TrainHistory:
    """Per-epoch record of one run, including the selected best epoch."""

    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    wall_time_s: float = 0.0

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss"])
            for e, (tr, va) in enumerate(zip(self.train_loss, self.val_loss)):
                writer.writerow([e, repr(tr), repr(va)])


def validation_loss(params: ModelParams, config: ModelConfig,
                    windows: WindowSet) -> float:
    """Inference-mode MSE over a window set."""
    X, Y = windows.as_arrays()
    pred = model_forward(params, config, X, mode="infer")
    return mse_loss(pred, Y)


def _run_epochs(params, config, tc, train_windows, val_windows, frozen):
    start = time.monotonic()
    X, Y = train_windows.as_arrays()
    n = X.shape[0]
    opt = init_optimizer(params, frozen=frozen)
    rng = np.random.default_rng(tc.seed)
    history = TrainHistory()

    best_params = params.copy()
    best_val = np.inf
    epochs_since_best = 0
    for epoch in range(tc.max_epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for lo in range(0, n, tc.batch_size):
            batch = order[lo:lo + tc.batch_size]
            dropout_seed = int(rng.integers(0, 2 ** 63 - 1))
            try:
                grads, loss = backward(params, config, X[batch], Y[batch],
                                       seed=dropout_seed)
            except NumericalError as exc:
                raise NumericalError(
                    f"training diverged at epoch {epoch}: {exc}") from exc
            if not np.isfinite(loss):
                raise NumericalError(f"training diverged at epoch {epoch}")
            clip_gradients(grads, tc.grad_clip)
            adam_step(params, grads, opt, tc.learning_rate)
            epoch_losses.append(loss)

        val = validation_loss(params, config, val_windows)
        history.train_loss.append(float(np.mean(epoch_losses)))
        history.val_loss.append(val)
        if val < best_val:
            best_val = val
            best_params = params.copy()
            history.best_epoch = epoch
            epochs_since_best = 0
        else:
            epochs_since_best += 1
        # patience 0 stops after the first epoch by construction
        if epochs_since_best >= tc.patience:
            break
    history.wall_time_s = time.monotonic() - start
    return best_params, history


def train_model(config: ModelConfig, tc: TrainConfig,
                train_windows: WindowSet, val_windows: WindowSet):
    """Train from scratch; returns the best-validation-epoch parameters."""
    if len(train_windows) == 0:
        raise ConfigError("training window set is empty")
    if len(val_windows) == 0:
        raise ConfigError("validation window set is empty")
    params = init_model(config, seed=tc.seed)
    return _run_epochs(params, config, tc, train_windows, val_windows,
                       frozen=frozenset())


def finetune_model(source: ModelParams, config: ModelConfig, tc: TrainConfig,
                   target_train: WindowSet, target_val: WindowSet):
    """Fine-tune a source model on target windows.

    The first LSTM layer stays frozen (unless disabled) and the learning
    rate is expected to be the source rate reduced 100-fold. An empty
    target train set is the direct-application case: the source
    parameters are returned untouched.
    """
    if len(target_train) == 0:
        return source.copy(), TrainHistory()
    if len(target_val) == 0:
        raise ConfigError("validation window set is empty")
    if target_train.feature_count() != config.input_features:
        raise ConfigError(
            f"target windows have {target_train.feature_count()} features, "
            f"source model expects {config.input_features}")
    frozen = frozenset()
    if tc.freeze_first_layer:
        frozen = frozenset(name for name, _ in source.tensors()
                           if name.startswith("layer0."))
    return _run_epochs(source.copy(), config, tc, target_train, target_val,
                       frozen=frozen)
