"""Feature scaling, 70/30 splitting, the mini-batch training loop and the two-regime protocol."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .collocation import Sample
from .metrics import ErrorStats, compute_stats
from .nn.model import (
    AdamState, Model, ScalingParams, default_architecture, model_adam_step, mse_loss,
)
from .stations import EXTREME_THRESHOLD

log = logging.getLogger(__name__)

REGIMES = ("all", "extreme")


class TooFewSamplesError(ValueError):
    pass


class NonFiniteLossError(ArithmeticError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.003
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    regime: str = "all"
    dropout_p: float = 0.25
    split: str = "random"  # or "temporal"
    threshold: float = EXTREME_THRESHOLD

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.split not in ("random", "temporal"):
            raise ValueError(f"unknown split mode {self.split!r}")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    heldout_rmse: list[float] = field(default_factory=list)

    def rows(self):
        return [(i + 1, loss, rmse) for i, (loss, rmse)
                in enumerate(zip(self.train_loss, self.heldout_rmse))]

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,heldout_rmse"]
        lines += [f"{e},{loss!r},{rmse!r}" for e, loss, rmse in self.rows()]
        return "\n".join(lines) + "\n"


@dataclass
class TrainResult:
    model: Model
    history: TrainHistory
    train_idx: np.ndarray  # indices into the regime-filtered sample list
    test_idx: np.ndarray
    regime_samples: list[Sample]
    regime: str = "all"

    @property
    def test_samples(self) -> list[Sample]:
        return [self.regime_samples[i] for i in self.test_idx]

    @property
    def train_samples(self) -> list[Sample]:
        return [self.regime_samples[i] for i in self.train_idx]


def fit_scaler(samples: Sequence[Sample]) -> ScalingParams:
    if not samples:
        raise ValueError("cannot fit a scaler on no samples")
    lo = min(float(np.min(s.patch)) for s in samples)
    hi = max(float(np.max(s.patch)) for s in samples)
    if not hi > lo:
        raise ValueError(f"degenerate scaling range: every patch cell equals {lo}")
    return ScalingParams(lo, hi)


def apply_scaler(patch, params: ScalingParams):
    """Min-max scale to [0, 1] over the training range; no clipping outside it."""
    return (np.asarray(patch, dtype=np.float64) - params.min) / (params.max - params.min)


def split_70_30(n: int, seed: int, train_fraction: float = 0.7):
    """Seeded shuffle; the first floor(0.7 n) indices train, the rest test."""
    if n < 2:
        raise ValueError("need at least 2 samples to split")
    perm = np.random.default_rng(seed).permutation(n)
    k = int(np.floor(train_fraction * n))
    return np.sort(perm[:k]), np.sort(perm[k:])


def split_temporal(dates: Sequence, train_fraction: float = 0.7):
    """Chronological alternative: earliest 70% train (stable within equal dates)."""
    n = len(dates)
    if n < 2:
        raise ValueError("need at least 2 samples to split")
    order = sorted(range(n), key=lambda i: dates[i])
    k = int(np.floor(train_fraction * n))
    return np.sort(np.array(order[:k], dtype=int)), np.sort(np.array(order[k:], dtype=int))


def filter_regime(samples: Sequence[Sample], regime: str,
                  threshold: float = EXTREME_THRESHOLD) -> list[Sample]:
    if regime == "all":
        return list(samples)
    if regime == "extreme":
        return [s for s in samples if s.target > threshold]
    raise ValueError(f"unknown regime {regime!r}")


def stack_inputs(samples: Sequence[Sample], scaler: ScalingParams) -> np.ndarray:
    x = np.stack([s.patch for s in samples]).astype(np.float64)
    return apply_scaler(x, scaler)[:, None, :, :]


def split_for(samples: Sequence[Sample], config: TrainConfig):
    if config.split == "temporal":
        return split_temporal([s.date for s in samples])
    return split_70_30(len(samples), config.seed)


def _predict(model: Model, x: np.ndarray, batch: int = 256) -> np.ndarray:
    return np.concatenate([model.predict(x[i:i + batch]) for i in range(0, len(x), batch)])


def train(samples: Sequence[Sample], config: TrainConfig = TrainConfig()) -> TrainResult:
    pool = filter_regime(samples, config.regime, config.threshold)
    if len(pool) < 2 * config.batch_size:
        raise TooFewSamplesError(
            f"regime {config.regime!r} has {len(pool)} samples; "
            f"need at least {2 * config.batch_size}"
        )
    train_idx, test_idx = split_for(pool, config)
    train_set = [pool[i] for i in train_idx]
    test_set = [pool[i] for i in test_idx]

    scaler = fit_scaler(train_set)
    model = default_architecture(config.seed, dropout_p=config.dropout_p)
    model.scaler = scaler
    model.meta = {"regime": config.regime, "seed": config.seed, "split": config.split,
                  "threshold": config.threshold, "n_samples": len(pool)}

    x_train = stack_inputs(train_set, scaler)
    y_train = np.array([s.target for s in train_set])[:, None]
    x_test = stack_inputs(test_set, scaler)
    y_test = np.array([s.target for s in test_set])

    rng = np.random.default_rng([config.seed, 1])
    state = AdamState(lr=config.lr)
    history = TrainHistory()
    n = len(train_set)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            pred, cache = model.forward(x_train[idx], train=True, rng=rng)
            loss, grad = mse_loss(pred, y_train[idx])
            if not np.isfinite(loss):
                raise NonFiniteLossError(f"non-finite loss at epoch {epoch}, batch {b + 1}")
            model_adam_step(model, model.backward(cache, grad), state)
            total += loss * len(idx)
        held = compute_stats(_predict(model, x_test), y_test).rmse
        history.train_loss.append(total / n)
        history.heldout_rmse.append(held)
        log.info("epoch %d/%d loss %.5f heldout_rmse %.5f", epoch, config.epochs, total / n, held)
    return TrainResult(model, history, train_idx, test_idx, pool, config.regime)


def train_two_regimes(samples: Sequence[Sample], config: TrainConfig = TrainConfig()):
    """Independent 'all' and 'extreme' models; never combined at inference."""
    return (train(samples, replace(config, regime="all")),
            train(samples, replace(config, regime="extreme")))


@dataclass
class Evaluation:
    predictions: np.ndarray
    stats: ErrorStats
    negative_count: int
    regime: str | None = None

    def to_dict(self):
        return {"regime": self.regime, "stats": asdict(self.stats),
                "negative_predictions": self.negative_count}


def evaluate(model: Model, samples: Sequence[Sample]) -> Evaluation:
    if model.scaler is None:
        raise ValueError("model has no feature scaler")
    if not samples:
        raise ValueError("no samples to evaluate")
    preds = _predict(model, stack_inputs(samples, model.scaler))
    stats = compute_stats(preds, [s.target for s in samples])
    return Evaluation(preds, stats, int(np.sum(preds < 0)), model.meta.get("regime"))
