# recps/services/training.py
# Shared mini-batch training loop for every model family
import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Union

import numpy as np

from recps.models.base import RecModel
from recps.models.optim import make_optimizer
from recps.models.registry import build_model
from recps.schemas.interaction import LabeledExample
from recps.schemas.training import TrainConfig
from recps.services.dataset import VALIDATION, InteractionDataset, TrainingExamples, sample_negatives
from recps.services.ranking import hit_rate
from recps.utils.exceptions import EmptyDatasetError, TrainingDivergedError

logger = logging.getLogger(__name__)


@dataclass
class TrainingHistory:
    """Per-epoch record of one training run."""

    losses: List[float] = field(default_factory=list)
    validation_hr: List[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    @property
    def epochs(self) -> int:
        return len(self.losses)


@dataclass
class TrainingResult:
    model: RecModel
    history: TrainingHistory


def as_examples(examples: Union[TrainingExamples, Iterable[LabeledExample]]) -> TrainingExamples:
    if isinstance(examples, TrainingExamples):
        return examples
    rows = [(ex.user, ex.item, ex.label) for ex in examples]
    data = np.asarray(rows, dtype=np.int64).reshape(-1, 3)
    return TrainingExamples(users=data[:, 0], items=data[:, 1], labels=data[:, 2].astype(np.int8))


def fit_model(
    family: str,
    ds: InteractionDataset,
    examples: Union[TrainingExamples, Iterable[LabeledExample]],
    cfg: TrainConfig,
) -> TrainingResult:
    """
    Train a fresh model of `family` with binary cross-entropy.

    Examples are reshuffled every epoch with a generator seeded from cfg.seed,
    so a fixed config always yields the same parameters. With patience > 0 and
    a validation split present, training stops after `patience` epochs
    without a validation HR@eval_k improvement and the best epoch's parameters
    are restored.

    Raises:
        TrainingDivergedError: loss or gradient becomes non-finite
    """
    examples = as_examples(examples)
    if len(examples) == 0:
        raise EmptyDatasetError("No training examples", {"family": family})

    rng = np.random.default_rng(cfg.seed)
    model = build_model(family, ds, cfg, rng)
    model.check_ids(examples.users, examples.items)
    optimizer = make_optimizer(cfg.optimizer, cfg.learning_rate)

    users = examples.users.astype(np.int64)
    items = examples.items.astype(np.int64)
    labels = examples.labels.astype(np.float64)
    n = labels.shape[0]

    early_stopping = cfg.patience > 0 and ds.split_positions(VALIDATION).size > 0
    history = TrainingHistory()
    best_hr = -np.inf
    best_params = None
    stale = 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for batch, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            loss, grads = model.loss_and_grads(users[idx], items[idx], labels[idx])
            if not np.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.values()):
                raise TrainingDivergedError(epoch, batch, loss)
            optimizer.step(model, grads)
            total += loss * idx.size
        history.losses.append(total / n)

        if not early_stopping:
            logger.debug(f"{family} epoch {epoch}: loss={history.losses[-1]:.6f}")
            continue

        hr = hit_rate(model, ds, VALIDATION, cfg.eval_k)
        history.validation_hr.append(hr)
        logger.debug(f"{family} epoch {epoch}: loss={history.losses[-1]:.6f} val_hr@{cfg.eval_k}={hr:.4f}")
        if hr > best_hr:
            best_hr, best_params, stale = hr, model.copy_params(), 0
            history.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                history.stopped_early = True
                break

    if best_params is not None:
        model.load_params(best_params)
    else:
        history.best_epoch = history.epochs
    return TrainingResult(model=model, history=history)


def train(
    family: str,
    ds: InteractionDataset,
    examples: Union[TrainingExamples, Iterable[LabeledExample]],
    cfg: TrainConfig,
) -> RecModel:
    """Train a model and return it; see fit_model for the loop and its history."""
    result = fit_model(family, ds, examples, cfg)
    logger.debug(
        f"Trained {family} for {result.history.epochs} epochs (best epoch {result.history.best_epoch})"
    )
    return result.model


def train_on_dataset(family: str, ds: InteractionDataset, cfg: TrainConfig, seed: Optional[int] = None) -> RecModel:
    """Sample negatives from ds's TRAIN split and train; the negative draw uses `seed` (default cfg.seed)."""
    examples = sample_negatives(ds, cfg.negative_ratio, cfg.seed if seed is None else seed)
    return train(family, ds, examples, cfg)
