# recps/services/pipeline.py
# End-to-end preparation: dataset preprocessing, shadow ensemble and attacked target
import logging
from typing import Optional, Tuple

import numpy as np

from recps.schemas.run import RunConfig
from recps.services.attack_eval import build_evaluation_population
from recps.services.dataset import (
    TRAIN,
    InteractionDataset,
    filter_min_interactions,
    ingest,
    split_leave_two_out,
    split_users,
)
from recps.services.shadow import ShadowEnsemble, TargetRun, build_ensemble, shadow_subset
from recps.services.training import train_on_dataset
from recps.utils.exceptions import ConfigError
from recps.utils.hashing import derive_seed

logger = logging.getLogger(__name__)


def load_prepared_dataset(config: RunConfig) -> InteractionDataset:
    """Ingest, filter to users with more than min_interactions, then split leave-two-out."""
    if not config.dataset_path:
        raise ConfigError("No dataset given; pass a dataset path or set RECPS_DATASET_PATH", field="dataset_path")
    ds = ingest(config.dataset_path, config.dataset_format)
    if config.dataset_format != "canonical" or not (ds.split != TRAIN).any():
        ds = filter_min_interactions(ds, config.min_interactions)
        ds = split_leave_two_out(ds)
    return ds


def train_target(ds: InteractionDataset, config: RunConfig):
    """Target (or retrained) model on ds with the run's seed recipe."""
    seed = derive_seed(config.seed, "target-model")
    return train_on_dataset(config.family, ds, config.train_config(seed=seed), seed=derive_seed(seed, "negatives"))


def _member_pairs(ds: InteractionDataset, mask: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    rows = ds.member_positions()
    if mask is not None:
        rows = rows[mask]
    return ds.users[rows], ds.items[rows]


def prepare_run(ds: InteractionDataset, config: RunConfig) -> Tuple[ShadowEnsemble, TargetRun]:
    """
    Build the shadow ensemble and the attacked target for config.mode.

    self-audit: shadows are drawn from all of D; the target trains on a seeded
    Bernoulli(0.5) half of D and the other half are its non-members.
    attack: users are split into a target and a shadow population; shadows
    train on the shadow population, whose interactions are the non-members.
    """
    if config.mode == "self-audit":
        half = np.random.default_rng(derive_seed(config.seed, "target")).random(ds.member_positions().size) < 0.5
        ensemble_ds = ds
        target_ds = shadow_subset(ds, half)
        members, nonmembers = _member_pairs(ds, half), _member_pairs(ds, ~half)
    else:
        target_ds, ensemble_ds = split_users(ds, config.target_user_fraction, derive_seed(config.seed, "users"))
        members, nonmembers = _member_pairs(target_ds), _member_pairs(ensemble_ds)

    ensemble = build_ensemble(
        ensemble_ds,
        config.num_shadows,
        config.train_config(),
        config.seed,
        family=config.family,
        out_sample_cap=config.out_sample_cap,
        workers=config.workers,
    )
    ensemble.run_config = config.manifest_view()

    target_model = train_target(target_ds, config)
    users, items, labels = build_evaluation_population(
        members, nonmembers, config.eval_members, config.eval_nonmembers, config.seed
    )
    logger.info(f"Prepared {config.mode} run: target trained on {target_ds.member_positions().size} interactions")
    return ensemble, TargetRun(
        model=target_model, dataset=target_ds, eval_users=users, eval_items=items, eval_labels=labels
    )
