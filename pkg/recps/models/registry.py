# recps/models/registry.py
from typing import Dict, Optional, Type

import numpy as np

from recps.models.base import RecModel
from recps.models.lightgcn import LightGCN
from recps.models.mf import MatrixFactorization
from recps.models.ncf import NeuralCF
from recps.schemas.training import TrainConfig
from recps.utils.exceptions import ConfigError

FAMILIES: Dict[str, Type[RecModel]] = {
    MatrixFactorization.family: MatrixFactorization,
    NeuralCF.family: NeuralCF,
    LightGCN.family: LightGCN,
}


def model_class(family: str) -> Type[RecModel]:
    try:
        return FAMILIES[family]
    except KeyError:
        raise ConfigError(
            f"Unknown model family '{family}'; expected one of {sorted(FAMILIES)}",
            field="family",
            value=family,
        )


def build_model(family: str, ds, cfg: TrainConfig, rng: Optional[np.random.Generator] = None) -> RecModel:
    """
    Fresh model sized to the dataset vocabularies.

    LightGCN propagates over the TRAIN interactions of ds only.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    train_rows = ds.member_positions()
    edges = (ds.users[train_rows], ds.items[train_rows])
    return model_class(family).initialise(ds.num_users, ds.num_items, cfg, rng, edges=edges)
