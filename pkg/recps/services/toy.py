# recps/services/toy.py
# Bundled synthetic interaction log for desk-scale runs and tests
import logging
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd

from recps.services.dataset import InteractionDataset, dataset_from_frame

logger = logging.getLogger(__name__)

TOY_CLUSTERS = 4
TOY_START = 978_300_000


def toy_frame(
    num_users: int = 200,
    num_items: int = 100,
    seed: int = 0,
    min_per_user: int = 21,
    max_per_user: int = 40,
) -> pd.DataFrame:
    """
    Interaction rows with planted structure: Zipf item popularity, four taste
    clusters (items of a user's own cluster are 3x as likely), strictly
    increasing per-user timestamps.
    """
    rng = np.random.default_rng(seed)
    max_per_user = min(max_per_user, num_items - 1)
    min_per_user = min(min_per_user, max_per_user)

    popularity = 1.0 / np.power(rng.permutation(num_items) + 1.0, 0.8)
    item_cluster = rng.integers(0, TOY_CLUSTERS, size=num_items)
    user_cluster = rng.integers(0, TOY_CLUSTERS, size=num_users)

    rows = []
    for user in range(num_users):
        weights = popularity * np.where(item_cluster == user_cluster[user], 3.0, 1.0)
        count = int(rng.integers(min_per_user, max_per_user + 1))
        items = rng.choice(num_items, size=count, replace=False, p=weights / weights.sum())
        clock = TOY_START + int(rng.integers(0, 86_400)) + np.cumsum(rng.integers(60, 3_600, size=count))
        ratings = rng.integers(1, 6, size=count)
        for item, ts, rating in zip(items, clock, ratings):
            rows.append((f"u{user + 1:04d}", f"i{item + 1:04d}", float(rating), int(ts)))
    return pd.DataFrame(rows, columns=["user", "item", "rating", "timestamp"])


def generate_toy_dataset(num_users: int = 200, num_items: int = 100, seed: int = 0) -> InteractionDataset:
    dataset = dataset_from_frame(toy_frame(num_users, num_items, seed))
    logger.debug(f"Generated toy dataset with {len(dataset)} interactions")
    return dataset


def write_toy_dataset(path: Union[str, Path], num_users: int = 200, num_items: int = 100, seed: int = 0) -> Path:
    """Write the toy log as a plain TSV with a header row, readable by ingest()."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = toy_frame(num_users, num_items, seed)
    frame["rating"] = frame["rating"].astype(int)
    frame.to_csv(path, sep="\t", index=False, lineterminator="\n")
    logger.info(f"Wrote toy dataset ({len(frame)} interactions) to {path}")
    return path
