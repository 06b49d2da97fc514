# recps/services/ranking.py
import logging
from typing import Optional

import numpy as np

from recps.models.base import SCORE_CHUNK, RecModel
from recps.services.dataset import TEST, TRAIN, VALIDATION, InteractionDataset

logger = logging.getLogger(__name__)

# Splits whose items are removed from the candidate set when ranking a held-out split
EXCLUDED_SPLITS = {
    VALIDATION: (TRAIN,),
    TEST: (TRAIN, VALIDATION),
}


def held_out_ranks(
    model: RecModel, ds: InteractionDataset, split: int, scores: Optional[np.ndarray] = None
) -> np.ndarray:
    """
    0-based rank of every held-out interaction of `split` among its user's
    candidates (all items minus the user's excluded splits). Ties are broken
    by ascending item id, as in top_k.
    """
    held = ds.split_positions(split)
    if held.size == 0:
        return np.empty(0, dtype=np.int64)
    if scores is None:
        scores = model.score_matrix()
    masked = np.array(scores, dtype=np.float64)
    excluded = np.flatnonzero(np.isin(ds.split, EXCLUDED_SPLITS[split]))
    masked[ds.users[excluded], ds.items[excluded]] = -np.inf

    users = ds.users[held]
    items = ds.items[held]
    item_ids = np.arange(ds.num_items)
    ranks = np.empty(held.size, dtype=np.int64)
    for start in range(0, held.size, SCORE_CHUNK):
        stop = min(start + SCORE_CHUNK, held.size)
        rows = masked[users[start:stop]]
        target = rows[np.arange(stop - start), items[start:stop]][:, None]
        ahead = (rows > target) | ((rows == target) & (item_ids[None, :] < items[start:stop, None]))
        ranks[start:stop] = ahead.sum(axis=1)
    return ranks


def hit_rate(
    model: RecModel, ds: InteractionDataset, split: int, k: int, scores: Optional[np.ndarray] = None
) -> float:
    """Share of held-out interactions of `split` ranked inside the top k; nan if the split is empty."""
    ranks = held_out_ranks(model, ds, split, scores)
    if ranks.size == 0:
        return float("nan")
    return float(np.mean(ranks < k))
