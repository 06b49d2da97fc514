# recps/models/base.py
# Interaction-probability recommender models: the binary-classifier view
import logging
from abc import ABC, abstractmethod
from typing import Any, ClassVar, Dict, Iterable, List, Optional, Tuple

import numpy as np
from scipy.special import expit

from recps.schemas.training import TrainConfig
from recps.utils.exceptions import EvaluationError, VocabularyError

logger = logging.getLogger(__name__)

# Users per chunk when materialising the full user x item probability matrix
SCORE_CHUNK = 512


def bce_with_logits(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy computed from logits without overflow."""
    return float(np.mean(np.logaddexp(0.0, logits) - labels * logits))


def uniform_init(rng: np.random.Generator, shape: Tuple[int, ...], scale: float) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)


class RecModel(ABC):
    """
    A trained (or trainable) model mapping (user, item) to an interaction
    probability. Trainable tensors live in `params`; fixed tensors such as
    the LightGCN edge list live in `buffers`.
    """

    family: ClassVar[str]

    def __init__(
        self,
        num_users: int,
        num_items: int,
        dim: int,
        params: Dict[str, np.ndarray],
        buffers: Optional[Dict[str, np.ndarray]] = None,
        layers: int = 0,
    ):
        self.num_users = int(num_users)
        self.num_items = int(num_items)
        self.dim = int(dim)
        self.layers = int(layers)
        self.params = {name: np.array(value, dtype=np.float64) for name, value in params.items()}
        self.buffers = dict(buffers or {})
        self._cache: Dict[str, Any] = {}
        self._check_shapes()

    @classmethod
    @abstractmethod
    def initialise(
        cls,
        num_users: int,
        num_items: int,
        cfg: TrainConfig,
        rng: np.random.Generator,
        edges: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    ) -> "RecModel":
        """Fresh model with seeded uniform(-init_scale, init_scale) parameters."""

    @abstractmethod
    def logits(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        """Pre-sigmoid scores for aligned user/item id arrays."""

    @abstractmethod
    def loss_and_grads(
        self, users: np.ndarray, items: np.ndarray, labels: np.ndarray
    ) -> Tuple[float, Dict[str, np.ndarray]]:
        """Mean BCE over the batch and its gradient for every parameter."""

    @property
    def user_embeddings(self) -> np.ndarray:
        return self.params["user_embeddings"]

    @property
    def item_embeddings(self) -> np.ndarray:
        return self.params["item_embeddings"]

    def layer_widths(self) -> List[int]:
        return []

    def _check_shapes(self) -> None:
        expected = {
            "user_embeddings": (self.num_users, self.dim),
            "item_embeddings": (self.num_items, self.dim),
        }
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ValueError(f"{name} has shape {self.params[name].shape}, expected {shape}")

    def invalidate(self) -> None:
        """Drop cached forward results after the parameters changed."""
        self._cache.clear()

    def check_ids(self, users: np.ndarray, items: np.ndarray) -> None:
        users = np.asarray(users)
        items = np.asarray(items)
        if users.size and (users.min() < 0 or users.max() >= self.num_users):
            raise VocabularyError(
                f"User id outside model vocabulary of {self.num_users} users",
                {"num_users": self.num_users},
            )
        if items.size and (items.min() < 0 or items.max() >= self.num_items):
            raise VocabularyError(
                f"Item id outside model vocabulary of {self.num_items} items",
                {"num_items": self.num_items},
            )

    def predict_many(self, users: Iterable[int], items: Iterable[int]) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64).ravel()
        items = np.asarray(items, dtype=np.int64).ravel()
        self.check_ids(users, items)
        return expit(self.logits(users, items))

    def score_matrix(self) -> np.ndarray:
        """Probabilities for every (user, item) pair, shape (num_users, num_items)."""
        scores = np.empty((self.num_users, self.num_items))
        all_items = np.arange(self.num_items)
        for start in range(0, self.num_users, SCORE_CHUNK):
            chunk = np.arange(start, min(start + SCORE_CHUNK, self.num_users))
            users = np.repeat(chunk, self.num_items)
            items = np.tile(all_items, chunk.size)
            scores[chunk] = expit(self.logits(users, items)).reshape(chunk.size, self.num_items)
        return scores

    def copy_params(self) -> Dict[str, np.ndarray]:
        return {name: value.copy() for name, value in self.params.items()}

    def load_params(self, params: Dict[str, np.ndarray]) -> None:
        for name, value in params.items():
            self.params[name][...] = value
        self.invalidate()


def predict(model: RecModel, user: int, item: int) -> float:
    """Interaction probability for one (user, item) pair, always in [0, 1]."""
    return float(model.predict_many([user], [item])[0])


def top_k(model: RecModel, user: int, candidates: Iterable[int], k: int) -> List[int]:
    """
    Rank candidate items for a user.

    Returns the k items with the highest predicted probability, ties broken by
    ascending item id.
    """
    candidates = np.unique(np.asarray(list(candidates), dtype=np.int64))
    if candidates.size == 0:
        raise EvaluationError("top_k needs a non-empty candidate set", {"user": int(user)})
    if not 1 <= k <= candidates.size:
        raise EvaluationError(
            f"k={k} must lie in [1, {candidates.size}]",
            {"user": int(user), "k": int(k), "candidates": int(candidates.size)},
        )
    probabilities = model.predict_many(np.full(candidates.size, user), candidates)
    order = np.lexsort((candidates, -probabilities))
    return [int(item) for item in candidates[order[:k]]]
