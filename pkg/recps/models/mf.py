# recps/models/mf.py
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import expit

from recps.models.base import RecModel, bce_with_logits, uniform_init
from recps.schemas.training import TrainConfig


class MatrixFactorization(RecModel):
    """Logistic matrix factorisation: p(u, i) = sigmoid(<P_u, Q_i>)."""

    family = "mf-logit"

    @classmethod
    def initialise(
        cls,
        num_users: int,
        num_items: int,
        cfg: TrainConfig,
        rng: np.random.Generator,
        edges: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    ) -> "MatrixFactorization":
        params = {
            "user_embeddings": uniform_init(rng, (num_users, cfg.dim), cfg.init_scale),
            "item_embeddings": uniform_init(rng, (num_items, cfg.dim), cfg.init_scale),
        }
        return cls(num_users, num_items, cfg.dim, params)

    def logits(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        return np.einsum("nd,nd->n", self.user_embeddings[users], self.item_embeddings[items])

    def loss_and_grads(
        self, users: np.ndarray, items: np.ndarray, labels: np.ndarray
    ) -> Tuple[float, Dict[str, np.ndarray]]:
        user_vecs = self.user_embeddings[users]
        item_vecs = self.item_embeddings[items]
        logits = np.einsum("nd,nd->n", user_vecs, item_vecs)
        loss = bce_with_logits(logits, labels)

        # d(mean BCE)/d(logit)
        g = (expit(logits) - labels) / labels.shape[0]
        grad_users = np.zeros_like(self.user_embeddings)
        grad_items = np.zeros_like(self.item_embeddings)
        np.add.at(grad_users, users, g[:, None] * item_vecs)
        np.add.at(grad_items, items, g[:, None] * user_vecs)
        return loss, {"user_embeddings": grad_users, "item_embeddings": grad_items}

    def score_matrix(self) -> np.ndarray:
        return expit(self.user_embeddings @ self.item_embeddings.T)
