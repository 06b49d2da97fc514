# recps/models/lightgcn.py
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from recps.models.base import RecModel, bce_with_logits, uniform_init
from recps.schemas.training import TrainConfig


def normalized_adjacency(
    num_users: int, num_items: int, edge_users: np.ndarray, edge_items: np.ndarray
) -> sp.csr_matrix:
    """
    Symmetric-normalised bipartite adjacency D^-1/2 A D^-1/2 over the
    (num_users + num_items) nodes; users first, then items.
    """
    n = num_users + num_items
    rows = np.concatenate([edge_users, edge_items + num_users])
    cols = np.concatenate([edge_items + num_users, edge_users])
    adjacency = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    degree = np.asarray(adjacency.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(degree)
    np.power(degree, -0.5, out=inv_sqrt, where=degree > 0)
    scale = sp.diags(inv_sqrt)
    return (scale @ adjacency @ scale).tocsr()


class LightGCN(RecModel):
    """
    LightGCN: layer-0 embeddings propagated L times over the normalised
    interaction graph, averaged uniformly over layers 0..L; p = sigmoid of the
    inner product of the final user and item embeddings.
    """

    family = "lightgcn"

    @classmethod
    def initialise(
        cls,
        num_users: int,
        num_items: int,
        cfg: TrainConfig,
        rng: np.random.Generator,
        edges: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    ) -> "LightGCN":
        params = {
            "user_embeddings": uniform_init(rng, (num_users, cfg.dim), cfg.init_scale),
            "item_embeddings": uniform_init(rng, (num_items, cfg.dim), cfg.init_scale),
        }
        edge_users, edge_items = edges if edges is not None else (np.empty(0), np.empty(0))
        buffers = {
            "edge_users": np.asarray(edge_users, dtype=np.int64),
            "edge_items": np.asarray(edge_items, dtype=np.int64),
        }
        return cls(num_users, num_items, cfg.dim, params, buffers=buffers, layers=cfg.layers)

    @property
    def adjacency(self) -> sp.csr_matrix:
        if not hasattr(self, "_adjacency"):
            self._adjacency = normalized_adjacency(
                self.num_users,
                self.num_items,
                self.buffers.get("edge_users", np.empty(0, dtype=np.int64)),
                self.buffers.get("edge_items", np.empty(0, dtype=np.int64)),
            )
        return self._adjacency

    def layer_widths(self) -> list:
        return [self.dim] * (self.layers + 1)

    def _layer_mean(self, base: np.ndarray) -> np.ndarray:
        """(1/(L+1)) * sum_{l=0..L} A^l base; A is symmetric so this is also its adjoint."""
        current = base
        total = base.copy()
        for _ in range(self.layers):
            current = self.adjacency @ current
            total += current
        return total / (self.layers + 1)

    def propagate(self) -> Tuple[np.ndarray, np.ndarray]:
        if "final" not in self._cache:
            stacked = np.vstack([self.user_embeddings, self.item_embeddings])
            self._cache["final"] = self._layer_mean(stacked)
        final = self._cache["final"]
        return final[: self.num_users], final[self.num_users:]

    def logits(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        final_users, final_items = self.propagate()
        return np.einsum("nd,nd->n", final_users[users], final_items[items])

    def loss_and_grads(
        self, users: np.ndarray, items: np.ndarray, labels: np.ndarray
    ) -> Tuple[float, Dict[str, np.ndarray]]:
        final_users, final_items = self.propagate()
        user_vecs = final_users[users]
        item_vecs = final_items[items]
        logits = np.einsum("nd,nd->n", user_vecs, item_vecs)
        loss = bce_with_logits(logits, labels)

        g = (expit(logits) - labels) / labels.shape[0]
        grad_final = np.zeros((self.num_users + self.num_items, self.dim))
        np.add.at(grad_final, users, g[:, None] * item_vecs)
        np.add.at(grad_final, items + self.num_users, g[:, None] * user_vecs)
        grad_base = self._layer_mean(grad_final)
        return loss, {
            "user_embeddings": grad_base[: self.num_users],
            "item_embeddings": grad_base[self.num_users:],
        }

    def score_matrix(self) -> np.ndarray:
        final_users, final_items = self.propagate()
        return expit(final_users @ final_items.T)
