# recps/models/ncf.py
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit

from recps.models.base import RecModel, bce_with_logits, uniform_init
from recps.schemas.training import TrainConfig


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, x)


class NeuralCF(RecModel):
    """
    NCF (MLP tower): concat(P_u, Q_i) -> Dense(dim) -> ReLU -> Dense(dim/2)
    -> ReLU -> Dense(1) -> sigmoid. Layer widths [2*dim, dim, dim/2, 1].
    """

    family = "ncf"

    @staticmethod
    def hidden_width(dim: int) -> int:
        return max(dim // 2, 1)

    @classmethod
    def initialise(
        cls,
        num_users: int,
        num_items: int,
        cfg: TrainConfig,
        rng: np.random.Generator,
        edges: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    ) -> "NeuralCF":
        d, h, s = cfg.dim, cls.hidden_width(cfg.dim), cfg.init_scale
        params = {
            "user_embeddings": uniform_init(rng, (num_users, d), s),
            "item_embeddings": uniform_init(rng, (num_items, d), s),
            "mlp_w1": uniform_init(rng, (2 * d, d), s),
            "mlp_b1": np.zeros(d),
            "mlp_w2": uniform_init(rng, (d, h), s),
            "mlp_b2": np.zeros(h),
            "mlp_w3": uniform_init(rng, (h, 1), s),
            "mlp_b3": np.zeros(1),
        }
        return cls(num_users, num_items, d, params)

    def layer_widths(self) -> List[int]:
        return [2 * self.dim, self.dim, self.hidden_width(self.dim), 1]

    def _forward(self, users: np.ndarray, items: np.ndarray):
        p = self.params
        x = np.concatenate([self.user_embeddings[users], self.item_embeddings[items]], axis=1)
        z1 = x @ p["mlp_w1"] + p["mlp_b1"]
        a1 = relu(z1)
        z2 = a1 @ p["mlp_w2"] + p["mlp_b2"]
        a2 = relu(z2)
        out = (a2 @ p["mlp_w3"] + p["mlp_b3"])[:, 0]
        return out, (x, z1, a1, z2, a2)

    def logits(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        return self._forward(users, items)[0]

    def loss_and_grads(
        self, users: np.ndarray, items: np.ndarray, labels: np.ndarray
    ) -> Tuple[float, Dict[str, np.ndarray]]:
        p = self.params
        logits, (x, z1, a1, z2, a2) = self._forward(users, items)
        loss = bce_with_logits(logits, labels)

        dout = ((expit(logits) - labels) / labels.shape[0])[:, None]
        grads = {
            "mlp_w3": a2.T @ dout,
            "mlp_b3": dout.sum(axis=0),
        }
        dz2 = (dout @ p["mlp_w3"].T) * (z2 > 0)
        grads["mlp_w2"] = a1.T @ dz2
        grads["mlp_b2"] = dz2.sum(axis=0)
        dz1 = (dz2 @ p["mlp_w2"].T) * (z1 > 0)
        grads["mlp_w1"] = x.T @ dz1
        grads["mlp_b1"] = dz1.sum(axis=0)
        dx = dz1 @ p["mlp_w1"].T

        grad_users = np.zeros_like(self.user_embeddings)
        grad_items = np.zeros_like(self.item_embeddings)
        np.add.at(grad_users, users, dx[:, : self.dim])
        np.add.at(grad_items, items, dx[:, self.dim:])
        grads["user_embeddings"] = grad_users
        grads["item_embeddings"] = grad_items
        return loss, grads
