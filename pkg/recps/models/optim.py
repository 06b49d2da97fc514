# recps/models/optim.py
from typing import Dict

import numpy as np

from recps.models.base import RecModel
from recps.utils.exceptions import ConfigError


class SGD:
    """Plain stochastic gradient descent."""

    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate

    def step(self, model: RecModel, grads: Dict[str, np.ndarray]) -> None:
        for name, grad in grads.items():
            model.params[name] -= self.learning_rate * grad
        model.invalidate()


class Adam:
    """Dense Adam; moment buffers are allocated on the first step."""

    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: Dict[str, np.ndarray] = {}
        self._v: Dict[str, np.ndarray] = {}

    def step(self, model: RecModel, grads: Dict[str, np.ndarray]) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for name, grad in grads.items():
            if name not in self._m:
                self._m[name] = np.zeros_like(grad)
                self._v[name] = np.zeros_like(grad)
            m, v = self._m[name], self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            model.params[name] -= self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
        model.invalidate()


def make_optimizer(name: str, learning_rate: float):
    if name == "sgd":
        return SGD(learning_rate)
    if name == "adam":
        return Adam(learning_rate)
    raise ConfigError(f"Unknown optimizer '{name}'", field="optimizer", value=name)
