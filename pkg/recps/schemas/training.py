from typing import Literal

from pydantic import BaseModel, ConfigDict, Field

ModelFamily = Literal["mf-logit", "ncf", "lightgcn"]


class TrainConfig(BaseModel):
    """Hyper-parameters shared by target and shadow model training."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    learning_rate: float = Field(0.001, gt=0.0)
    batch_size: int = Field(256, ge=1)
    max_epochs: int = Field(30, ge=1)
    # 0 disables early stopping
    patience: int = Field(5, ge=0)
    dim: int = Field(64, ge=1)
    layers: int = Field(3, ge=0)
    seed: int = 0
    optimizer: Literal["sgd", "adam"] = "sgd"
    eval_k: int = Field(100, ge=1)
    negative_ratio: int = Field(4, ge=1)
    init_scale: float = Field(0.05, gt=0.0)

    def with_seed(self, seed: int) -> "TrainConfig":
        return self.model_copy(update={"seed": int(seed)})
