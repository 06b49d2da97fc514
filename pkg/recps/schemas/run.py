from typing import Annotated, Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from recps.schemas.training import ModelFamily, TrainConfig

RemovalMode = Literal["user-level", "interaction-level", "random-interaction"]
Fraction = Annotated[float, Field(gt=0.0, le=1.0)]

# Fields that describe where a run happens rather than what it computes
LOCATION_FIELDS = {"dataset_path", "output_dir", "workers", "log_level"}


class RemovalPlan(BaseModel):
    """Which users and interactions a removal experiment takes out of D."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: RemovalMode = "interaction-level"
    target_user_fraction: float = Field(0.05, gt=0.0, le=1.0)
    interaction_fraction: float = Field(0.5, gt=0.0, le=1.0)
    # min ε̂_u over the targeted users; set by plan_removal, never configured
    cutoff_theta: Optional[float] = None
    seed: int = 0


class RunConfig(BaseModel):
    """Every knob of an end-to-end run; serialisable into manifests."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    # dataset
    dataset_path: Optional[str] = None
    dataset_format: Literal["tsv", "csv", "movielens-dat", "canonical"] = "tsv"
    min_interactions: int = Field(20, ge=0)

    # models
    family: ModelFamily = "lightgcn"
    learning_rate: float = Field(0.001, gt=0.0)
    batch_size: int = Field(256, ge=1)
    max_epochs: int = Field(30, ge=1)
    patience: int = Field(5, ge=0)
    dim: int = Field(64, ge=1)
    layers: int = Field(3, ge=0)
    optimizer: Literal["sgd", "adam"] = "sgd"
    eval_k: int = Field(100, ge=1)
    negative_ratio: int = Field(4, ge=1)

    # shadows
    mode: Literal["self-audit", "attack"] = "self-audit"
    num_shadows: int = Field(64, ge=2)
    seed: int = 0
    out_sample_cap: int = Field(10_000, ge=30)
    target_user_fraction: float = Field(0.8, gt=0.0, lt=1.0)

    # attack evaluation
    eval_members: int = Field(1000, ge=1)
    eval_nonmembers: int = Field(1000, ge=1)
    hr_k: int = Field(100, ge=1)

    # removal experiments
    removal_arms: List[RemovalMode] = Field(
        default_factory=lambda: ["user-level", "interaction-level", "random-interaction"]
    )
    removal_user_fraction: float = Field(0.05, gt=0.0, le=1.0)
    removal_interaction_fraction: float = Field(0.5, gt=0.0, le=1.0)
    # sweeps; empty means the single fraction above
    removal_user_fractions: List[Fraction] = Field(default_factory=list)
    removal_interaction_fractions: List[Fraction] = Field(default_factory=list)
    histogram_bin_width: float = Field(0.005, gt=0.0)

    # execution
    workers: int = Field(1, ge=1)
    output_dir: str = "runs"
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"

    @field_validator("removal_arms", mode="before")
    @classmethod
    def split_arms(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [arm.strip() for arm in value.split(",") if arm.strip()]
        return value

    @field_validator("removal_user_fractions", "removal_interaction_fractions", mode="before")
    @classmethod
    def split_fractions(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [part.strip() for part in value.split(",") if part.strip()]
        if isinstance(value, (int, float)):
            return [value]
        return value

    @field_validator("log_level", mode="before")
    @classmethod
    def upper_level(cls, value: Any) -> Any:
        return value.upper() if isinstance(value, str) else value

    def train_config(self, seed: Optional[int] = None) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            dim=self.dim,
            layers=self.layers,
            seed=self.seed if seed is None else seed,
            optimizer=self.optimizer,
            eval_k=self.eval_k,
            negative_ratio=self.negative_ratio,
        )

    def removal_plan(
        self, mode: str, user_fraction: Optional[float] = None, interaction_fraction: Optional[float] = None
    ) -> RemovalPlan:
        return RemovalPlan(
            mode=mode,
            target_user_fraction=self.removal_user_fraction if user_fraction is None else user_fraction,
            interaction_fraction=(
                self.removal_interaction_fraction if interaction_fraction is None else interaction_fraction
            ),
            seed=self.seed,
        )

    def removal_grid(self, mode: str) -> List[RemovalPlan]:
        """
        One plan per point of the configured sweep, user fractions outermost.

        user-level removal ignores the interaction fraction, so it sweeps
        user fractions only.
        """
        user_fractions = self.removal_user_fractions or [self.removal_user_fraction]
        interaction_fractions = self.removal_interaction_fractions or [self.removal_interaction_fraction]
        if mode == "user-level":
            interaction_fractions = interaction_fractions[:1]
        return [
            self.removal_plan(mode, users, share)
            for users in user_fractions
            for share in interaction_fractions
        ]

    def manifest_view(self) -> Dict[str, Any]:
        """Deterministic subset written into manifests (no paths, no worker count)."""
        return self.model_dump(mode="json", exclude=LOCATION_FIELDS)
