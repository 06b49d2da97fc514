from recps.schemas.interaction import Interaction, LabeledExample
from recps.schemas.run import RemovalPlan, RunConfig
from recps.schemas.training import TrainConfig

__all__ = ["Interaction", "LabeledExample", "RemovalPlan", "RunConfig", "TrainConfig"]
