from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field


class Interaction(BaseModel):
    """One implicit-feedback event between a user and an item."""

    model_config = ConfigDict(frozen=True)

    user_id: str = Field(..., min_length=1)
    item_id: str = Field(..., min_length=1)
    rating: Optional[float] = Field(None, ge=1.0, le=5.0)
    timestamp: Optional[int] = None


class LabeledExample(BaseModel):
    model_config = ConfigDict(frozen=True)

    user: int = Field(..., ge=0)
    item: int = Field(..., ge=0)
    label: Literal[0, 1]
