"""Request and response models shared by the TCP and HTTP front ends."""

from __future__ import annotations

from typing import Literal, Optional, Union

from pydantic import AliasChoices, BaseModel, ConfigDict, Field, model_validator


class AllocRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    type: Literal["alloc"] = "alloc"
    id: Union[int, str]
    customer_id: int
    q: Optional[list[float]] = None
    f1: Optional[float] = None
    f2: Optional[float] = Field(default=None, gt=0)
    value: Literal["revenue", "conversion"] = "revenue"
    ts: Optional[float] = None

    @model_validator(mode="after")
    def _one_source(self):
        has_q = self.q is not None
        has_f = self.f1 is not None or self.f2 is not None
        if has_q == has_f:
            raise ValueError("give exactly one of q or (f1, f2)")
        if has_f and (self.f1 is None or self.f2 is None):
            raise ValueError("features need both f1 and f2")
        if has_q and any(not 0.0 <= x <= 1.0 for x in self.q):
            raise ValueError("q values must lie in [0, 1]")
        return self


class AllocResponse(BaseModel):
    type: Literal["alloc"] = "alloc"
    id: Union[int, str]
    level: int
    coupon: float
    price: float
    lam: float = Field(validation_alias=AliasChoices("lam", "lambda"), serialization_alias="lambda")
    server_us: Optional[float] = None


class OutcomeEvent(BaseModel):
    model_config = ConfigDict(extra="forbid")

    type: Literal["outcome"] = "outcome"
    id: Optional[Union[int, str]] = None
    customer_id: int
    price: float
    purchased: bool
    ts: Optional[float] = None


class Ack(BaseModel):
    type: Literal["ack"] = "ack"
    id: Optional[Union[int, str]] = None
    queued: bool = True


class SnapshotRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    type: Literal["snapshot"] = "snapshot"
    id: Optional[Union[int, str]] = None
    ts: Optional[float] = None


class Snapshot(BaseModel):
    type: Literal["snapshot"] = "snapshot"
    id: Optional[Union[int, str]] = None
    lam: float = Field(validation_alias=AliasChoices("lam", "lambda"), serialization_alias="lambda")
    p_t: Optional[float]
    e_t: float
    decisions: int
    purchases: int
    t: Optional[float]
    healthy: bool


class ErrorResponse(BaseModel):
    type: Literal["error"] = "error"
    id: Optional[Union[int, str]] = None
    code: str
    message: str
    retriable: bool = False
