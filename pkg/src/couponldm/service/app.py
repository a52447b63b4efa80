"""HTTP front end over the same engine as the TCP server."""

from __future__ import annotations

from contextlib import asynccontextmanager

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .engine import Engine
from .schemas import Ack, AllocRequest, AllocResponse, OutcomeEvent, Snapshot

_STATUS = {"bad_request": 400, "bad_json": 400, "schema": 422, "no_model": 409, "busy": 503}


def _reply(out: dict):
    if out.get("type") == "error":
        return JSONResponse(out, status_code=_STATUS.get(out["code"], 400))
    return out


def create_app(engine: Engine) -> FastAPI:
    @asynccontextmanager
    async def lifespan(app):
        yield
        engine.close()

    app = FastAPI(title="coupon allocation", lifespan=lifespan)
    app.state.engine = engine

    @app.post("/alloc", response_model=AllocResponse, response_model_by_alias=True)
    def alloc(req: AllocRequest):
        return _reply(engine.handle(req.model_dump(exclude_none=True)))

    @app.post("/outcome", response_model=Ack)
    def outcome(evt: OutcomeEvent):
        return _reply(engine.handle(evt.model_dump(exclude_none=True)))

    @app.get("/snapshot", response_model=Snapshot, response_model_by_alias=True)
    def snapshot():
        return _reply(engine.snapshot())

    return app
