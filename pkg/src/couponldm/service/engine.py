"""Sequenced allocation engine.

All messages pass through one lock, which fixes the total order recorded in
the decision log.  Time is logical: it comes from each message's ``ts`` field
(stamped from the wall clock when absent, and logged stamped), so replaying a
log reproduces every decision and every controller step.
"""

from __future__ import annotations

import json
import os
import queue
import threading
import time
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from .. import pid
from ..config import ServerConfig
from ..core import argmax_rows
from ..cvr import CvrModel
from ..isotonic import calibrate_vector
from .schemas import (Ack, AllocRequest, AllocResponse, ErrorResponse, OutcomeEvent,
                      Snapshot, SnapshotRequest)

_REQUESTS = {"alloc": AllocRequest, "outcome": OutcomeEvent, "snapshot": SnapshotRequest}


def dumps(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


class LogWriter:
    """Append-only JSON-lines sink fed from a queue by one thread."""

    def __init__(self, path, fsync: str = "never"):
        self.path = Path(path)
        self.fsync = fsync
        self._q: queue.Queue = queue.Queue()
        self._fh = open(self.path, "a", encoding="utf-8")
        self._thread = threading.Thread(target=self._run, name="decision-log", daemon=True)
        self._thread.start()

    def write(self, line: str):
        self._q.put(line)

    def _run(self):
        while True:
            line = self._q.get()
            if line is None:
                break
            self._fh.write(line + "\n")
            if self.fsync == "always":
                self._fh.flush()
                os.fsync(self._fh.fileno())
            elif self._q.empty():
                self._fh.flush()

    def close(self):
        self._q.put(None)
        self._thread.join()
        self._fh.flush()
        self._fh.close()


class EngineError(Exception):
    def __init__(self, code: str, message: str, retriable: bool = False):
        super().__init__(message)
        self.code, self.message, self.retriable = code, message, retriable


class Engine:
    def __init__(self, cfg: ServerConfig, model: CvrModel | None = None,
                 log_path=None, wall_clock=time.time, on_step=None):
        self.cfg = cfg
        self.ladder = cfg.ladder
        self.prices = np.asarray(cfg.ladder.prices, dtype=float)
        if model is None and cfg.model:
            model = CvrModel.load(cfg.model)
        if model is not None and model.ladder.J != self.ladder.J:
            raise ValueError("model ladder does not match the configured ladder")
        self.model = model
        self._bq_scale = self.prices - cfg.p_b
        self._state = pid.init(cfg.lambda_init, cfg.pid, cfg.p_b)
        self._snap = (cfg.lambda_init, None)  # (lambda, clock) replaced atomically
        self._outcomes: queue.Queue = queue.Queue(maxsize=cfg.queue_size)
        self._lock = threading.Lock()
        self._clock: float | None = None
        self._next_step: float | None = None
        self._wall = wall_clock
        self._on_step = on_step
        self.decisions = 0
        self.healthy = True
        path = log_path if log_path is not None else cfg.log
        self._log = LogWriter(path, cfg.fsync) if path else None

    # -- public entry points -------------------------------------------------
    def handle(self, msg) -> dict:
        """Dispatch one decoded message; always returns a response dict."""
        mid = msg.get("id") if isinstance(msg, dict) else None
        try:
            if not isinstance(msg, dict):
                raise EngineError("bad_request", "message must be a JSON object")
            kind = msg.get("type")
            if kind not in _REQUESTS:
                raise EngineError("bad_request", f"unknown type {kind!r}")
            try:
                req = _REQUESTS[kind].model_validate(msg)
            except ValidationError as exc:
                raise EngineError("bad_request", _first_error(exc)) from None
            with self._lock:
                return self._dispatch(req)
        except EngineError as exc:
            return ErrorResponse(id=mid if isinstance(mid, (int, str)) else None,
                                 code=exc.code, message=exc.message,
                                 retriable=exc.retriable).model_dump()

    def handle_line(self, line: bytes | str) -> str:
        try:
            msg = json.loads(line)
        except (ValueError, UnicodeDecodeError) as exc:
            return dumps(ErrorResponse(code="bad_json", message=str(exc)).model_dump())
        return dumps(self.handle(msg))

    def snapshot(self) -> dict:
        return self.handle({"type": "snapshot"})

    def close(self):
        if self._log:
            self._log.close()
            self._log = None

    # -- internals -------------------------------------------------------------
    def _dispatch(self, req) -> dict:
        if req.ts is None:
            req = req.model_copy(update={"ts": float(self._wall())})
        self._advance(req.ts)
        try:
            if isinstance(req, AllocRequest):
                resp = self._alloc(req)
            elif isinstance(req, OutcomeEvent):
                resp = self._outcome(req)
            else:
                resp = self._snapshot(req)
        except EngineError as exc:
            # the clock already moved, so the request still belongs in the log
            resp = ErrorResponse(id=req.id, code=exc.code, message=exc.message,
                                 retriable=exc.retriable).model_dump()
        self._record(req, resp)
        return resp

    def _advance(self, ts: float):
        """Move the logical clock to ts, running every control step crossed."""
        if self._clock is None:
            self._clock = ts
            self._next_step = ts + self.cfg.pid.dt
            self._snap = (self._state.lam, ts)
            return
        ts = max(ts, self._clock)
        self._clock = ts
        dt = self.cfg.pid.dt
        while ts >= self._next_step:
            try:
                self._drain()
                # long idle gaps collapse into one closed-form jump
                k = int((ts - self._next_step) // dt)
                if k > 1 and pid.stationary(self._state):
                    pid.fast_forward(self._state, self.cfg.pid, k)
                    self._next_step += (k - 1) * dt
                else:
                    pid.step(self._state, self.cfg.pid)
            except Exception:  # keep serving on the last lambda
                self.healthy = False
                break
            self._snap = (self._state.lam, self._next_step)
            line = dumps({"kind": "step", "t": self._next_step, "lambda": self._state.lam,
                          "p_t": self._state.p_t, "e_t": self._state.last_error})
            if self._log:
                self._log.write(line)
            if self._on_step:
                self._on_step(line)
            self._next_step += dt

    def _drain(self):
        while True:
            try:
                price, bought = self._outcomes.get_nowait()
            except queue.Empty:
                return
            pid.record_outcome(self._state, price, bought)

    def _alloc(self, req: AllocRequest) -> dict:
        t0 = time.perf_counter_ns()
        if req.q is not None:
            if len(req.q) != self.ladder.J:
                raise EngineError("schema", f"q has {len(req.q)} levels, ladder has {self.ladder.J}")
            q_raw = np.asarray(req.q, dtype=float)
        else:
            if self.model is None or self.model.kind != "binned":
                raise EngineError("no_model", "feature requests need a loaded binned model")
            q_raw = self.model.predict_features(req.f1, req.f2)
        q = calibrate_vector(q_raw.reshape(-1))
        v = q * self.prices if req.value == "revenue" else q
        lam = self._snap[0]
        j = int(argmax_rows((v + lam * q * self._bq_scale)[None, :])[0])
        self.decisions += 1
        resp = AllocResponse(id=req.id, level=j + 1, coupon=self.ladder.coupons[j],
                             price=float(self.prices[j]), lam=lam)
        out = resp.model_dump(by_alias=True, exclude={"server_us"})
        if self.cfg.report_timing:
            out["server_us"] = (time.perf_counter_ns() - t0) / 1000.0
        return out

    def _outcome(self, evt: OutcomeEvent) -> dict:
        hit = np.nonzero(np.abs(self.prices - evt.price) <= 1e-9)[0]
        if hit.size == 0:
            raise EngineError("schema", f"price {evt.price} is not on the ladder")
        try:
            self._outcomes.put_nowait((float(self.prices[hit[0]]), evt.purchased))
        except queue.Full:
            raise EngineError("busy", "outcome queue full, retry later", retriable=True) from None
        return Ack(id=evt.id).model_dump()

    def _snapshot(self, req: SnapshotRequest) -> dict:
        lam, t = self._snap
        st = self._state
        return Snapshot(id=req.id, lam=lam, p_t=st.p_t, e_t=st.error,
                        decisions=self.decisions, purchases=st.purchases, t=t,
                        healthy=self.healthy).model_dump(by_alias=True)

    def _record(self, req, resp: dict):
        if not self._log:
            return
        body = {k: v for k, v in resp.items() if k != "server_us"}
        self._log.write(dumps({"kind": req.type,
                               "request": req.model_dump(exclude_none=True),
                               "response": body}))


def _first_error(exc: ValidationError) -> str:
    err = exc.errors()[0]
    loc = ".".join(str(x) for x in err.get("loc", ()))
    return f"{loc}: {err['msg']}" if loc else err["msg"]


def replay_log(cfg: ServerConfig, log_path, model: CvrModel | None = None):
    """Feed a recorded log through a fresh engine.

    Returns (checked, mismatches).  Responses and controller steps are compared
    as canonical JSON bytes; processing time is not part of the log.
    """
    steps: list[str] = []
    eng = Engine(cfg, model, log_path=None, on_step=steps.append)
    orig_steps: list[str] = []
    checked, bad = 0, []
    for raw in Path(log_path).read_text(encoding="utf-8").splitlines():
        if not raw.strip():
            continue
        rec = json.loads(raw)
        if rec["kind"] == "step":
            orig_steps.append(raw)
            continue
        resp = eng.handle(rec["request"])
        resp.pop("server_us", None)
        checked += 1
        if dumps(resp) != dumps(rec["response"]):
            bad.append((checked, dumps(rec["response"]), dumps(resp)))
    for k, (a, b) in enumerate(zip(orig_steps, steps)):
        if a != b:
            bad.append(("step", k, a, b))
    if len(orig_steps) != len(steps):
        bad.append(("step-count", len(orig_steps), len(steps)))
    eng.close()
    return checked, bad
