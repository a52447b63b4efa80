"""Allocation daemon: a sequenced engine behind NDJSON/TCP and HTTP front ends."""

from .engine import Engine, replay_log

__all__ = ["Engine", "replay_log"]
