"""Plain key=value configuration for the ladder, budget and controller."""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

from .core import PriceLadder, check_budget
from .pid import DEFAULT_KD, DEFAULT_KI, DEFAULT_KP, PidConfig

_SECTION = "settings"


@dataclass
class ServerConfig:
    ladder: PriceLadder
    p_b: float
    lambda_init: float = 0.0
    pid: PidConfig | None = None
    model: str | None = None
    log: str | None = None
    fsync: str = "never"
    queue_size: int = 10000
    report_timing: bool = True

    def __post_init__(self):
        self.p_b = check_budget(self.ladder, self.p_b)
        if self.lambda_init < 0:
            raise ValueError("lambda_init must be non-negative")
        if self.fsync not in ("never", "always"):
            raise ValueError("fsync must be 'never' or 'always'")
        if self.pid is None:
            self.pid = PidConfig.scaled(self.lambda_init, self.p_b)


def parse_kv(text: str) -> dict:
    """key=value lines; '#' and ';' start comments."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    cp.read_string(f"[{_SECTION}]\n" + text)
    return dict(cp[_SECTION])


def _bool(s: str) -> bool:
    return s.strip().lower() in ("1", "true", "yes", "on")


def from_mapping(kv: dict) -> ServerConfig:
    ladder = PriceLadder(float(kv.get("base_price", 16)),
                         tuple(float(x) for x in kv.get("coupons", "0,2,4,6,8").split(",")))
    if "p_b" not in kv:
        raise ValueError("config needs p_b")
    p_b = float(kv["p_b"])
    lam = float(kv.get("lambda_init", 0.0))
    s = lam / p_b if p_b else 0.0
    pid_cfg = PidConfig(
        kp=float(kv.get("pid.kp", DEFAULT_KP * s)),
        ki=float(kv.get("pid.ki", DEFAULT_KI * s)),
        kd=float(kv.get("pid.kd", DEFAULT_KD * s)),
        dt=float(kv.get("pid.dt_seconds", 60.0)),
        window=float(kv.get("pid.window_seconds", 16 * 3600.0)),
    )
    return ServerConfig(ladder, p_b, lam, pid_cfg, kv.get("model") or None,
                        kv.get("log") or None, kv.get("fsync", "never"),
                        int(kv.get("queue_size", 10000)),
                        _bool(kv.get("report_timing", "true")))


def load(path) -> ServerConfig:
    return from_mapping(parse_kv(Path(path).read_text()))


def load_ladder(path=None, base_price=None, coupons=None):
    """Ladder and optional p_b from a config file, overridable by arguments."""
    kv = parse_kv(Path(path).read_text()) if path else {}
    bp = base_price if base_price is not None else float(kv.get("base_price", 16))
    cs = coupons if coupons is not None else kv.get("coupons", "0,2,4,6,8")
    if isinstance(cs, str):
        cs = tuple(float(x) for x in cs.split(","))
    p_b = float(kv["p_b"]) if "p_b" in kv else None
    return PriceLadder(bp, tuple(cs)), p_b
