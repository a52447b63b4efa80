import asyncio
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from couponldm.config import ServerConfig
from couponldm.core import PriceLadder
from couponldm.cvr import fit_arrays
from couponldm.pid import PidConfig
from couponldm.service import Engine, replay_log
from couponldm.service.app import create_app
from couponldm.service.tcp import start
from couponldm.synthpop import generate_population, true_purchase

LADDER = PriceLadder.default()


def cfg(lam=0.0, kp=0.0, **kw):
    return ServerConfig(LADDER, 12.0, lam, PidConfig(kp=kp, dt=60.0), **kw)


def alloc(i, q, ts=None, **kw):
    msg = {"type": "alloc", "id": i, "customer_id": i, "q": q, **kw}
    if ts is not None:
        msg["ts"] = ts
    return msg


def test_lambda_zero_gives_value_argmax():
    eng = Engine(cfg())
    q = [0.2, 0.3, 0.45, 0.6, 0.7]
    out = eng.handle(alloc(1, q, ts=0))
    assert out["type"] == "alloc" and out["id"] == 1
    # revenue p*q = [3.2, 4.2, 5.4, 6.0, 5.6]
    assert out["level"] == 4 and out["price"] == 10.0 and out["coupon"] == 6.0
    assert out["lambda"] == 0.0 and out["server_us"] >= 0
    out = eng.handle(alloc(2, q, ts=0, value="conversion"))
    assert out["level"] == 5


def test_nonmonotone_vector_is_calibrated():
    eng = Engine(cfg())
    # raw argmax of p*q would be level 3 (12*0.9); calibrated q pools levels 3-4
    q = [0.1, 0.1, 0.9, 0.3, 0.95]
    out = eng.handle(alloc(1, q, ts=0))
    qh = np.array([0.1, 0.1, 0.6, 0.6, 0.95])
    assert out["level"] == int(np.argmax(qh * LADDER.prices)) + 1 == 5


def test_schema_errors():
    eng = Engine(cfg())
    out = eng.handle(alloc(1, [0.1, 0.2, 0.3], ts=0))
    assert out["type"] == "error" and out["code"] == "schema" and out["id"] == 1
    out = eng.handle({"type": "outcome", "customer_id": 1, "price": 13.0, "purchased": True})
    assert out["code"] == "schema"
    out = eng.handle({"type": "alloc", "id": 1, "customer_id": 1, "q": [0.1] * 5, "f1": 0.2, "f2": 1})
    assert out["code"] == "bad_request"
    out = eng.handle({"type": "alloc", "id": 1, "customer_id": 1, "f1": 0.2, "f2": 1.0})
    assert out["code"] == "no_model"
    assert json.loads(eng.handle_line(b"{not json"))["code"] == "bad_json"
    assert eng.handle([1, 2])["code"] == "bad_request"
    assert eng.handle({"type": "launch"})["code"] == "bad_request"


def test_feature_requests_use_model():
    pop = generate_population(3000, seed=2)
    prices = LADDER.prices[np.random.default_rng(0).integers(0, 5, len(pop))]
    y = true_purchase(pop.f1, pop.f2, prices)
    model = fit_arrays(pop.f1, pop.f2, prices, y, 8, LADDER)
    eng = Engine(cfg(), model=model)
    out = eng.handle({"type": "alloc", "id": "a", "customer_id": 3, "f1": 0.1, "f2": 2.0, "ts": 0})
    assert out["type"] == "alloc" and 1 <= out["level"] <= 5


def test_fresh_snapshot():
    eng = Engine(cfg(lam=0.5))
    s = eng.snapshot()
    assert s["lambda"] == 0.5 and s["p_t"] is None and s["decisions"] == 0 and s["healthy"]


def test_purchase_at_pb_keeps_lambda():
    eng = Engine(cfg(lam=0.5, kp=1.0))
    eng.handle({"type": "outcome", "customer_id": 1, "price": 12.0, "purchased": True, "ts": 0})
    eng.handle({"type": "snapshot", "ts": 61})
    assert eng.snapshot()["lambda"] == 0.5


def test_low_price_burst_raises_lambda_within_one_step():
    eng = Engine(cfg(lam=0.5, kp=0.05))
    eng.handle({"type": "snapshot", "ts": 0})
    for k in range(20):
        eng.handle({"type": "outcome", "id": k, "customer_id": k, "price": 8.0,
                    "purchased": True, "ts": 1 + k})
    assert eng.handle({"type": "snapshot", "ts": 59})["lambda"] == 0.5
    s = eng.handle({"type": "snapshot", "ts": 60})
    assert s["lambda"] > 0.5 and s["p_t"] == 8.0


def test_duplicate_outcomes_both_counted():
    eng = Engine(cfg(lam=0.5))
    evt = {"type": "outcome", "id": "x", "customer_id": 1, "price": 10.0, "purchased": True, "ts": 0}
    eng.handle(evt)
    eng.handle(evt)
    assert eng.handle({"type": "snapshot", "ts": 60})["purchases"] == 2


def test_snapshot_matches_log_recomputed_mean(tmp_path):
    log = tmp_path / "d.jsonl"
    eng = Engine(cfg(lam=0.5, kp=0.01), log_path=log)
    rng = np.random.default_rng(4)
    for k in range(200):
        eng.handle({"type": "outcome", "customer_id": k, "price": float(rng.choice(LADDER.prices)),
                    "purchased": bool(rng.random() < 0.5), "ts": float(k)})
    s = eng.handle({"type": "snapshot", "ts": 1000.0})
    eng.close()
    recs = [json.loads(x) for x in log.read_text().splitlines()]
    bought = [r["request"]["price"] for r in recs
              if r["kind"] == "outcome" and r["request"]["purchased"]]
    assert s["p_t"] == pytest.approx(np.mean(bought))


def test_decision_count_monotone():
    eng = Engine(cfg())
    counts = []
    for k in range(5):
        eng.handle(alloc(k, [0.1, 0.2, 0.3, 0.4, 0.5], ts=k))
        counts.append(eng.snapshot()["decisions"])
    assert counts == [1, 2, 3, 4, 5]


def test_backpressure_is_retriable():
    eng = Engine(cfg(queue_size=2))
    evt = {"type": "outcome", "customer_id": 1, "price": 10.0, "purchased": True, "ts": 0}
    assert eng.handle(evt)["type"] == "ack"
    assert eng.handle(evt)["type"] == "ack"
    out = eng.handle(evt)
    assert out["code"] == "busy" and out["retriable"]
    # the next control step drains the queue
    assert eng.handle({**evt, "ts": 60})["type"] == "ack"


def _traffic(eng, n=300, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        q = np.sort(rng.random(5)).tolist()
        r = eng.handle(alloc(k, q, ts=float(10 * k)))
        out.append(r)
        if rng.random() < 0.4:
            eng.handle({"type": "outcome", "customer_id": k, "price": r["price"],
                        "purchased": bool(rng.random() < 0.5), "ts": float(10 * k + 1)})
    return out


def test_replay_reproduces_responses(tmp_path):
    log = tmp_path / "d.jsonl"
    c = cfg(lam=0.4, kp=0.02)
    eng = Engine(c, log_path=log)
    _traffic(eng)
    eng.handle({"type": "alloc", "id": "bad", "customer_id": 0, "q": [0.5] * 3, "ts": 5000.0})
    eng.close()
    checked, bad = replay_log(c, log)
    assert checked > 300 and bad == []
    steps = [json.loads(x) for x in log.read_text().splitlines() if '"kind":"step"' in x]
    assert len(steps) > 10 and len({s["lambda"] for s in steps}) > 1


def test_replay_detects_tampering(tmp_path):
    log = tmp_path / "d.jsonl"
    c = cfg(lam=0.4)
    eng = Engine(c, log_path=log)
    _traffic(eng, n=20)
    eng.close()
    lines = log.read_text().splitlines()
    lines[0] = lines[0].replace('"level":', '"level":9', 1)
    log.write_text("\n".join(lines) + "\n")
    _, bad = replay_log(c, log)
    assert bad


def test_missing_ts_is_stamped_and_logged(tmp_path):
    log = tmp_path / "d.jsonl"
    eng = Engine(cfg(), log_path=log, wall_clock=lambda: 123.5)
    eng.handle(alloc(1, [0.1, 0.2, 0.3, 0.4, 0.5]))
    eng.close()
    assert json.loads(log.read_text().splitlines()[0])["request"]["ts"] == 123.5


def test_tcp_malformed_line_keeps_connection():
    async def go():
        eng = Engine(cfg())
        server = await start(eng, "127.0.0.1", 0)
        port = server.sockets[0].getsockname()[1]
        r, w = await asyncio.open_connection("127.0.0.1", port)
        w.write(b"this is not json\n")
        w.write((json.dumps(alloc(7, [0.2, 0.3, 0.45, 0.6, 0.7], ts=0)) + "\n").encode())
        await w.drain()
        a = json.loads(await r.readline())
        b = json.loads(await r.readline())
        w.close()
        server.close()
        await server.wait_closed()
        eng.close()
        return a, b

    a, b = asyncio.run(go())
    assert a["type"] == "error" and a["code"] == "bad_json"
    assert b["type"] == "alloc" and b["id"] == 7 and b["level"] == 4


def test_http_front_end():
    eng = Engine(cfg(lam=0.0))
    with TestClient(create_app(eng)) as client:
        r = client.post("/alloc", json=alloc(1, [0.2, 0.3, 0.45, 0.6, 0.7], ts=0))
        assert r.status_code == 200 and r.json()["level"] == 4 and "lambda" in r.json()
        r = client.post("/alloc", json=alloc(2, [0.2, 0.3], ts=0))
        assert r.status_code == 422 and r.json()["code"] == "schema"
        r = client.post("/outcome", json={"customer_id": 1, "price": 10.0, "purchased": True, "ts": 1})
        assert r.status_code == 200 and r.json()["type"] == "ack"
        r = client.get("/snapshot")
        assert r.status_code == 200 and r.json()["decisions"] == 1


def test_engine_rejects_mismatched_model():
    pop = generate_population(500, seed=1)
    small = PriceLadder(16.0, (0.0, 4.0))
    prices = small.prices[np.random.default_rng(0).integers(0, 2, len(pop))]
    model = fit_arrays(pop.f1, pop.f2, prices, true_purchase(pop.f1, pop.f2, prices), 4, small)
    with pytest.raises(ValueError):
        Engine(cfg(), model=model)
