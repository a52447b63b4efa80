"""Command line entry point (``couponldm``)."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np


def _ladder_args(p):
    p.add_argument("--config", help="key=value file with base_price/coupons/p_b")
    p.add_argument("--base-price", type=float)
    p.add_argument("--coupons", help="comma-separated ascending coupon values")


def _ladder(args):
    from .config import load_ladder

    return load_ladder(args.config, args.base_price, args.coupons)


def cmd_gen_pop(args):
    from .synthpop import SCENARIOS, apply_campaign, generate_population, save_population, save_records

    pop = generate_population(args.size, args.seed)
    save_population(pop, args.out)
    if args.campaign:
        prices, targeted = apply_campaign(pop, SCENARIOS[args.campaign], args.seed + 1)
        rec = args.records or str(Path(args.out).with_suffix("")) + f".{args.campaign}.records.jsonl"
        save_records(pop, prices, rec)
        print(f"records={rec}")
        print(f"covered={targeted.mean():.6f}")
    print(f"customers={len(pop)}")


def _read_records(path):
    rows = [json.loads(x) for x in Path(path).read_text().splitlines() if x.strip()]
    return rows


def cmd_cvr_fit(args):
    from .cvr import fit

    ladder, _ = _ladder(args)
    model = fit(_read_records(args.records), args.bins, ladder)
    model.save(args.out)
    print(f"cells={model.table.shape[0]}")


def cmd_cvr_eval(args):
    from .cvr import CvrModel, auc, nonmonotonic_fraction, pcoc

    model = CvrModel.load(args.model)
    rows = _read_records(args.records)
    f1 = np.array([r["f1"] for r in rows])
    f2 = np.array([r["f2"] for r in rows])
    Q = model.predict_features(f1, f2)
    cols = model.ladder.levels_of_prices([r["price"] for r in rows])
    pred = Q[np.arange(len(rows)), cols]
    y = np.array([bool(r["purchased"]) for r in rows])
    print(f"auc={auc(pred, y):.6f}")
    print(f"pcoc={pcoc(pred, y):.6f}")
    print(f"nonmonotonic_fraction={nonmonotonic_fraction(Q):.6f}")


def cmd_cvr_predict(args):
    from .cvr import CvrModel, write_cvr_csv
    from .synthpop import load_population

    model = CvrModel.load(args.model)
    pop = load_population(args.pop, model.ladder)
    write_cvr_csv(args.out, pop.ids, model.predict_features(pop.f1, pop.f2))


def cmd_calibrate(args):
    from .cvr import nonmonotonic_fraction, read_cvr_csv, write_cvr_csv
    from .isotonic import calibrate_population

    ids, Q = read_cvr_csv(args.input)
    cal = calibrate_population(Q)
    write_cvr_csv(args.out, ids, cal)
    print(f"nonmonotonic_before={nonmonotonic_fraction(Q):.6f}")
    print(f"nonmonotonic_after={nonmonotonic_fraction(cal):.6f}")


def cmd_fit_lambda(args):
    from .dual import read_instance_csv, solve

    ladder, pb = _ladder(args)
    pb = args.pb if args.pb is not None else pb
    if pb is None:
        sys.exit("fit-lambda: --pb is required")
    ids, inst = read_instance_csv(args.instance, ladder, pb)
    eps = None if args.eps is None else args.eps
    ds, ps = solve(inst, eps)
    out = {"lambda": ds.lam, "dual_objective": ds.objective, "bracket": list(ds.bracket),
           "primal_objective": ps.objective, "slack": ps.slack,
           "fractional_ties": [[int(ids[i]), list(t)] for i, t in ds.fractional_ties],
           "assignment": {str(int(i)): int(l) for i, l in zip(ids, ps.levels)}}
    Path(args.out).write_text(json.dumps(out, indent=1))
    print(f"lambda={ds.lam:.10g}")
    print(f"dual_objective={ds.objective:.10g}")
    print(f"primal_objective={ps.objective:.10g}")


def cmd_oracle(args):
    from .dual import brute_force_oracle, read_instance_csv

    ladder, pb = _ladder(args)
    pb = args.pb if args.pb is not None else pb
    if pb is None:
        sys.exit("oracle: --pb is required")
    ids, inst = read_instance_csv(args.instance, ladder, pb)
    sol = brute_force_oracle(inst)
    print(f"feasible={str(sol.feasible).lower()}")
    if sol.feasible:
        print(f"objective={sol.objective:.10g}")
        print("assignment=" + ",".join(f"{int(i)}:{int(l)}" for i, l in zip(ids, sol.levels)))


def cmd_simulate(args):
    from .sim import Strategy, simulate, write_outputs
    from .synthpop import load_population

    pop = load_population(args.pop)
    strategies = [Strategy.parse(s) for s in args.strategies.split(",") if s]
    reports, decisions, traces = simulate(pop, strategies, args.pb, args.days, args.seed,
                                          args.history_days, args.bins, args.profile)
    write_outputs(args.out, reports, decisions, traces)
    for rep in reports:
        for r in rep.rows:
            pt = "nan" if r["avg_price"] is None else f"{r['avg_price']:.4f}"
            print(f"day={rep.day} strategy={r['strategy']} cvr={r['cvr']:.4f} "
                  f"avg_price={pt} avg_price_x_cvr={r['avg_price_x_cvr']:.4f}")


def cmd_sweep(args):
    from .sim import misspecification_sweep, train_predictor, DayInputs
    from .synthpop import generate_population

    pop = generate_population(args.size, args.seed)
    pred = train_predictor(pop, "basic", args.seed + 1)
    inp = DayInputs.sample(pop, args.seed, 0)
    q = pred.ir(inp.ids)
    lam, rows = misspecification_sweep(q, pop.f1[inp.ids], pop.f2[inp.ids], inp.times,
                                       pop.ladder, args.pb,
                                       [float(x) for x in args.deviations.split(",")])
    print(f"arrivals={len(inp.ids)} lambda_star={lam:.6g}")
    for r in rows:
        print("deviation={deviation:+.3f} pid={pid} deviated_share={deviated_share:.4f} "
              "objective_deviation={objective_deviation:+.5f} pb_deviation={pb_deviation:+.5f}".format(**r))


def cmd_serve(args):
    from .config import load
    from .service.engine import Engine

    cfg = load(args.config)
    engine = Engine(cfg)
    if args.http:
        import uvicorn

        from .service.app import create_app

        uvicorn.run(create_app(engine), host=args.host, port=args.port, log_level="warning")
    else:
        from .service.tcp import serve_forever

        serve_forever(engine, args.host, args.port)


def cmd_client(args):
    msg = json.loads(args.message) if args.message else {}
    if args.kind:
        msg["type"] = args.kind
    if args.url:
        import httpx

        kind = msg.get("type", "snapshot")
        with httpx.Client(base_url=args.url, timeout=5.0) as c:
            r = c.get("/snapshot") if kind == "snapshot" else c.post(f"/{kind}", json=msg)
        print(r.text)
        return
    import socket

    with socket.create_connection((args.host, args.port), timeout=5.0) as s:
        s.sendall(json.dumps(msg).encode() + b"\n")
        buf = b""
        while not buf.endswith(b"\n"):
            chunk = s.recv(65536)
            if not chunk:
                break
            buf += chunk
    print(buf.decode().rstrip("\n"))


def cmd_replay(args):
    from .config import load
    from .service.engine import replay_log

    checked, bad = replay_log(load(args.config), args.log)
    print(f"checked={checked} mismatches={len(bad)}")
    for b in bad[:5]:
        print("mismatch", b)
    if bad:
        sys.exit(1)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="couponldm", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen-pop", help="generate a synthetic population")
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--campaign", choices=["basic", "low", "medium", "high"])
    p.add_argument("--records", help="training records path (with --campaign)")
    p.set_defaults(func=cmd_gen_pop)

    cvr = sub.add_parser("cvr", help="binned CVR predictor").add_subparsers(dest="cvr_cmd", required=True)
    p = cvr.add_parser("fit")
    p.add_argument("--records", required=True)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--out", required=True)
    _ladder_args(p)
    p.set_defaults(func=cmd_cvr_fit)
    p = cvr.add_parser("eval")
    p.add_argument("--model", required=True)
    p.add_argument("--records", required=True)
    p.set_defaults(func=cmd_cvr_eval)
    p = cvr.add_parser("predict")
    p.add_argument("--model", required=True)
    p.add_argument("--pop", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cvr_predict)

    p = sub.add_parser("calibrate", help="isotonic calibration of a CVR csv")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("fit-lambda", help="fit the multiplier by trisection")
    p.add_argument("--instance", required=True)
    p.add_argument("--pb", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--out", required=True)
    _ladder_args(p)
    p.set_defaults(func=cmd_fit_lambda)

    p = sub.add_parser("oracle", help="exact enumeration on a tiny instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--pb", type=float)
    _ladder_args(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("simulate", help="multi-day strategy comparison")
    p.add_argument("--pop", required=True)
    p.add_argument("--days", type=int, default=5)
    p.add_argument("--strategies", default="random,manual,ipgroup:200,ldm,ldmir")
    p.add_argument("--pb", type=float, default=14.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--history-days", type=int, default=3)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--profile", choices=["uniform", "bimodal"], default="uniform")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="multiplier misspecification with and without PID")
    p.add_argument("--size", type=int, default=154000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pb", type=float, default=14.0)
    p.add_argument("--deviations", default="-0.024,-0.077,0.08")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("serve", help="run the allocation daemon")
    p.add_argument("--config", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7070)
    p.add_argument("--http", action="store_true", help="serve HTTP instead of NDJSON/TCP")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("client", help="send one message to a running daemon")
    p.add_argument("kind", nargs="?", choices=["alloc", "outcome", "snapshot"])
    p.add_argument("--message", help="JSON object body")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7070)
    p.add_argument("--url", help="HTTP base URL instead of TCP")
    p.set_defaults(func=cmd_client)

    p = sub.add_parser("replay", help="check a decision log against a fresh engine")
    p.add_argument("--config", required=True)
    p.add_argument("--log", required=True)
    p.set_defaults(func=cmd_replay)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    args.func(args)


if __name__ == "__main__":
    main()
