"""Command-line client for the prediction service.

Every subcommand talks to the HTTP API: against a remote instance when
``--server`` is given, otherwise against an in-process application via
the ASGI test transport (no network, same code path).  Responses that
carry CSV are written to ``--out`` byte for byte.

Subcommands: ``gen`` (draw one frame), ``sweep`` (NMSE benchmark),
``rank`` (feature-count estimation), ``selftest`` (sanity battery;
nonzero exit on failure) and ``serve`` (run the service itself).
"""

from __future__ import annotations

import argparse
import sys

import yaml


def _client(server: str | None):
    if server:
        import httpx

        return httpx.Client(base_url=server, timeout=None)
    from fastapi.testclient import TestClient

    from .service import app

    return TestClient(app)


def _write_out(path: str | None, text: str) -> None:
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _fail(resp) -> None:
    try:
        detail = resp.json().get("detail", resp.text)
    except Exception:
        detail = resp.text
    print(f"error: service returned {resp.status_code}: {detail}", file=sys.stderr)
    raise SystemExit(2)


def cmd_gen(args) -> int:
    body = {
        "seed": args.seed, "env": args.env, "antenna_total": args.antennas,
        "n_taps": args.taps, "cluster_count": args.clusters,
        "delay_spread": args.delay_spread, "n_slots": args.slots,
        "srs_rate": args.srs_rate, "rolloff": args.rolloff,
        "pilots": args.pilots,
    }
    if args.snr_db is not None:
        body["snr_db"] = args.snr_db
    with _client(args.server) as client:
        resp = client.post("/frames/generate", json=body)
        if resp.status_code != 200:
            _fail(resp)
        _write_out(args.out, resp.text)
    return 0


def cmd_sweep(args) -> int:
    config = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            config = yaml.safe_load(fh) or {}
        if not isinstance(config, dict):
            print("error: sweep config must be a YAML mapping", file=sys.stderr)
            return 2
    body = {"config": config, "desk_scale": args.desk_scale,
            "timing": args.timing}
    if args.seed is not None:
        body["seed"] = args.seed
    with _client(args.server) as client:
        resp = client.post("/sweep", json=body)
        if resp.status_code != 200:
            _fail(resp)
        _write_out(args.out, resp.text)
    return 0


def cmd_rank(args) -> int:
    body = {
        "method": args.method, "seed": args.seed, "env": args.env,
        "antenna_total": args.antennas, "n_taps": args.taps,
        "cluster_count": args.clusters, "n_frames": args.frames,
        "n_frames_val": args.frames_val, "n_slots": args.slots,
        "window": args.window, "lag": args.lag, "l_train": args.l_train,
        "lam_long": args.lam, "lam_short": args.lam, "k_max": args.k_max,
    }
    if args.snr_db is not None:
        body["snr_db"] = args.snr_db
    with _client(args.server) as client:
        resp = client.post("/rank", json=body)
        if resp.status_code != 200:
            _fail(resp)
        payload = resp.json()
    print(f"method={payload['method']} k_hat={payload['k_hat']}")
    if args.out:
        _write_out(args.out, payload["curve_csv"])
    return 0


def cmd_selftest(args) -> int:
    with _client(args.server) as client:
        resp = client.post("/selftest")
        if resp.status_code != 200:
            _fail(resp)
        payload = resp.json()
    for check in payload["checks"]:
        mark = "PASS" if check["passed"] else "FAIL"
        print(f"{mark} {check['name']}: {check['detail']}")
    if not payload["passed"]:
        print("selftest FAILED", file=sys.stderr)
        return 1
    print("selftest passed")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("chanpred.service:app", host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chanpred",
        description="Fading-channel prediction benchmarks and utilities")
    parser.add_argument("--server", default=None,
                        help="base URL of a running service; default runs "
                             "the service in-process")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="draw one synthetic frame to CSV")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--env", choices=("slow", "fast"), default="fast")
    p.add_argument("--antennas", type=int, default=8,
                   help="total antenna count (tabulated configurations)")
    p.add_argument("--taps", type=int, default=1)
    p.add_argument("--clusters", type=int, default=1)
    p.add_argument("--delay-spread", type=float, default=45e-9)
    p.add_argument("--slots", type=int, default=107)
    p.add_argument("--srs-rate", type=float, default=200.0)
    p.add_argument("--rolloff", type=float, default=0.22)
    p.add_argument("--snr-db", type=float, default=None)
    p.add_argument("--pilots", type=int, default=100)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("sweep", help="run an NMSE benchmark sweep")
    p.add_argument("--config", default=None, help="YAML sweep configuration")
    p.add_argument("--seed", type=int, default=None, help="override the seeds list")
    p.add_argument("--out", default=None)
    p.add_argument("--desk-scale", action="store_true",
                   help="use shrunken desk-scale defaults")
    p.add_argument("--timing", action="store_true",
                   help="emit measured wall times (not byte-reproducible)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("rank", help="estimate the feature count")
    p.add_argument("--method", choices=("aic", "meta_validation"), default="aic")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--env", choices=("slow", "fast"), default="fast")
    p.add_argument("--antennas", type=int, default=4)
    p.add_argument("--taps", type=int, default=1)
    p.add_argument("--clusters", type=int, default=2,
                   help="true path count of the synthetic draws")
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--frames-val", type=int, default=10)
    p.add_argument("--slots", type=int, default=48)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--lag", type=int, default=3)
    p.add_argument("--l-train", type=int, default=20)
    p.add_argument("--snr-db", type=float, default=20.0)
    p.add_argument("--lam", type=float, default=0.1)
    p.add_argument("--k-max", type=int, default=6)
    p.add_argument("--out", default=None, help="write the criterion curve CSV")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("selftest", help="run the built-in sanity battery")
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
