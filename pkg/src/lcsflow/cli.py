"""Command-line client.

Every verb builds a request and sends it to the service, in-process by
default or to ``--server URL``. ``serve`` runs the service itself.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings

from .errors import ConfigError, FormatError, LcsError

VERBS = ("simulate", "ftle", "isle", "ridges", "convergence", "bench", "trace")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}")


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}")


def _params(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"model parameter {item!r} is not key=value")
        try:
            out[key] = float(value)
        except ValueError:
            raise ConfigError(f"model parameter {key} needs a number, got {value!r}") from None
    return out


def _seeds(text: str) -> list[list[float]]:
    pts = []
    for pair in text.split(";"):
        if pair.strip():
            x, y = _floats(pair)
            pts.append([x, y])
    return pts


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lcsflow", description="Eulerian FTLE / ISLE diagnostics")
    p.add_argument("--server", help="send requests to a running service at this URL")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def model_args(sp):
        sp.add_argument("--model", default="double-gyre",
                        help="double-gyre | quad-saddle | duffing | gridded:<header> (also linear-saddle, "
                             "rotation, zero, uniform:u,v)")
        sp.add_argument("--param", action="append", metavar="KEY=VALUE", help="model parameter, repeatable")
        sp.add_argument("--extents", type=_floats, help="x_min,x_max,y_min,y_max")

    s = sub.add_parser("simulate", help="forward run; writes the envelope volume and the final map")
    model_args(s)
    s.add_argument("--nx", type=int)
    s.add_argument("--ny", type=int)
    s.add_argument("--spacing", type=float)
    s.add_argument("--t0", type=float, default=0.0)
    s.add_argument("--T", type=float, default=10.0)
    s.add_argument("--checkpoints", type=int, default=100)
    s.add_argument("--scheme", choices=["tvdrk2", "euler1"], default="tvdrk2")
    s.add_argument("--cfl", type=float, default=0.5)
    s.add_argument("--composition", choices=["bilinear", "bicubic"], default="bilinear")
    s.add_argument("--keep-every", type=int, default=0, help="dump every k-th composed map")
    s.add_argument("--clamp-negative-ftle", action="store_true")
    s.add_argument("-o", "--output", default="out")

    s = sub.add_parser("ftle", help="FTLE field from a map or volume file")
    s.add_argument("input")
    s.add_argument("--t", type=float)
    s.add_argument("--checkpoint", type=int)
    s.add_argument("--clamp-negative-ftle", action="store_true")
    s.add_argument("-o", "--output", default="out")

    s = sub.add_parser("isle", help="ISLE fields for several separation factors")
    s.add_argument("volume")
    s.add_argument("--r", type=_floats, required=True, help="comma list, e.g. 3,10,20")
    s.add_argument("-o", "--output", default="out")

    s = sub.add_parser("ridges", help="ridge point list of a field, map or volume")
    s.add_argument("input")
    s.add_argument("--t", type=float)
    s.add_argument("--percentile", type=float, default=90.0)
    s.add_argument("--smoothing", type=int, default=1)
    s.add_argument("--rate", type=float, help="suggest r = exp(rate * t)")
    s.add_argument("--volume", help="envelope volume for the tube check")
    s.add_argument("--r", type=float, help="separation factor for the tube check")
    s.add_argument("--rho-cells", type=float, default=3.0)
    s.add_argument("-o", "--output", default="out")

    s = sub.add_parser("convergence", help="flow-map error against RK4 over several grids")
    model_args(s)
    s.add_argument("--spacings", type=_floats, default=[1 / 16, 1 / 32, 1 / 64, 1 / 128])
    s.add_argument("--t0", type=float, default=0.0)
    s.add_argument("--T", type=float, default=10.0)
    s.add_argument("--checkpoints", type=int, default=100)
    s.add_argument("--dt-ref", type=float, default=1e-3)
    s.add_argument("--no-scale-dt", action="store_true")
    s.add_argument("--interior-cells", type=int,
                   help="measure only seeds that stay inside, this many cells clear of any that leave")
    s.add_argument("-o", "--output", default="out")

    s = sub.add_parser("bench", help="wall-clock scaling over grid sizes")
    model_args(s)
    s.add_argument("--sizes", type=_ints, default=[65, 129])
    s.add_argument("--t0", type=float, default=0.0)
    s.add_argument("--T", type=float, default=1.0)
    s.add_argument("--legacy", action="store_true", help="one backward solve per checkpoint")
    s.add_argument("-o", "--output")

    s = sub.add_parser("trace", help="RK4 particle trace (oracle)")
    model_args(s)
    s.add_argument("--seeds", type=_seeds, required=True, help="x,y;x,y;...")
    s.add_argument("--t0", type=float, default=0.0)
    s.add_argument("--t1", type=float, default=10.0)
    s.add_argument("--dt-sub", type=float, default=1e-3)
    s.add_argument("-o", "--output")

    s = sub.add_parser("serve", help="run the HTTP service")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    return p


def request_body(args) -> dict:
    v = args.verb
    if v == "simulate":
        return {"model": args.model, "params": _params(args.param), "extents": args.extents,
                "nx": args.nx, "ny": args.ny, "spacing": args.spacing, "t0": args.t0, "T": args.T,
                "checkpoints": args.checkpoints, "scheme": args.scheme, "cfl": args.cfl,
                "composition": args.composition, "output": args.output, "keep_every": args.keep_every,
                "clamp_negative_ftle": args.clamp_negative_ftle}
    if v == "ftle":
        return {"input": args.input, "t": args.t, "checkpoint": args.checkpoint, "output": args.output,
                "clamp_negative_ftle": args.clamp_negative_ftle}
    if v == "isle":
        return {"volume": args.volume, "r": args.r, "output": args.output}
    if v == "ridges":
        return {"input": args.input, "t": args.t, "percentile": args.percentile,
                "smoothing": args.smoothing, "output": args.output, "rate": args.rate,
                "volume": args.volume, "r": args.r, "rho_cells": args.rho_cells}
    if v == "convergence":
        return {"model": args.model, "params": _params(args.param), "extents": args.extents,
                "spacings": args.spacings, "t0": args.t0, "T": args.T, "checkpoints": args.checkpoints,
                "dt_ref": args.dt_ref, "scale_dt": not args.no_scale_dt,
                "interior_cells": args.interior_cells, "output": args.output}
    if v == "bench":
        return {"model": args.model, "params": _params(args.param), "extents": args.extents,
                "sizes": args.sizes, "t0": args.t0, "T": args.T, "legacy": args.legacy,
                "output": args.output}
    if v == "trace":
        return {"model": args.model, "params": _params(args.param), "seeds": args.seeds,
                "t0": args.t0, "t1": args.t1, "dt_sub": args.dt_sub, "output": args.output}
    raise ConfigError(f"unknown verb {v}")


def _client(server):
    if server:
        import httpx

        return httpx.Client(base_url=server, timeout=None)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service import app

    return TestClient(app, raise_server_exceptions=True)


def _report(verb: str, body: dict):
    if verb == "simulate":
        for n, (c, s) in enumerate(zip(body["clamp_counts"], body["checkpoint_seconds"]), 1):
            print(f"checkpoint {n:5d}  clamped {c:7d}  {s:8.3f} s")
        print(f"volume {body['volume']}\nflow map {body['flowmap']}\n"
              f"clamp events {body['clamp_total']}  wall {body['wall_seconds']:.2f} s")
    elif verb == "isle":
        for f in body["fields"]:
            print(f"r={f['r']:g}  support {f['support']}  {f['text']}")
        for w in body["warnings"]:
            print(f"warning: {w}", file=sys.stderr)
        for rej in body["rejected"]:
            print(f"rejected r={rej['r']:g}: {rej['error']}", file=sys.stderr)
    elif verb == "convergence":
        print(f"{'dx':>12} {'err_phi':>12} {'err_psi':>12}")
        for row in body["rows"]:
            print(f"{row['dx']:12.6g} {row['error_phi']:12.4e} {row['error_psi']:12.4e}")
        print(f"slope phi {body['slope_phi']}  slope psi {body['slope_psi']}")
        for note in body["notes"]:
            print(note)
    elif verb == "bench":
        for row in body["rows"]:
            print(f"N={row['N']:5d} M={row['M']:5d} {row['seconds']:9.3f} s")
        for r, o in zip(body["ratios"], body["observed_orders"]):
            print(f"ratio {r:.2f} (order {o:.2f})")
    else:
        print(json.dumps({k: v for k, v in body.items() if k not in ("config",)}, indent=2, default=str))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.verb == "serve":
        import uvicorn

        uvicorn.run("lcsflow.service:app", host=args.host, port=args.port)
        return 0
    try:
        body = request_body(args)
        with _client(args.server) as client:
            resp = client.post(f"/{args.verb}", json=body)
    except LcsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return FormatError.exit_code
    data = resp.json()
    if resp.status_code != 200:
        print(f"error ({data.get('kind', 'error')}): {data.get('error')}", file=sys.stderr)
        return int(data.get("exit_code", 2))
    _report(args.verb, data)
    if args.verb == "isle" and data["rejected"]:
        return ConfigError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
