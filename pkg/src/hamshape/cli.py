"""Command-line front end: a thin client of the hamshape service.

Subcommands fit / cv / simulate / emg / report post the run config to the
service API and write the returned files. By default the service app runs
in-process (no socket); pass ``--server URL`` to talk to a remote
instance started with ``hamshape serve``. ``synth`` generates a local
demo dataset. Exit codes: 0 ok, 2 config, 3 data, 4 solver,
5 integration, 1 anything else. Set HAMSHAPE_LOG=debug|info|... for log
level.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import httpx

from .config import load_config
from .errors import (
    EXIT_FAILURE,
    EXIT_OK,
    ConfigError,
    HamshapeError,
    error_kind,
    exit_code_for,
)

logger = logging.getLogger("hamshape.cli")


class ServiceError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class ServiceClient:
    """HTTP client for the pipeline API, in-process unless a URL is given."""

    def __init__(self, server: str | None = None, timeout: float = 600.0):
        self.server = server
        self.timeout = timeout

    def post(self, endpoint: str, payload: dict) -> dict:
        if self.server:
            with httpx.Client(base_url=self.server, timeout=self.timeout) as client:
                resp = client.post(endpoint, json=payload)
        else:
            resp = asyncio.run(self._post_local(endpoint, payload))
        if resp.status_code != 200:
            try:
                detail = resp.json().get("detail", {})
            except ValueError:
                detail = {}
            raise ServiceError(detail.get("kind", "internal"),
                               detail.get("message", resp.text))
        return resp.json()

    async def _post_local(self, endpoint: str, payload: dict):
        from .service import app

        transport = httpx.ASGITransport(app=app)
        async with httpx.AsyncClient(transport=transport,
                                     base_url="http://hamshape.local",
                                     timeout=self.timeout) as client:
            return await client.post(endpoint, json=payload)


def _write_atomic(path: Path, content: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_files(out_dir: Path, files: dict) -> None:
    for name, content in files.items():
        _write_atomic(out_dir / name, content)
        print(f"wrote {out_dir / name}")


def _print_summary(summary: dict) -> None:
    for key, value in summary.items():
        if isinstance(value, dict):
            print(f"{key}:")
            for k2, v2 in value.items():
                print(f"  {k2}: {v2}")
        else:
            print(f"{key}: {value}")


def _overrides(args) -> dict:
    out = {}
    if getattr(args, "mode", None):
        out["mode"] = args.mode
    if getattr(args, "lam", None) is not None:
        out["lambda"] = args.lam
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    return out


def _run_pipeline(args, endpoint: str) -> int:
    doc = load_config(args.config, overrides=_overrides(args))
    out_dir = Path(args.out) if args.out else Path(doc.get("out_dir", "out"))
    client = ServiceClient(args.server)

    sweep = getattr(args, "lambda_sweep", None)
    if sweep:
        values = [float(v) for v in sweep.split(",") if v.strip()]
        if not values:
            raise ConfigError("--lambda-sweep needs a comma-separated list")
        for lam in values:
            doc_l = dict(doc)
            doc_l["lambda"] = lam
            result = client.post(endpoint, {"config": doc_l})
            sub = out_dir / f"lambda_{lam:g}"
            print(f"--- lambda = {lam:g} ---")
            _print_summary(result["summary"])
            _write_files(sub, result["files"])
        return EXIT_OK

    result = client.post(endpoint, {"config": doc})
    _print_summary(result["summary"])
    _write_files(out_dir, result["files"])
    return EXIT_OK


def cmd_synth(args) -> int:
    import numpy as np

    from .basis import default_basis
    from .dataio import write_dataset
    from .model import ModelParams
    from .synthetic import make_synthetic_dataset

    params = ModelParams.from_anthropometry()
    basis = alpha0 = None
    if args.planted != "none":
        basis = default_basis(args.planted)
        rng = np.random.default_rng(args.seed)
        alpha0 = rng.uniform(-0.8, 0.8, basis.w)
    dataset = make_synthetic_dataset(
        params, basis=basis, alpha0=alpha0, n_subjects=args.subjects,
        n=args.points, seed=args.seed, noise=args.noise)

    out = Path(args.out)
    write_dataset(dataset, out / "dataset")
    _write_atomic(out / "params.json",
                  json.dumps(params.to_dict(), sort_keys=True, indent=2) + "\n")
    config = {
        "model_params": "params.json",
        "dataset": "dataset",
        "mode": "phi",
        "lambda": 0.05,
        "out_dir": "out",
        "seed": args.seed,
    }
    _write_atomic(out / "config.json",
                  json.dumps(config, sort_keys=True, indent=2) + "\n")
    print(f"wrote synthetic dataset ({args.subjects} subjects, "
          f"{len(dataset)} strides) under {out}")
    if alpha0 is not None:
        _write_atomic(out / "planted_alpha.json",
                      json.dumps({"mode": args.planted,
                                  "alpha": [float(a) for a in alpha0]},
                                 sort_keys=True, indent=2) + "\n")
        print(f"planted {args.planted.upper()} coefficients saved to "
              f"{out / 'planted_alpha.json'}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("hamshape.service:app", host=args.host, port=args.port,
                log_level=os.environ.get("HAMSHAPE_LOG", "info").lower())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hamshape",
        description="Energy-shaping controller synthesis for a planar "
                    "biped hip-exoskeleton model.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_pipeline(name, help_text, endpoint, sweep=False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--mode", choices=["wop", "phi"], help="basis mode override")
        p.add_argument("--lambda", dest="lam", type=float,
                       help="L1 coefficient override")
        p.add_argument("--out", help="output directory (default: config out_dir)")
        p.add_argument("--seed", type=int, help="seed override")
        p.add_argument("--server", help="remote service URL (default: in-process)")
        if sweep:
            p.add_argument("--lambda-sweep", dest="lambda_sweep",
                           help="comma-separated lambdas; one fit per value")
        p.set_defaults(func=lambda a, ep=endpoint: _run_pipeline(a, ep))
        return p

    add_pipeline("fit", "fit shaping coefficients to normative torques",
                 "/fit", sweep=True)
    add_pipeline("cv", "leave-one-subject-out cross-validation (PHI and WOP)",
                 "/cv")
    add_pipeline("simulate", "closed-loop stance simulation with energy audit",
                 "/simulate")
    add_pipeline("emg", "process EMG logs into muscle-effort tables", "/emg")
    add_pipeline("report", "re-render tables from a saved fit result", "/report")

    p_synth = sub.add_parser("synth", help="generate a synthetic demo dataset")
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.add_argument("--subjects", type=int, default=10)
    p_synth.add_argument("--points", type=int, default=150)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--noise", type=float, default=0.0,
                         help="torque noise sigma in Nm/kg")
    p_synth.add_argument("--planted", choices=["none", "wop", "phi"],
                         default="none",
                         help="make torques an exact controller output")
    p_synth.set_defaults(func=cmd_synth)

    p_serve = sub.add_parser("serve", help="run the HTTP service with uvicorn")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8080)
    p_serve.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    level = os.environ.get("HAMSHAPE_LOG", "WARNING").upper()
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ServiceError as e:
        print(f"error ({e.kind}): {e}", file=sys.stderr)
        return exit_code_for(e.kind)
    except HamshapeError as e:
        kind = error_kind(e)
        print(f"error ({kind}): {e}", file=sys.stderr)
        return exit_code_for(kind)
    except httpx.HTTPError as e:
        print(f"error (connection): {e}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as e:
        print(f"error (io): {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
