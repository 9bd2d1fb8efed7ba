"""Command-line entry point.

``cfurllc run`` executes an experiment locally by default; with --server it
posts the same configuration to a running service, polls the job, and
downloads the produced files, so both paths leave identical bytes in --out.
``cfurllc serve`` starts the HTTP service.  Invocations that skip the
subcommand (``cfurllc --config ... --out ...``) are treated as ``run``.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from .harness import (
    RunConfig,
    SweepTuple,
    config_from_mapping,
    config_to_mapping,
    load_config,
    run_experiment,
    write_outputs,
)

_TUPLE_FLAG_DEFAULTS = {
    "network": "cf",
    "scheme": "iia",
    "objective": "sum",
    "direction": "dl",
}


def _default_beamformer(network: str, direction: str) -> str:
    return "pzf" if network == "cf" else "zf"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfurllc",
        description="Cell-free massive MIMO URLLC simulator and power-control optimizer.",
    )
    sub = parser.add_subparsers(dest="command")

    run = sub.add_parser("run", help="run an experiment and write results")
    run.add_argument("--config", type=Path, help="flat key=value configuration file")
    run.add_argument("--scenarios", type=int, help="number of Monte-Carlo scenarios")
    run.add_argument("--seed", type=int, help="master seed")
    run.add_argument("--direction", choices=("ul", "dl"))
    run.add_argument("--objective", choices=("sum", "min"))
    run.add_argument("--network", choices=("cf", "co"))
    run.add_argument("--beamformer", choices=("pzf", "mrt", "mrc", "zf"))
    run.add_argument("--scheme", choices=("iia", "icba"))
    run.add_argument("--workers", type=int, help="parallel scenario workers")
    run.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    run.add_argument("--server", help="service URL; run remotely instead of in-process")

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--work-dir", type=Path, help="directory for experiment outputs")
    return parser


def config_from_args(args) -> RunConfig:
    """Materialize the run configuration: file first, then flag overrides.

    Any of the five tuple flags narrows the sweep to a single tuple, with
    unset parts defaulted (network cf, scheme iia, objective sum,
    direction dl, beamformer matching the network/direction).
    """
    if args.config is not None:
        cfg = load_config(args.config)
    else:
        cfg = RunConfig()
    mapping = config_to_mapping(cfg)
    if not cfg.sweep:
        mapping.pop("run.sweep")
    if args.scenarios is not None:
        mapping["run.scenarios"] = args.scenarios
    if args.seed is not None:
        mapping["run.seed"] = args.seed
    if args.workers is not None:
        mapping["run.workers"] = args.workers

    tuple_flags = {
        "network": args.network,
        "beamformer": args.beamformer,
        "scheme": args.scheme,
        "objective": args.objective,
        "direction": args.direction,
    }
    if any(v is not None for v in tuple_flags.values()):
        parts = {
            key: value if value is not None else _TUPLE_FLAG_DEFAULTS[key]
            for key, value in tuple_flags.items()
            if key != "beamformer"
        }
        beamformer = args.beamformer or _default_beamformer(
            parts["network"], parts["direction"]
        )
        tup = SweepTuple(
            network=parts["network"],
            beamformer=beamformer,
            scheme=parts["scheme"],
            objective=parts["objective"],
            direction=parts["direction"],
        )
        mapping["run.sweep"] = tup.label
    return config_from_mapping(mapping)


def _run_local(cfg: RunConfig, out_dir: Path) -> dict:
    result = run_experiment(cfg)
    return write_outputs(result, out_dir)


def _run_remote(cfg: RunConfig, out_dir: Path, server: str, poll_s: float = 0.5) -> dict:
    import httpx

    base = server.rstrip("/")
    payload = {"config": config_to_mapping(cfg)}
    with httpx.Client(base_url=base, timeout=300.0) as client:
        resp = client.post("/experiments", json=payload)
        resp.raise_for_status()
        job_id = resp.json()["id"]
        while True:
            status = client.get(f"/experiments/{job_id}")
            status.raise_for_status()
            body = status.json()
            if body["state"] == "done":
                break
            if body["state"] == "error":
                raise RuntimeError(f"experiment failed on server: {body['detail']}")
            time.sleep(poll_s)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = {}
        for name in body["files"]:
            content = client.get(f"/experiments/{job_id}/files/{name}")
            content.raise_for_status()
            path = out_dir / name
            path.write_bytes(content.content)
            written[name] = str(path)
    return written


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] not in ("run", "serve", "-h", "--help"):
        argv.insert(0, "run")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 2

    if args.command == "serve":
        import uvicorn

        from .service import create_app

        work_dir = str(args.work_dir) if args.work_dir else None
        uvicorn.run(create_app(work_dir=work_dir), host=args.host, port=args.port)
        return 0

    try:
        cfg = config_from_args(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.server:
        written = _run_remote(cfg, args.out, args.server)
    else:
        written = _run_local(cfg, args.out)
    for name in sorted(written):
        print(written[name])
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
