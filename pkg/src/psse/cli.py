"""Command-line client for the estimation service.

Subcommands are thin wrappers over the HTTP endpoints. Without ``--server``
the service app is mounted in-process, so no running server is needed;
with ``--server URL`` the same requests go over the network and artifacts
are written locally either way.

Exit codes: 0 success, 2 config/schema error, 3 solver failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys
from pathlib import Path

import httpx

from psse.cases import BUNDLED, case_text as bundled_case_text

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_IO = 4

_KIND_EXIT = {"config": EXIT_CONFIG, "solver": EXIT_SOLVER, "io": EXIT_IO}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class ServiceClient:
    """POSTs to a remote server, or to the in-process app when none is given."""

    def __init__(self, server: str | None):
        self.server = server

    def post(self, path: str, payload: dict) -> dict:
        try:
            if self.server:
                with httpx.Client(base_url=self.server, timeout=None) as client:
                    response = client.post(path, json=payload)
            else:
                response = asyncio.run(self._post_inprocess(path, payload))
        except httpx.HTTPError as exc:
            raise CliError(EXIT_IO, f"cannot reach service: {exc}") from None
        if response.status_code in (200, 201):
            return response.json()
        detail = response.json().get("detail", {})
        if isinstance(detail, dict) and "kind" in detail:
            raise CliError(_KIND_EXIT.get(detail["kind"], EXIT_IO), detail["message"])
        raise CliError(EXIT_CONFIG, json.dumps(detail))

    @staticmethod
    async def _post_inprocess(path: str, payload: dict) -> httpx.Response:
        from psse.service.app import app

        transport = httpx.ASGITransport(app=app)
        async with httpx.AsyncClient(
            transport=transport, base_url="http://psse.internal", timeout=None
        ) as client:
            return await client.post(path, json=payload)


def _read_text(path: str, what: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {what} {path!r}: {exc}") from None


def _load_config(path: str) -> dict:
    text = _read_text(path, "config")
    try:
        config = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"{path}: invalid JSON ({exc})") from None
    if not isinstance(config, dict):
        raise CliError(EXIT_CONFIG, f"{path}: config must be a JSON object")
    return config


def _case_text_for(config: dict, config_dir: Path) -> str | None:
    """Inline the case file so remote servers never need our filesystem."""
    if config.get("case_text"):
        return None
    ref = config.get("case", "")
    if ref in BUNDLED:
        return bundled_case_text(ref)
    path = Path(ref)
    if not path.is_absolute():
        path = config_dir / path
    return _read_text(str(path), "case")


def cmd_run(args) -> int:
    config = _load_config(args.config)
    config_dir = Path(args.config).resolve().parent
    payload = {
        "config": config,
        "case_text": _case_text_for(config, config_dir),
        "trials": args.trials,
        "seed": args.seed,
        "solvers": args.solvers.split(",") if args.solvers else None,
    }
    body = ServiceClient(args.server).post("/run", payload)
    out_dir = Path(args.out or config.get("output_dir", "psse_out"))
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for artifact in body["artifacts"]:
            (out_dir / artifact["name"]).write_text(artifact["content"])
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write artifacts: {exc}") from None
    solvers = body["summary"]["solvers"]
    print(f"wrote {len(body['artifacts'])} artifacts to {out_dir}")
    for name, stats in solvers.items():
        rmse = stats["final_rmse"]["mean"]
        rmse_txt = "n/a" if rmse is None else f"{rmse:.3e}"
        print(
            f"  {name}: rmse={rmse_txt} objective={stats['final_objective']['mean']:.3e} "
            f"iters={stats['iterations']['mean']:.1f} time={stats['seconds']['mean']:.2f}s"
        )
    return EXIT_OK


def cmd_validate(args) -> int:
    config = _load_config(args.config)
    body = ServiceClient(args.server).post("/validate", {"config": config})
    if body["valid"]:
        print("config is valid")
        return EXIT_OK
    for err in body["errors"]:
        print(f"error: {err}", file=sys.stderr)
    return EXIT_CONFIG


def cmd_case_info(args) -> int:
    if args.case in BUNDLED:
        text = bundled_case_text(args.case)
    else:
        text = _read_text(args.case, "case")
    body = ServiceClient(args.server).post("/case-info", {"case_text": text})
    print(json.dumps(body, indent=1))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="psse", description="Robust LAV power system state estimation"
    )
    parser.add_argument("--server", help="service URL (default: run in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--out", help="artifact directory (default: config output_dir)")
    p_run.add_argument("--trials", type=int, help="override trial count")
    p_run.add_argument("--seed", type=int, help="override root seed")
    p_run.add_argument("--solvers", help="comma-separated subset of solver names")
    p_run.set_defaults(func=cmd_run)

    p_val = sub.add_parser("validate", help="check a config against the schema")
    p_val.add_argument("config")
    p_val.set_defaults(func=cmd_validate)

    p_info = sub.add_parser("case-info", help="summarize a case file")
    p_info.add_argument("case", help="path or bundled name (case14, case118)")
    p_info.set_defaults(func=cmd_case_info)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
