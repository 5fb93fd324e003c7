"""Thin command-line client for the evaluation service.

Every subcommand is an HTTP call. With ``--server`` the request goes to a
running instance; without it the service app is mounted in-process, so the
commands work standalone on a single machine. Exit codes: 0 success, 1
validation/config error, 2 runtime failure (store I/O, transport).

Commands::

    offab simulate --config sim.json --out logs.jsonl --records 1000 --seed 7
    offab evaluate --logs logs.jsonl --config program.json --store runs/
    offab loop     --logs logs.jsonl --config program.json --store runs/ --max-runs 3
    offab report   --store runs/ --format markdown
    offab serve    --host 127.0.0.1 --port 8000
"""

from __future__ import annotations

import argparse
import sys

import httpx

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

_COMPLETED_STATUSES = ("ok", "empty_window")


def _make_client(server: str | None):
    if server:
        return httpx.Client(base_url=server, timeout=None)
    # In-process transport: requests still go through the full service stack.
    import warnings

    with warnings.catch_warnings():
        # starlette warns about its own test client backend at import time
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service.app import create_app

    return TestClient(create_app(), raise_server_exceptions=False)


def _fail(response) -> int:
    message = response.text
    try:
        detail = response.json().get("detail")
        if isinstance(detail, dict) and "message" in detail:
            message = detail["message"]
        elif detail is not None:
            message = str(detail)
    except ValueError:
        pass
    print(f"error: {message}", file=sys.stderr)
    return EXIT_VALIDATION if 400 <= response.status_code < 500 else EXIT_RUNTIME


def _run_line(summary: dict) -> str:
    parts = [f"run {summary['run_id']}", f"status={summary['status']}",
             f"records={summary['window_records']}"]
    if summary.get("best_value") is not None:
        parts.append(f"best={summary['best_value']:.6f}")
        if summary.get("ci_lo") is not None:
            parts.append(f"ci=[{summary['ci_lo']:.6f}, {summary['ci_hi']:.6f}]")
    flagged = summary.get("drift_flagged")
    if flagged is not None:
        parts.append("DRIFT" if flagged else "drift=none")
    return " ".join(parts)


def _cmd_simulate(client, args) -> int:
    payload = {
        "config_path": args.config,
        "out_path": args.out,
        "records": args.records,
        "seed": args.seed,
        "shift": args.shift,
    }
    response = client.post("/simulate", json=payload)
    if response.status_code != 200:
        return _fail(response)
    body = response.json()
    print(f"wrote {body['records_written']} records to {args.out} "
          f"(logging policy true value {body['true_value']:.6f})")
    return EXIT_OK


def _cmd_evaluate(client, args) -> int:
    payload = {"logs_path": args.logs, "config_path": args.config, "store_dir": args.store}
    response = client.post("/evaluate", json=payload)
    if response.status_code != 200:
        return _fail(response)
    summary = response.json()
    print(_run_line(summary))
    return EXIT_OK if summary["status"] in _COMPLETED_STATUSES else EXIT_RUNTIME


def _cmd_loop(client, args) -> int:
    payload = {
        "logs_path": args.logs,
        "config_path": args.config,
        "store_dir": args.store,
        "max_runs": args.max_runs,
        "poll_millis": args.poll_millis,
    }
    response = client.post("/loop", json=payload)
    if response.status_code != 200:
        return _fail(response)
    for summary in response.json()["runs"]:
        print(_run_line(summary))
    return EXIT_OK


def _cmd_report(client, args) -> int:
    response = client.get("/report", params={"store_dir": args.store, "format": args.format})
    if response.status_code != 200:
        return _fail(response)
    if args.out:
        with open(args.out, "wb") as fh:
            fh.write(response.content)
    else:
        sys.stdout.write(response.text)
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("offab.service.app:app", host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="offab", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_server(p):
        p.add_argument("--server", default=None,
                       help="base URL of a running service (default: in-process)")

    p = sub.add_parser("simulate", help="generate synthetic feedback logs")
    add_server(p)
    p.add_argument("--config", required=True, help="simulator config (JSON)")
    p.add_argument("--out", required=True, help="output log file (JSON lines)")
    p.add_argument("--records", required=True, type=int, help="number of records to generate")
    p.add_argument("--seed", required=True, type=int, help="generation seed")
    p.add_argument("--shift", type=float, default=0.0,
                   help="shift all reward means by this delta (clamped to [0, 1])")
    p.set_defaults(handler=_cmd_simulate, needs_client=True)

    p = sub.add_parser("evaluate", help="run one offline evaluation")
    add_server(p)
    p.add_argument("--logs", required=True, help="log file to evaluate against")
    p.add_argument("--config", required=True, help="program config (JSON)")
    p.add_argument("--store", required=True, help="results store directory")
    p.set_defaults(handler=_cmd_evaluate, needs_client=True)

    p = sub.add_parser("loop", help="run the periodic evaluation loop")
    add_server(p)
    p.add_argument("--logs", required=True, help="log file to poll")
    p.add_argument("--config", required=True, help="program config (JSON)")
    p.add_argument("--store", required=True, help="results store directory")
    p.add_argument("--max-runs", required=True, type=int, help="stop after this many runs")
    p.add_argument("--poll-millis", type=int, default=500, help="poll interval (default 500)")
    p.set_defaults(handler=_cmd_loop, needs_client=True)

    p = sub.add_parser("report", help="emit the cross-run report")
    add_server(p)
    p.add_argument("--store", required=True, help="results store directory")
    p.add_argument("--format", choices=("json", "markdown"), default="markdown")
    p.add_argument("--out", default=None, help="write to this file instead of stdout")
    p.set_defaults(handler=_cmd_report, needs_client=True)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(handler=_cmd_serve, needs_client=False)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if not args.needs_client:
        return args.handler(args)
    client = _make_client(args.server)
    try:
        return args.handler(client, args)
    except httpx.TransportError as exc:
        print(f"error: cannot reach service: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        client.close()


if __name__ == "__main__":
    sys.exit(main())
