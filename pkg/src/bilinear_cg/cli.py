"""Command line interface.

    bilinear-cg run <config>      one experiment, writes CSV reports
    bilinear-cg sweep <config>    several levels with dt = h/2, plus error ratios
    bilinear-cg verify            property checks on small meshes
    bilinear-cg serve             start the HTTP service

``run``, ``sweep`` and ``verify`` execute in-process unless ``--server URL``
is given, in which case the work is submitted to a running service.

Exit status: 0 success, 1 a verification check failed, 2 bad config,
3 the outer iteration did not converge, 4 numerical instability.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time

from .config import ConfigError, load_config
from .pde import InstabilityError
from .projection import ProjectionNotConverged
from .runner import SUMMARY_HEADER, SWEEP_RATIOS, fmt, run_experiment, run_sweep, run_verify

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_NOT_CONVERGED = 3
EXIT_INSTABILITY = 4


def _status_code(statuses: list[str]) -> int:
    return EXIT_OK if all(s == "converged" for s in statuses) else EXIT_NOT_CONVERGED


def _print_table(header: list[str], rows: list[list[str]]) -> None:
    print(",".join(header))
    for row in rows:
        print(",".join(row))


def _local(args) -> int:
    if args.command == "verify":
        checks = run_verify(lambda c: print(c.line(), flush=True))
        failed = sum(not c.passed for c in checks)
        print(f"{len(checks) - failed}/{len(checks)} checks passed")
        return EXIT_VERIFY_FAILED if failed else EXIT_OK

    cfg = load_config(args.config)
    if args.command == "run":
        if cfg.level is None:
            raise ConfigError("'run' needs 'level' (use 'sweep' for 'levels')", None, args.config)
        result = run_experiment(cfg)
        _print_table(SUMMARY_HEADER, [result.summary_row()])
        print(f"wrote {len(result.files)} files to {cfg.output_dir}")
        return _status_code([result.report.status])
    sweep = run_sweep(cfg)
    _print_table(SUMMARY_HEADER + SWEEP_RATIOS, sweep.rows())
    print(f"wrote {sweep.path}")
    return _status_code([r.report.status for r in sweep.results])


def _remote(args) -> int:
    import httpx

    base = args.server.rstrip("/")
    with httpx.Client(base_url=base, timeout=args.timeout) as client:
        if args.command == "verify":
            resp = client.get("/verify")
            resp.raise_for_status()
            body = resp.json()
            for c in body["checks"]:
                flag = "PASS" if c["passed"] else "FAIL"
                print(f"{flag}  {c['name']:<44s} {c['value']:.3e}  (<= {c['threshold']:.0e})")
            return EXIT_OK if body["passed"] else EXIT_VERIFY_FAILED

        cfg = load_config(args.config)
        if args.command == "run" and cfg.level is None:
            raise ConfigError("'run' needs 'level' (use 'sweep' for 'levels')", None, args.config)
        resp = client.post("/jobs", json={"kind": args.command, "config": cfg.model_dump()})
        if resp.status_code == 422:
            print(f"error: server rejected config: {resp.json()['detail']}", file=sys.stderr)
            return EXIT_CONFIG
        resp.raise_for_status()
        job = resp.json()
        while job["state"] in ("queued", "running"):
            time.sleep(args.poll)
            resp = client.get(f"/jobs/{job['id']}")
            resp.raise_for_status()
            job = resp.json()

    if job["state"] == "failed":
        print(f"error: {job['error']}", file=sys.stderr)
        return EXIT_INSTABILITY if job["error_kind"] == "instability" else EXIT_NOT_CONVERGED
    header = SUMMARY_HEADER + (SWEEP_RATIOS if args.command == "sweep" else [])
    rows = []
    for r in job["rows"]:
        row = [
            str(r["level"]), fmt(r["h"]), fmt(r["dt"]), str(r["iter_cg"]), str(r["max_iter_pcg"]),
            fmt(r["err_u"]), fmt(r["err_y"]), fmt(r["rel_misfit"]), r["status"],
        ]
        if args.command == "sweep":
            row += ["" if r[k] is None else fmt(r[k]) for k in ("ratio_u_err", "ratio_y_err", "ratio_misfit")]
        rows.append(row)
    _print_table(header, rows)
    return _status_code([r["status"] for r in job["rows"]])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bilinear-cg", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def remote_opts(p):
        p.add_argument("--server", metavar="URL", help="submit to a running service instead of computing locally")
        p.add_argument("--timeout", type=float, default=30.0, help="HTTP timeout in seconds")
        p.add_argument("--poll", type=float, default=1.0, help="seconds between status polls")

    p = sub.add_parser("run", help="run one experiment")
    p.add_argument("config")
    remote_opts(p)
    p = sub.add_parser("sweep", help="run several levels and tabulate error ratios")
    p.add_argument("config")
    remote_opts(p)
    p = sub.add_parser("verify", help="run the property checks")
    remote_opts(p)
    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "serve":
        import uvicorn

        uvicorn.run("bilinear_cg.service.app:app", host=args.host, port=args.port)
        return EXIT_OK
    try:
        return _remote(args) if args.server else _local(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InstabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INSTABILITY
    except ProjectionNotConverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED


if __name__ == "__main__":
    sys.exit(main())
