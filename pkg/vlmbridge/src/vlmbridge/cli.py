"""Command line entry point.

    vlmbridge run --job job.json [--backend synthetic] [--device cpu]

The job file names the video, view, trial, pipeline variant, and the two
output paths. Exit codes: 0 success, 2 bad job, 3 bad input data,
4 model load failure.
"""

import argparse
import logging
import sys

from .adapter import run_job
from .errors import AdapterError
from .job import BACKENDS, DEVICES, load_job

log = logging.getLogger("vlmbridge")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vlmbridge")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="execute one adapter job")
    run.add_argument("--job", required=True, help="job description JSON")
    run.add_argument("--backend", choices=BACKENDS, default=None)
    run.add_argument("--device", choices=DEVICES, default=None)
    run.add_argument(
        "--log-level",
        choices=("debug", "info", "warning", "error"),
        default="info",
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper()),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        job = load_job(args.job, {"backend": args.backend, "device": args.device})
        paths = run_job(job)
    except AdapterError as exc:
        log.error("%s", exc)
        return exc.exit_code
    print(paths["detections"])
    print(paths["features"])
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
