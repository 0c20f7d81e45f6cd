"""Command-line front end: ``fsoqkd <subcommand> --config FILE --out DIR``."""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
import tempfile
import traceback

from . import pipeline
from .config import ConfigError, bundled_config_path, load_config

SUBCOMMANDS = {
    "simulate": "generate Alice/Bob time-tag streams (local or link run)",
    "pdtc": "reconstruct the transmittance histogram from a link run",
    "snrf-sweep": "sweep SNRF block duration and threshold, with key summary table",
    "decoy-scan": "static vs log-normal one-decoy key rates over loss and sigma",
    "satellite": "per-elevation key rates for a pass scenario, with and without SNRF",
    "selftest": "run the acceptance suite",
}

EXIT_FAILURE = 1
EXIT_CONFIG = 3


def build_parser():
    parser = argparse.ArgumentParser(prog="fsoqkd", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", required=True)
    for name, help_text in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="YAML experiment file; a bundled name such as "
                                        "'replica' also works")
        p.add_argument("--out", help="output directory (created if missing)")
        p.add_argument("--seed", type=int, help="override the config's root seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads for grid sweeps")
        p.add_argument("--debug-truth", action="store_true",
                       help="add the simulation ground-truth 'kind' column to stream CSVs")
        if name == "selftest":
            p.add_argument("--only", type=int, nargs="+", metavar="N",
                           help="run only these criterion numbers")
    return parser


def _resolve_config(spec):
    if spec is None:
        return None
    if os.path.exists(spec):
        return spec
    bundled = bundled_config_path(spec)
    if bundled.is_file():
        return str(bundled)
    return spec


def _run(args, out):
    if args.command == "selftest":
        from .acceptance import run_all
        results = run_all(threads=args.threads, only=args.only)
        for r in results:
            print(r.line(), flush=True)
        if out:
            pipeline.dump_json([r.__dict__ for r in results], os.path.join(out, "acceptance.json"))
        return all(r.passed for r in results)

    cfg = load_config(_resolve_config(args.config))
    if args.seed is not None:
        cfg.raw["seed"] = args.seed
    if args.command == "simulate":
        record = pipeline.run_simulate(cfg, out, debug_truth=args.debug_truth)
    elif args.command == "pdtc":
        record = pipeline.run_pdtc(cfg, out)
    elif args.command == "snrf-sweep":
        record = pipeline.run_snrf_sweep(cfg, out, threads=args.threads)
    elif args.command == "decoy-scan":
        record = pipeline.run_decoy_scan(cfg, out)
    else:
        record = pipeline.run_satellite(cfg, out)
    print(json.dumps(pipeline.clean_record(record), sort_keys=True))
    return True


def _publish(tmp, out):
    os.makedirs(out, exist_ok=True)
    for name in sorted(os.listdir(tmp)):
        os.replace(os.path.join(tmp, name), os.path.join(out, name))


def _error_record(command, exc):
    rec = {"status": "error", "command": command, "error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        rec["key_path"] = exc.path
        rec["message"] = exc.message
    return rec


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print(json.dumps({"status": "error", "command": args.command, "error": "ArgumentError",
                          "message": "--threads must be >= 1"}), file=sys.stderr)
        return 2
    if args.command != "selftest" and not args.out:
        print(json.dumps({"status": "error", "command": args.command, "error": "ArgumentError",
                          "message": "--out is required"}), file=sys.stderr)
        return 2
    tmp = None
    try:
        if args.out:
            parent = os.path.dirname(os.path.abspath(args.out)) or "."
            os.makedirs(parent, exist_ok=True)
            tmp = tempfile.mkdtemp(prefix=".fsoqkd-", dir=parent)
        ok = _run(args, tmp)
        if tmp:
            _publish(tmp, args.out)
        return 0 if ok else EXIT_FAILURE
    except Exception as exc:  # report every failure as a JSON record
        print(json.dumps(_error_record(args.command, exc)), file=sys.stderr)
        if os.environ.get("FSOQKD_TRACEBACK"):
            traceback.print_exc()
        return EXIT_CONFIG if isinstance(exc, ConfigError) else EXIT_FAILURE
    finally:
        if tmp and os.path.isdir(tmp):
            shutil.rmtree(tmp, ignore_errors=True)


if __name__ == "__main__":
    sys.exit(main())
