"""Command-line entry point: ``raybos {render,bos,trace-debug,validate}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .engine.config import ConfigError, load_config
from .engine.pipeline import TRACE_COLUMNS, bos_run, render, trace_debug
from .engine.validation import SUITES, validate


def _apply_overrides(cfg: dict, args) -> dict:
    run = cfg.setdefault("run", {})
    if getattr(args, "seed", None) is not None:
        cfg.setdefault("bundle", {})["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        run["threads"] = args.threads
    if getattr(args, "deterministic", None) is not None:
        run["deterministic"] = args.deterministic
    if getattr(args, "out", None) is not None:
        run["out"] = str(args.out)
    return cfg


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="Override bundle.seed")
    p.add_argument("--threads", type=int, default=None, help="Worker count (run.threads)")
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None,
                   help="Ordered reduction for bit-identical output")
    p.add_argument("--out", type=Path, default=None, help="Output directory (run.out)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="raybos", description="Ray-traced synthetic BOS/PIV images")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="Render the configured scene to a 16-bit PGM")
    p.add_argument("config", type=Path)
    _common(p)

    p = sub.add_parser("bos", help="Reference + gradient traces, displacement fields and metrics")
    p.add_argument("config", type=Path)
    _common(p)

    p = sub.add_parser("trace-debug", help="Per-step CSV record of a single ray")
    p.add_argument("config", type=Path)
    p.add_argument("--dot", type=int, required=True, help="Source index")
    p.add_argument("--ray", type=int, required=True, help="Ray index within the source bundle")
    p.add_argument("--no-field", action="store_true", help="Skip the density volume")
    _common(p)

    p = sub.add_parser("validate", help="Run a validation suite and print JSON results")
    p.add_argument("suite", choices=sorted(SUITES))
    p.add_argument("--rays", type=int, default=None, help="Rays per dot (BOS suites)")
    p.add_argument("--dots", type=int, default=None, help="Dot count (bos-uniform)")
    _common(p)
    return parser


def _cmd_render(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    _, report = render(cfg)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True, default=float))
    return 0


def _cmd_bos(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    res = bos_run(cfg)
    print(json.dumps(res.metrics, indent=2, default=float))
    return 0


def _cmd_trace_debug(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    rows = trace_debug(cfg, args.dot, args.ray, with_field=not args.no_field)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        fh = open(args.out / f"trace_dot{args.dot}_ray{args.ray}.csv", "w", newline="")
    else:
        fh = sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS, restval="")
        w.writeheader()
        w.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def _cmd_validate(args) -> int:
    kwargs = {}
    if args.suite in ("bos-uniform", "bos-blob"):
        for key in ("rays", "seed", "threads"):
            if getattr(args, key) is not None:
                kwargs[key] = getattr(args, key)
        if args.dots is not None and args.suite == "bos-uniform":
            kwargs["dots"] = args.dots
    result = validate(args.suite, **kwargs)
    text = json.dumps(result, indent=2, default=float)
    print(text)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / f"validate_{args.suite}.json").write_text(text)
    return 0 if result["passed"] else 1


COMMANDS = {"render": _cmd_render, "bos": _cmd_bos, "trace-debug": _cmd_trace_debug, "validate": _cmd_validate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
