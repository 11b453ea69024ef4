"""Command-line entry point: ``pmdrift {simulate,verify,convergence,oracle}``."""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ConfigError, parse_config_list
from .runner import _run_job

COMMANDS = {
    "simulate": ("simulate",),
    "verify": ("classify", "touching", "comparison"),
    "convergence": ("convergence",),
    "oracle": ("barenblatt-oracle",),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pmdrift", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, kinds in COMMANDS.items():
        p = sub.add_parser(name, help=f"run {' / '.join(kinds)} experiments")
        p.add_argument("--config", required=True, help="JSON config (object or list of objects)")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, help="random seed (overrides the config)")
        p.add_argument("--jobs", type=int, default=1, help="experiments run concurrently")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        text = Path(args.config).read_text()
        configs = parse_config_list(text)
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed: must be an unsigned 64-bit integer")
        if args.jobs < 1:
            raise ConfigError("--jobs: must be >= 1")
        allowed = COMMANDS[args.command]
        for i, cfg in enumerate(configs):
            if cfg.kind not in allowed:
                raise ConfigError(f"config[{i}].kind: {cfg.kind!r} is not handled by "
                                  f"'{args.command}' (expected {', '.join(allowed)})")
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    jobs = []
    for i, cfg in enumerate(configs):
        out = args.out
        if out is not None and len(configs) > 1:
            out = str(Path(out) / f"{i:03d}-{cfg.kind}")
        jobs.append((cfg, out, args.seed))
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            manifests = list(pool.map(_run_job, jobs))
    else:
        manifests = [_run_job(j) for j in jobs]

    code = 0
    for man in manifests:
        out = man["config"]["output"]
        if man["status"] != "ok":
            print(f"{man['config']['kind']}: FAILED ({man['error']}) -> {out}")
            code = 2
        else:
            print(f"{man['config']['kind']}: {'PASS' if man['passed'] else 'FAIL'} -> {out}")
            if not man["passed"] and code == 0:
                code = 1
    return code


if __name__ == "__main__":
    sys.exit(main())
