"""Command line entry point: ``nwp-dwarfs <dwarf> --config file.json`` and ``nwp-dwarfs regress``."""

from __future__ import annotations

import argparse
import json
import sys

from nwp_dwarfs import harness as h
from nwp_dwarfs.grids import ContractError

# flag -> config key, per dwarf; flags override the config file
FLAGS = {
    "sht": {"truncation": int, "nlev": int, "iters": int, "fields": int, "norms": int},
    "bifourier": {"nx": int, "ny": int, "ext": int, "kind": str, "nfld": int, "iters": int},
    "gcr": {},
    "cloudsc": {},
    "laitri": {"kqm": int, "npoints": int, "nlev": int},
    "sladv": {},
}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nwp-dwarfs", description="Run and verify desk-scale NWP dwarfs.")
    sub = ap.add_subparsers(dest="command", required=True)
    for dwarf in h.DWARFS:
        p = sub.add_parser(dwarf, help=f"run the {dwarf} dwarf")
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--threads", type=int)
        p.add_argument("--out", help=f"output directory (default ${h.OUT_ENV})")
        p.add_argument("--seed", type=int)
        for flag, kind in FLAGS[dwarf].items():
            p.add_argument(f"--{flag}", type=kind, dest=f"opt_{flag}")
        if dwarf == "cloudsc":
            p.add_argument("omp", nargs="?", type=int, help="threads")
            p.add_argument("ngptot", nargs="?", type=int)
            p.add_argument("nproma", nargs="*", type=int, help="block sizes")
    r = sub.add_parser("regress", help="run the pinned-value regression suite")
    r.add_argument("--suite", default="all")
    r.add_argument("--pinned", help="directory holding <dwarf>.json pin files")
    r.add_argument("--slow", action="store_true", help="include the slow checks")
    return ap


def _error(kind: str, exc: Exception) -> None:
    print(f"error kind={kind} type={type(exc).__name__} message={json.dumps(str(exc))}", file=sys.stderr)


def _build_config(args) -> h.DwarfConfig:
    doc = {}
    if args.config:
        cfg = h.parse_config(args.config)
        if cfg.dwarf != args.command:
            raise h.ConfigError(f"config is for {cfg.dwarf}, not {args.command}", "dwarf")
        doc = cfg.to_dict()
    doc["dwarf"] = args.command
    for flag in FLAGS[args.command]:
        v = getattr(args, f"opt_{flag}")
        if v is not None:
            doc[flag] = v
    if args.command == "cloudsc":
        if args.omp is not None:
            doc["threads"] = args.omp
        if args.ngptot is not None:
            doc["ngptot"] = args.ngptot
        if args.nproma:
            doc["nproma"] = args.nproma
    if args.threads is not None:
        doc["threads"] = args.threads
    if args.seed is not None:
        doc["seed"] = args.seed
    return h.config_from_dict(doc)


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "regress":
        try:
            summary = h.regress(args.suite, args.pinned, args.slow)
        except h.ConfigError as e:
            _error("config", e)
            return h.EXIT_CONFIG
        print("\n".join(summary.lines()))
        return h.EXIT_OK if summary.passed else h.EXIT_FAIL
    try:
        cfg = _build_config(args)
    except h.ConfigError as e:
        _error("config", e)
        return h.EXIT_CONFIG
    try:
        rep = h.run_dwarf(cfg, args.out)
    except h.ConfigError as e:
        _error("config", e)
        return h.EXIT_CONFIG
    except (ContractError, ArithmeticError, RuntimeError) as e:
        _error("dwarf", e)
        return h.EXIT_FAIL
    for k, v in [("dwarf", rep.dwarf), ("passed", rep.passed), ("seconds", rep.seconds)] + rep.metrics + [("checksum", rep.checksum)]:
        print(f"{k},{h._fmt(v)}")
    return h.EXIT_OK if rep.passed else h.EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
