"""Command-line front end.

    bfla --nq 2048 --nkv 2048 --gamma 0.99 --report json-like
    bfla --sweep gamma=0.95,0.99,0.999 --sweep b=256,512 --out sweep.csv
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .config import BflaConfig, load_config
from .errors import ConfigError
from .pipeline import CSV_COLUMNS, DEFAULT_SWEEP_CAP, parse_sweep, run, sweep
from .stage2 import to_pgm

FLAG_TO_FIELD = {
    "b": "b", "g": "g", "gamma": "gamma", "tile": "tile", "n_local": "n_local",
    "eta": "eta", "rho": "rho", "seed": "seed", "hq": "hq", "hkv": "hkv", "nq": "nq",
    "nkv": "nkv", "dim": "dim", "precision": "precision", "dist": "dist", "oracle": "oracle",
}


def _plain(v):
    if isinstance(v, np.generic):
        return v.item()
    return v


def fmt_value(v) -> str:
    v = _plain(v)
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def to_csv(rows: list[dict]) -> str:
    lines = [",".join(CSV_COLUMNS)]
    lines += [",".join(fmt_value(r[c]) for c in CSV_COLUMNS) for r in rows]
    return "\n".join(lines) + "\n"


def to_json(obj, indent: int = 0) -> str:
    """JSON with every float written at 17 significant digits."""
    obj = _plain(obj)
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {to_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{inner}{to_json(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, float):
        if obj != obj or obj in (float("inf"), float("-inf")):
            return "null"
        return format(obj, ".17g")
    if isinstance(obj, int):
        return str(obj)
    return json.dumps(obj)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bfla", description="Block-filtered sparse prefill attention (CPU reference)")
    ap.add_argument("--config", metavar="PATH", help="flat key = value config file")
    ap.add_argument("--b", type=int)
    ap.add_argument("--g", type=int)
    ap.add_argument("--gamma", type=float)
    ap.add_argument("--tile", type=int)
    ap.add_argument("--n-local", dest="n_local", type=int)
    ap.add_argument("--eta", type=int, help="stride period, 0 disables")
    ap.add_argument("--rho", type=float)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--hq", type=int)
    ap.add_argument("--hkv", type=int)
    ap.add_argument("--nq", type=int)
    ap.add_argument("--nkv", type=int)
    ap.add_argument("--dim", type=int)
    ap.add_argument("--precision", choices=["f32", "f64"])
    ap.add_argument("--dist", choices=["gaussian", "clustered"])
    ap.add_argument("--oracle", choices=["on", "off", "auto"])
    ap.add_argument("--bound-check", action="store_true", default=None)
    ap.add_argument("--dump-mask", metavar="PATH", help="write KV head 0's tile mask as a P2 greymap")
    ap.add_argument("--report", choices=["csv", "json-like"], default="csv")
    ap.add_argument("--out", metavar="PATH", help="report destination (default stdout)")
    ap.add_argument("--sweep", action="append", metavar="KEY=V1,V2,...", default=[])
    ap.add_argument("--max-grid", type=int, default=DEFAULT_SWEEP_CAP)
    ap.add_argument("--timing", action="store_true", help="include wall-clock timings (breaks byte-reproducibility)")
    ap.add_argument("--workers", type=int, default=1)
    return ap


def config_from_args(args) -> BflaConfig:
    cfg = load_config(args.config) if args.config else BflaConfig()
    overrides = {f: getattr(args, flag) for flag, f in FLAG_TO_FIELD.items() if getattr(args, flag) is not None}
    if args.bound_check:
        overrides["bound_check"] = True
    return cfg.with_values(**overrides).validate()


def _emit(text: str, path: str | None):
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        if args.sweep:
            if args.dump_mask:
                raise ConfigError("--dump-mask is only available for single runs")
            reports = sweep(cfg, parse_sweep(args.sweep), cap=args.max_grid, timing=args.timing, workers=args.workers)
        else:
            reports = [run(cfg, timing=args.timing, workers=args.workers)]
    except ConfigError as exc:
        print(f"bfla: configuration error: {exc}", file=sys.stderr)
        return 2

    if args.report == "csv":
        text = to_csv([r.csv_row() for r in reports])
    else:
        records = [r.as_record() for r in reports]
        text = to_json(records[0] if not args.sweep else records) + "\n"
    _emit(text, args.out)
    if args.dump_mask:
        with open(args.dump_mask, "w") as fh:
            fh.write(to_pgm(reports[0].mask))

    failed = [(i, k) for i, r in enumerate(reports) for k, ok in r.checks.items() if not ok]
    for i, k in failed:
        print(f"bfla: internal check failed (run {i}): {k}", file=sys.stderr)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
