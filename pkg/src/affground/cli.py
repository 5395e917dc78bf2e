"""Command-line front end.

Subcommands mirror the run drivers: train, eval, discover, ablate, plus
synth (synthetic corpus generation) and extract (feature-dump to cache
conversion). Every RunConfig field is exposed as a flag; a --config file
provides the base and flags override it.

Exit codes: 0 success, 2 input/config/data problems, 3 numeric failures.
"""

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import data, heads, trainer
from .config import RunConfig
from .errors import AffgroundError, InputError, NumericError


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got '{s}'")


def _add_dataclass_flags(parser: argparse.ArgumentParser, cls) -> None:
    for f in dataclasses.fields(cls):
        flag = "--" + f.name.replace("_", "-")
        if isinstance(f.default, bool):
            parser.add_argument(flag, dest=f.name, default=None,
                                type=_parse_bool, metavar="BOOL")
        else:
            parser.add_argument(flag, dest=f.name, default=None,
                                type=type(f.default))


def _config_from_args(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {}
    for f in dataclasses.fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            overrides[f.name] = v
    if overrides:
        cfg = cfg.replace(**overrides)
    cfg.validate()
    return cfg


def _print_epoch(log: trainer.EpochLog) -> None:
    line = (f"epoch {log.epoch:3d}  steps {log.steps:3d}  "
            f"ce {log.ce:.4f}  proto {log.proto:.4f}  pix {log.pix:.4f}  "
            f"total {log.total:.4f}  reliable {log.n_reliable}  "
            f"part_level {log.n_part_level}")
    if log.val:
        line += "  val " + " ".join(f"{k} {v:.4f}" for k, v in sorted(log.val.items()))
    print(line)


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    result = trainer.train(cfg, log_fn=_print_epoch)
    where = result.checkpoint_path or "(set --out-dir to write a checkpoint)"
    print(f"done: {result.steps_run} steps, {len(result.logs)} epochs, "
          f"checkpoint {where}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config_from_args(args)
    result = trainer.evaluate_checkpoint(args.checkpoint, cfg)
    if cfg.out_dir:
        trainer.write_eval_outputs(cfg.out_dir, result)
    m = result.means
    print(f"instances {len(result.rows)}  skipped {result.skipped}  "
          f"kld {m['kld']:.6f}  sim {m['sim']:.6f}  nss {m['nss']:.6f}")
    return 0


def cmd_discover(args) -> int:
    cfg = _config_from_args(args)
    params = None
    if args.checkpoint:
        params, _, _ = heads.load_checkpoint(args.checkpoint)
    rows = trainer.discover(cfg, params=params, out_dir=cfg.out_dir or None)
    n_rel = sum(1 for r in rows if r.reliable)
    print(f"instances {len(rows)}  reliable {n_rel}  "
          f"unreliable {len(rows) - n_rel}")
    return 0


def _load_grid(spec: str) -> dict:
    p = Path(spec)
    text = p.read_text() if p.exists() else spec
    try:
        grid = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"grid is not valid JSON: {exc}") from exc
    if not isinstance(grid, dict) or not all(
            isinstance(v, list) for v in grid.values()):
        raise InputError("grid must be an object mapping field names to lists")
    return grid


def cmd_ablate(args) -> int:
    cfg = _config_from_args(args)
    grid = _load_grid(args.grid)
    rows = trainer.ablate(cfg, grid, out_dir=cfg.out_dir or None)
    keys = sorted(grid)
    for row in rows:
        tag = " ".join(f"{k}={row[k]}" for k in keys)
        if row.get("error"):
            print(f"{row['point']:8s} {tag}  FAILED: {row['error']}")
        else:
            print(f"{row['point']:8s} {tag}  kld {row['kld']:.6f}  "
                  f"sim {row['sim']:.6f}  nss {row['nss']:.6f}")
    return 0


def cmd_synth(args) -> int:
    overrides = {}
    for f in dataclasses.fields(data.SyntheticSpec):
        v = getattr(args, f.name, None)
        if v is not None:
            overrides[f.name] = v
    spec = dataclasses.replace(data.SyntheticSpec(), **overrides)
    cache, records, _ = data.generate_synthetic(spec, args.out_dir)
    print(f"wrote {len(records)} records, cache hash {cache.hash[:16]} "
          f"at {args.out_dir}")
    return 0


def cmd_extract(args) -> int:
    from .tools import extract_cache
    n, digest = extract_cache.build_cache(args.src, args.out, dtype=args.dtype)
    print(f"packed {n} arrays into {args.out} (payload {digest[:16]})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="affground",
        description="Weakly supervised affordance grounding pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_sub(name: str, help_: str, fn):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", default=None,
                       help="JSON config file; flags override its values")
        _add_dataclass_flags(p, RunConfig)
        p.set_defaults(func=fn)
        return p

    run_sub("train", "train projection heads on a feature cache", cmd_train)
    p_eval = run_sub("eval", "score a checkpoint on the test split", cmd_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_disc = run_sub("discover", "dump clue maps and reliability verdicts",
                     cmd_discover)
    p_disc.add_argument("--checkpoint", default=None,
                        help="optional; without it a uniform CAM is used")
    p_abl = run_sub("ablate", "sweep config fields and tabulate metrics",
                    cmd_ablate)
    p_abl.add_argument("--grid", required=True,
                       help='JSON object or file: {"field": [v1, v2]}')

    p_synth = sub.add_parser("synth", help="generate the synthetic corpus")
    p_synth.add_argument("--out-dir", required=True)
    _add_dataclass_flags(p_synth, data.SyntheticSpec)
    p_synth.set_defaults(func=cmd_synth)

    p_ext = sub.add_parser(
        "extract", help="pack a directory of .npy feature dumps into a cache")
    p_ext.add_argument("--src", required=True)
    p_ext.add_argument("--out", required=True)
    p_ext.add_argument("--dtype", default="<f4", choices=["<f4", "<f8"])
    p_ext.set_defaults(func=cmd_extract)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except AffgroundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
