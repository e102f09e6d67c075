"""Command-line driver: ``plan``, ``augment``, ``eval`` and ``phantom``.

Settings come from an optional ``--config`` file (JSON or TOML) and are
overridden by command-line flags. Exit codes: 0 success, 1 some items
failed, 2 configuration error. ``ANATOFORGE_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

from .errors import AnatoforgeError, ConfigError, NoCasesFoundError
from .inpaint import InpaintConfig
from .maskops import DEFAULT_WINDOW_RADIUS, CentroidWindow, ShiftWindow
from .metrics import evaluate_dataset
from .phantom import PhantomSpec, default_spec, generate
from .pipeline import realize_plans
from .planner import (
    build_index,
    combination_count,
    donor_histogram,
    enumerate_plans,
    read_manifest,
    read_plans,
    sample_plans,
    write_plans,
)
from .volume_io import load_labels

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

logger = logging.getLogger("anatoforge")

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2


@dataclass
class RunConfig:
    manifest: str | None = None
    organs: dict[int, str] = field(default_factory=dict)
    threshold: float = 0.02
    count: int = 500
    seed: int | None = None
    window: int = DEFAULT_WINDOW_RADIUS
    window_center: str = "centroid"  # or "zero"
    inpaint: bool = True
    inpaint_tolerance: float = 0.5
    inpaint_max_iterations: int = 10_000
    out: str = "anatoforge_out"
    workers: int = 1
    plans: str | None = None
    weighting: str = "count"

    def validate(self) -> None:
        if not self.threshold >= 0:
            raise ConfigError(f"threshold must be >= 0, got {self.threshold}")
        if self.count < 1:
            raise ConfigError(f"count must be >= 1, got {self.count}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.window < 0:
            raise ConfigError(f"window must be >= 0, got {self.window}")
        if self.window_center not in ("centroid", "zero"):
            raise ConfigError("window_center must be 'centroid' or 'zero'")
        if self.weighting not in ("count", "volume"):
            raise ConfigError("weighting must be 'count' or 'volume'")
        if self.inpaint_tolerance <= 0 or self.inpaint_max_iterations < 1:
            raise ConfigError("inpaint tolerance must be > 0 and max iterations >= 1")

    @property
    def inpaint_config(self) -> InpaintConfig | None:
        if not self.inpaint:
            return None
        return InpaintConfig(self.inpaint_max_iterations, self.inpaint_tolerance)

    @property
    def shift_window(self):
        if self.window_center == "zero":
            return ShiftWindow(radius=(self.window,) * 3)
        return CentroidWindow(self.window)


def parse_threshold(value) -> float:
    if isinstance(value, (int, float)):
        return float(value)
    if str(value).lower() in ("inf", "unbounded"):
        return math.inf
    return float(value)


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    if path.suffix == ".toml":
        with open(path, "rb") as f:
            return tomllib.load(f)
    with open(path) as f:
        return json.load(f)


def build_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    known = {f.name for f in fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for name in known:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    try:
        if "threshold" in values:
            values["threshold"] = parse_threshold(values["threshold"])
        if "organs" in values:
            values["organs"] = {int(k): str(v) for k, v in values["organs"].items()}
    except (TypeError, ValueError, AttributeError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def _index(cfg: RunConfig):
    if not cfg.manifest:
        raise ConfigError("no dataset given (use --manifest)")
    if not Path(cfg.manifest).exists():
        raise ConfigError(f"manifest not found: {cfg.manifest}")
    return build_index(cfg.manifest, cfg.organs or None, workers=cfg.workers)


# --------------------------------------------------------------------------
# commands


def cmd_plan(cfg: RunConfig) -> int:
    index = _index(cfg)
    plans = enumerate_plans(index, cfg.threshold, cfg.weighting)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_plans(plans, out / "plans.jsonl")
    summary = {
        "cases": len(index.cases),
        "organs": len(index.organs),
        "threshold": "unbounded" if math.isinf(cfg.threshold) else cfg.threshold,
        "total_combinations": combination_count(len(index.cases), len(index.organs)),
        "surviving_plans": len(plans),
        "donor_histogram": {str(o): h for o, h in donor_histogram(plans).items()},
        "rejected_cases": index.rejected,
    }
    (out / "plan_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"total combinations: {summary['total_combinations']}")
    print(f"surviving plans: {summary['surviving_plans']}")
    return EXIT_OK


def cmd_augment(cfg: RunConfig) -> int:
    if cfg.seed is None:
        raise ConfigError("augment requires --seed")
    index = _index(cfg)
    if cfg.plans:
        if not Path(cfg.plans).is_file():
            raise ConfigError(f"plan file not found: {cfg.plans}")
        plans = read_plans(cfg.plans)
    else:
        plans = enumerate_plans(index, cfg.threshold, cfg.weighting)
    if cfg.count > len(plans):
        logger.warning("requested %d outputs but only %d plans exist; realising all of them", cfg.count, len(plans))
    chosen = sample_plans(plans, cfg.count, cfg.seed) if plans else []
    outcomes = realize_plans(
        chosen, index, cfg.out, window=cfg.shift_window, inpaint=cfg.inpaint_config, workers=cfg.workers
    )
    failed = [o for o in outcomes if not o.ok]
    summary = {
        "requested": cfg.count,
        "available_plans": len(plans),
        "realised": len(outcomes) - len(failed),
        "failed": [{"stem": o.stem, "error": o.error} for o in failed],
        "seed": cfg.seed,
        "outputs": [o.stem for o in outcomes if o.ok],
    }
    Path(cfg.out, "augment_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"realised {summary['realised']} of {len(outcomes)} plans ({len(failed)} failed)")
    return EXIT_PARTIAL if failed else EXIT_OK


def _case_id(name: str) -> str:
    for suffix in (".nii.gz", ".nii"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return name


def _volumes_in(directory: Path) -> dict[str, Path]:
    return {_case_id(p.name): p for p in sorted(directory.iterdir()) if p.name.endswith((".nii", ".nii.gz"))}


def cmd_eval(cfg: RunConfig, pred_dir, gt_dir) -> int:
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            raise ConfigError(f"directory not found: {d}")
    preds, gts = _volumes_in(pred_dir), _volumes_in(gt_dir)
    unmatched = sorted(set(preds) ^ set(gts))
    if unmatched:
        raise ConfigError(f"unmatched case ids between prediction and ground truth: {', '.join(unmatched)}")
    if not gts:
        raise ConfigError(f"no volumes found in {gt_dir}")
    organs = dict(cfg.organs)
    if not organs and cfg.manifest:
        manifest = Path(cfg.manifest)
        organs = read_manifest(manifest / "manifest.json" if manifest.is_dir() else manifest)[1]
    if not organs:
        present: set[int] = set()
        for p in gts.values():
            present |= set(load_labels(p).label_table)
        organs = {o: str(o) for o in sorted(present)}
    pairs = [(cid, preds[cid], gts[cid]) for cid in sorted(gts)]
    report = evaluate_dataset(pairs, list(organs), organs)
    report.write(cfg.out)
    print(report.to_csv(), end="")
    return EXIT_OK


def cmd_phantom(spec_path, out, workers: int = 1) -> int:
    spec = default_spec() if spec_path is None else PhantomSpec.from_dict(load_config_file(spec_path))
    meta = generate(spec, out, workers=workers)
    print(f"wrote {len(meta['cases'])} cases to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def _organ_table(text: str) -> dict[int, str]:
    """``1=liver,2=kidney`` or ``1,2``."""
    out = {}
    for part in text.split(","):
        key, _, name = part.partition("=")
        out[int(key)] = name or key
    return out


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON or TOML run configuration")
    p.add_argument("--manifest", help="dataset manifest.json or dataset directory")
    p.add_argument("--organs", type=_organ_table, help="organ table, e.g. 1=liver,2=kidney")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anatoforge", description="Organ-recombination augmentation for CT segmentation datasets")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="enumerate size-filtered recombination plans")
    _common(p)
    p.add_argument("--threshold", help="size-ratio bound (strict); 'inf' for unbounded")
    p.add_argument("--weighting", choices=["count", "volume"])

    p = sub.add_parser("augment", help="realise sampled plans as image/label pairs")
    _common(p)
    p.add_argument("--threshold")
    p.add_argument("--weighting", choices=["count", "volume"])
    p.add_argument("--plans", help="plan JSONL file (default: enumerate inline)")
    p.add_argument("--count", type=int, help="number of outputs")
    p.add_argument("--seed", type=int)
    p.add_argument("--window", type=int, help="shift search radius in voxels")
    p.add_argument("--window-center", dest="window_center", choices=["centroid", "zero"])
    p.add_argument("--no-inpaint", dest="inpaint", action="store_const", const=False)
    p.add_argument("--inpaint-tolerance", dest="inpaint_tolerance", type=float)
    p.add_argument("--inpaint-max-iterations", dest="inpaint_max_iterations", type=int)

    p = sub.add_parser("eval", help="Dice of predicted vs ground-truth label volumes")
    _common(p)
    p.add_argument("pred_dir")
    p.add_argument("gt_dir")

    p = sub.add_parser("phantom", help="generate a synthetic dataset")
    p.add_argument("spec", nargs="?", help="phantom spec (JSON/TOML); default built-in spec")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("ANATOFORGE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    args = make_parser().parse_args(argv)
    try:
        if args.command == "phantom":
            return cmd_phantom(args.spec, args.out, args.workers)
        cfg = build_config(args)
        if args.command == "plan":
            return cmd_plan(cfg)
        if args.command == "augment":
            return cmd_augment(cfg)
        return cmd_eval(cfg, args.pred_dir, args.gt_dir)
    except (ConfigError, NoCasesFoundError) as exc:
        print(f"anatoforge: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AnatoforgeError as exc:
        print(f"anatoforge: error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
