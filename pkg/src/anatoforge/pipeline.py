"""Batch realisation of plans: transplant, optional hole fill, write outputs."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .inpaint import InpaintConfig, blend, diffusion_fill
from .maskops import WindowLike
from .planner import AugmentationPlan, DatasetIndex
from .transplant import VolumeCache, output_stem, sidecar, transplant
from .volume_io import write_volume

__all__ = ["PlanOutcome", "realize_plan", "realize_plans"]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlanOutcome:
    stem: str
    ok: bool
    error: str | None = None


def realize_plan(
    plan: AugmentationPlan,
    index: DatasetIndex,
    out_dir,
    window: WindowLike = None,
    inpaint: InpaintConfig | None = InpaintConfig(),
    cache: VolumeCache | None = None,
) -> PlanOutcome:
    """Write ``<stem>.nii.gz``, ``<stem>_seg.nii.gz`` and ``<stem>.json``."""
    out_dir = Path(out_dir)
    stem = output_stem(plan)
    result = transplant(plan, index, window=window, cache=cache)
    image = result.image
    if inpaint is not None and result.holes.bits.any():
        image = blend(diffusion_fill(image, result.holes, inpaint), image, result.holes)
    meta = sidecar(result, index.organ_names, inpainted=inpaint is not None)
    write_volume(image, out_dir / f"{stem}.nii.gz")
    write_volume(result.labels, out_dir / f"{stem}_seg.nii.gz")
    (out_dir / f"{stem}.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return PlanOutcome(stem, True)


# per-process state for pool workers
_worker: dict = {}


def _init_worker(index, out_dir, window, inpaint):
    _worker.update(index=index, out_dir=out_dir, window=window, inpaint=inpaint, cache=VolumeCache())


def _run_one(plan: AugmentationPlan) -> PlanOutcome:
    w = _worker
    try:
        return realize_plan(plan, w["index"], w["out_dir"], w["window"], w["inpaint"], w["cache"])
    except Exception as exc:  # noqa: BLE001 - one bad plan must not stop the batch
        return PlanOutcome(output_stem(plan), False, f"{type(exc).__name__}: {exc}")


def realize_plans(
    plans: Sequence[AugmentationPlan],
    index: DatasetIndex,
    out_dir,
    window: WindowLike = None,
    inpaint: InpaintConfig | None = InpaintConfig(),
    workers: int = 1,
) -> list[PlanOutcome]:
    """Realise every plan; failures are reported per plan, in input order."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if workers <= 1 or len(plans) <= 1:
        _init_worker(index, out_dir, window, inpaint)
        try:
            outcomes = [_run_one(p) for p in plans]
        finally:
            _worker.clear()
    else:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_init_worker, initargs=(index, out_dir, window, inpaint)
        ) as pool:
            outcomes = list(pool.map(_run_one, plans))
    for o in outcomes:
        if not o.ok:
            logger.error("plan %s failed: %s", o.stem, o.error)
    return outcomes
