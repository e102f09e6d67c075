"""Realise a single augmentation plan as a composited image/label pair.

Each donor organ is cropped by its own mask, moved by the integer shift
that maximises overlap with the background's copy of the same organ,
and written over the background. Base-organ voxels that no donor ends
up covering are returned as holes for a later fill step.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyMaskError, GeometryMismatchError, MissingVolumeError
from .maskops import BinaryMask, ShiftOffset, WindowLike, best_shift, ratio_from_counts, shift_array
from .planner import AugmentationPlan, DatasetIndex
from .volume_io import IntensityVolume, LabelVolume, geometry_compatible, load_image, load_labels

__all__ = [
    "ShiftRecord",
    "TransplantResult",
    "VolumeCache",
    "transplant",
    "hole_mask",
    "output_stem",
    "sidecar",
]


@dataclass(frozen=True)
class ShiftRecord:
    donor: str
    offset: ShiftOffset
    overlap: int
    size_ratio: float


@dataclass(frozen=True, eq=False)
class TransplantResult:
    plan: AugmentationPlan
    image: IntensityVolume
    labels: LabelVolume
    holes: BinaryMask
    shifts: dict[int, ShiftRecord] = field(default_factory=dict)
    # voxels claimed by more than one placed donor organ
    collisions: int = 0


class VolumeCache:
    """Memoised volume loader keyed by path.

    Volumes are immutable, so sharing them between plans cannot change
    any result.
    """

    def __init__(self, maxsize: int = 16):
        self.image = lru_cache(maxsize=maxsize)(self._load_image)
        self.labels = lru_cache(maxsize=maxsize)(self._load_labels)

    @staticmethod
    def _load_image(path) -> IntensityVolume:
        try:
            return load_image(path)
        except FileNotFoundError as exc:
            raise MissingVolumeError(f"missing image volume: {path}") from exc

    @staticmethod
    def _load_labels(path) -> LabelVolume:
        try:
            return load_labels(path)
        except FileNotFoundError as exc:
            raise MissingVolumeError(f"missing label volume: {path}") from exc


def hole_mask(base_masks: Sequence[BinaryMask], placed_masks: Sequence[BinaryMask]) -> BinaryMask:
    """Voxels in any base mask that no placed mask covers."""
    masks = list(base_masks) + list(placed_masks)
    if not masks:
        raise ValueError("need at least one mask")
    geometry = masks[0].geometry
    for m in masks[1:]:
        if m.bits.shape != geometry.dims or not geometry_compatible(m.geometry, geometry):
            raise GeometryMismatchError("hole_mask inputs live on different grids")
    base = np.zeros(geometry.dims, dtype=bool)
    for m in base_masks:
        base |= m.bits
    placed = np.zeros(geometry.dims, dtype=bool)
    for m in placed_masks:
        placed |= m.bits
    return BinaryMask(geometry, base & ~placed)


def _check_grid(name: str, vol, ref) -> None:
    if not geometry_compatible(vol.geometry, ref.geometry):
        raise GeometryMismatchError(f"{name}: grid {vol.geometry!r} differs from background {ref.geometry!r}")


def transplant(
    plan: AugmentationPlan,
    index: DatasetIndex,
    window: WindowLike = None,
    cache: VolumeCache | None = None,
) -> TransplantResult:
    """Composite ``plan`` onto its background case.

    Organs are placed in index organ order; where two placed organs
    overlap the later one wins. Holes keep the background intensity and
    label 0.
    """
    plan.validate(index)
    cache = cache or VolumeCache()
    bg_case = index.case(plan.background)
    bg_img = cache.image(bg_case.image)
    bg_lab = cache.labels(bg_case.label)
    _check_grid(f"{plan.background} labels", bg_lab, bg_img)
    geometry = bg_img.geometry

    donors = plan.donor_map
    placed: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    records: dict[int, ShiftRecord] = {}
    base_union = np.zeros(geometry.dims, dtype=bool)
    img_dtypes = {bg_img.dtype}
    for organ in index.organs:
        cid = donors[organ]
        case = index.case(cid)
        d_img = cache.image(case.image)
        d_lab = cache.labels(case.label)
        _check_grid(f"{cid} image", d_img, bg_img)
        _check_grid(f"{cid} labels", d_lab, bg_img)
        img_dtypes.add(d_img.dtype)

        base_bits = bg_lab.voxels == organ
        donor_bits = d_lab.voxels == organ
        n_base, n_donor = int(base_bits.sum()), int(donor_bits.sum())
        if n_base == 0:
            raise EmptyMaskError(f"background {plan.background} has no voxels of organ {organ}")
        if n_donor == 0:
            raise EmptyMaskError(f"donor {cid} has no voxels of organ {organ}")
        base_union |= base_bits

        offset, ov = best_shift(BinaryMask(geometry, base_bits), BinaryMask(geometry, donor_bits), window)
        placed[organ] = (shift_array(donor_bits, offset, False), shift_array(d_img.voxels, offset, 0))
        records[organ] = ShiftRecord(cid, offset, ov, ratio_from_counts(n_donor, n_base))

    out_dtype = bg_img.dtype if len(img_dtypes) == 1 else np.dtype(np.float32)
    out_img = bg_img.voxels.astype(out_dtype, copy=True)
    lab_dtype = np.result_type(bg_lab.dtype, np.min_scalar_type(max(index.organs)))
    if lab_dtype not in (np.uint8, np.int16, np.int32):
        lab_dtype = np.dtype(np.int32)
    out_lab = bg_lab.voxels.astype(lab_dtype, copy=True)
    out_lab[base_union] = 0

    claimed = np.zeros(geometry.dims, dtype=bool)
    collisions = 0
    for organ in index.organs:
        mask, intens = placed[organ]
        collisions += int(np.count_nonzero(mask & claimed))
        claimed |= mask
        out_img[mask] = intens[mask]
        out_lab[mask] = organ

    holes = base_union & ~claimed
    table = dict(bg_lab.label_table)
    table.update(index.organ_names)
    return TransplantResult(
        plan=plan,
        image=IntensityVolume(geometry, out_img),
        labels=LabelVolume(geometry, out_lab, table),
        holes=BinaryMask(geometry, holes),
        shifts=records,
        collisions=collisions,
    )


def output_stem(plan: AugmentationPlan) -> str:
    """``<background>__<organ>-<donor>__...__<hash8>``."""
    digest = hashlib.sha1(json.dumps(plan.to_json(), sort_keys=True).encode()).hexdigest()[:8]
    parts = [plan.background, *(f"{o}-{c}" for o, c in plan.donors), digest]
    return "__".join(parts)


def sidecar(result: TransplantResult, organ_names: Mapping[int, str] | None = None, inpainted: bool = False) -> dict:
    organ_names = organ_names or {}
    organs = {}
    for organ, rec in result.shifts.items():
        organs[str(organ)] = {
            "name": organ_names.get(organ, f"label{organ}"),
            "donor": rec.donor,
            "shift": list(rec.offset),
            "overlap": rec.overlap,
            "size_ratio": rec.size_ratio,
        }
    return {
        "plan": result.plan.to_json(),
        "organs": organs,
        "collisions": result.collisions,
        "hole_voxels": int(np.count_nonzero(result.holes.bits)),
        "inpainted": inpainted,
    }
