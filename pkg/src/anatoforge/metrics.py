"""Dice scores per organ, per case and over a dataset."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import AnatoforgeError, GeometryMismatchError
from .maskops import BinaryMask
from .volume_io import LabelVolume, geometry_compatible, load_labels

__all__ = ["DiceReport", "DatasetReport", "dice", "evaluate_case", "evaluate_dataset", "ABSENT"]

# marks organs missing from the ground truth
ABSENT = None

AVERAGING_NOTE = "mean over organs present in each case's ground truth, then mean over cases"


def _dice_counts(inter: int, n_pred: int, n_gt: int) -> float:
    if n_pred + n_gt == 0:
        return 1.0
    return 2.0 * inter / (n_pred + n_gt)


def dice(pred: BinaryMask, gt: BinaryMask) -> float:
    """``2|P & G| / (|P| + |G|)``; two empty masks score 1.0."""
    if pred.bits.shape != gt.bits.shape or not geometry_compatible(pred.geometry, gt.geometry):
        raise GeometryMismatchError("dice inputs live on different grids")
    inter = int(np.count_nonzero(pred.bits & gt.bits))
    return _dice_counts(inter, int(np.count_nonzero(pred.bits)), int(np.count_nonzero(gt.bits)))


@dataclass
class DiceReport:
    case_id: str
    per_organ: dict[int, float | None]
    mean: float

    def to_json(self) -> dict:
        return {
            "case": self.case_id,
            "per_organ": {str(o): v for o, v in self.per_organ.items()},
            "mean": self.mean,
        }


def evaluate_case(pred: LabelVolume, gt: LabelVolume, organs: Sequence[int], case_id: str = "") -> DiceReport:
    if pred.voxels.shape != gt.voxels.shape or not geometry_compatible(pred.geometry, gt.geometry):
        raise GeometryMismatchError(f"{case_id}: prediction and ground truth live on different grids")
    per_organ: dict[int, float | None] = {}
    for organ in organs:
        g = gt.voxels == organ
        n_gt = int(np.count_nonzero(g))
        if n_gt == 0:
            per_organ[int(organ)] = ABSENT
            continue
        p = pred.voxels == organ
        per_organ[int(organ)] = _dice_counts(int(np.count_nonzero(p & g)), int(np.count_nonzero(p)), n_gt)
    scored = [v for v in per_organ.values() if v is not None]
    mean = float(np.mean(scored)) if scored else math.nan
    return DiceReport(case_id, per_organ, mean)


@dataclass
class DatasetReport:
    cases: list[DiceReport]
    organs: list[int]
    organ_names: dict[int, str] = field(default_factory=dict)

    @property
    def organ_means(self) -> dict[int, float | None]:
        out = {}
        for o in self.organs:
            vals = [c.per_organ[o] for c in self.cases if c.per_organ.get(o) is not None]
            out[o] = float(np.mean(vals)) if vals else None
        return out

    @property
    def mean(self) -> float:
        vals = [c.mean for c in self.cases if not math.isnan(c.mean)]
        return float(np.mean(vals)) if vals else math.nan

    def _name(self, o: int) -> str:
        return self.organ_names.get(o, str(o))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["case", *(self._name(o) for o in self.organs), "mean"])

        def cell(v):
            return "absent" if v is None else f"{v:.6f}"

        for c in self.cases:
            w.writerow([c.case_id, *(cell(c.per_organ[o]) for o in self.organs), cell(c.mean)])
        means = self.organ_means
        w.writerow(["mean", *(cell(means[o]) for o in self.organs), cell(self.mean)])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "averaging": AVERAGING_NOTE,
            "organs": {str(o): self._name(o) for o in self.organs},
            "cases": [c.to_json() for c in self.cases],
            "organ_means": {str(o): v for o, v in self.organ_means.items()},
            "mean": self.mean,
        }

    def write(self, out_dir, stem: str = "dice") -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = out_dir / f"{stem}.csv", out_dir / f"{stem}.json"
        csv_path.write_text(self.to_csv())
        json_path.write_text(json.dumps(self.to_json(), indent=2) + "\n")
        return csv_path, json_path


def evaluate_dataset(
    pairs: Sequence[tuple],
    organs: Sequence[int],
    organ_names: Mapping[int, str] | None = None,
) -> DatasetReport:
    """Evaluate ``(pred_path, gt_path)`` or ``(case_id, pred_path, gt_path)`` tuples."""
    reports = []
    for item in pairs:
        if len(item) == 3:
            case_id, pred_path, gt_path = item
        else:
            pred_path, gt_path = item
            case_id = Path(gt_path).name.split(".")[0]
        try:
            pred, gt = load_labels(pred_path), load_labels(gt_path)
        except (AnatoforgeError, OSError) as exc:
            raise AnatoforgeError(f"case {case_id}: {exc}") from exc
        reports.append(evaluate_case(pred, gt, organs, case_id))
    return DatasetReport(reports, [int(o) for o in organs], dict(organ_names or {}))
