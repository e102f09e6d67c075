"""Dataset indexing and enumeration of organ-recombination plans.

A plan keeps one case as the background and picks, for every target
organ, a donor case whose organ is close in size to the background's.
Donor lists are filtered per organ before the Cartesian product is
taken, so the full ``N_d ** (N_t + 1)`` space is never materialised.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import ConfigError, GeometryIncompatibleError, NoCasesFoundError
from .maskops import ratio_from_counts
from .volume_io import VolumeGeometry, geometry_compatible, load_labels

__all__ = [
    "CaseEntry",
    "DatasetIndex",
    "AugmentationPlan",
    "combination_count",
    "build_index",
    "read_manifest",
    "discover_cases",
    "iter_plans",
    "enumerate_plans",
    "sample_plans",
    "write_plans",
    "read_plans",
    "donor_histogram",
]

logger = logging.getLogger(__name__)

UNBOUNDED = math.inf


@dataclass(frozen=True)
class CaseEntry:
    case_id: str
    image: Path
    label: Path


@dataclass
class DatasetIndex:
    cases: list[CaseEntry]
    organs: list[int]
    organ_names: dict[int, str]
    counts: dict[tuple[str, int], int]
    geometry: VolumeGeometry | None = None
    rejected: dict[str, str] = field(default_factory=dict)
    voxel_volumes: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        ids = [c.case_id for c in self.cases]
        if len(set(ids)) != len(ids):
            raise ValueError("case ids must be unique")
        self._by_id = {c.case_id: c for c in self.cases}

    @property
    def case_ids(self) -> list[str]:
        return [c.case_id for c in self.cases]

    def case(self, case_id: str) -> CaseEntry:
        return self._by_id[case_id]

    def __contains__(self, case_id) -> bool:
        return case_id in self._by_id

    def count(self, case_id: str, organ: int) -> int:
        return self.counts[(case_id, int(organ))]

    def size(self, case_id: str, organ: int, weighting: str = "count") -> float:
        n = self.count(case_id, organ)
        if weighting == "count":
            return n
        if weighting == "volume":
            return n * self.voxel_volumes.get(case_id, 1.0)
        raise ValueError(f"unknown weighting {weighting!r}")


@dataclass(frozen=True)
class AugmentationPlan:
    """One background case plus one donor case per target organ."""

    background: str
    donors: tuple[tuple[int, str], ...]

    def __init__(self, background: str, donors: Mapping[int, str] | Iterable[tuple[int, str]]):
        items = donors.items() if isinstance(donors, Mapping) else donors
        object.__setattr__(self, "background", str(background))
        object.__setattr__(self, "donors", tuple((int(o), str(c)) for o, c in items))

    @property
    def donor_map(self) -> dict[int, str]:
        return dict(self.donors)

    @property
    def is_identity(self) -> bool:
        return all(c == self.background for _, c in self.donors)

    def to_json(self) -> dict:
        return {"background": self.background, "donors": {str(o): c for o, c in self.donors}}

    @classmethod
    def from_json(cls, obj: Mapping) -> "AugmentationPlan":
        return cls(obj["background"], {int(k): v for k, v in obj["donors"].items()})

    def validate(self, index: DatasetIndex) -> None:
        if sorted(o for o, _ in self.donors) != sorted(index.organs):
            raise ValueError(f"plan organs {[o for o, _ in self.donors]} != index organs {index.organs}")
        for cid in (self.background, *(c for _, c in self.donors)):
            if cid not in index:
                raise ValueError(f"plan references unknown case {cid!r}")


def combination_count(n_cases: int, n_organs: int) -> int:
    """Number of (background, donor-per-organ) combinations: ``n_cases ** (n_organs + 1)``."""
    if n_cases < 1 or n_organs < 0:
        raise ValueError("need n_cases >= 1 and n_organs >= 0")
    return int(n_cases) ** (int(n_organs) + 1)


# --------------------------------------------------------------------------
# dataset discovery


def read_manifest(path) -> tuple[list[CaseEntry], dict[int, str]]:
    """Parse ``{"organs": {id: name}, "cases": [{id, image, label}]}``.

    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"manifest not found: {path}")
    with open(path) as f:
        doc = json.load(f)
    root = path.parent
    cases = [
        CaseEntry(str(c["id"]), root / c["image"], root / c["label"])
        for c in doc.get("cases", [])
    ]
    organs = {int(k): str(v) for k, v in doc.get("organs", {}).items()}
    return cases, organs


def _strip_nii(name: str) -> str:
    for suffix in (".nii.gz", ".nii"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return name


def discover_cases(root) -> list[CaseEntry]:
    """Pair ``images/<name>.nii[.gz]`` with ``labels/<name>.nii[.gz]``."""
    root = Path(root)
    images = root / "images"
    labels = root / "labels"
    if not images.is_dir():
        return []
    cases = []
    for img in sorted(images.iterdir()):
        if not img.name.endswith((".nii", ".nii.gz")):
            continue
        lab = labels / img.name
        if not lab.exists():
            logger.warning("no label file for %s; skipped", img.name)
            continue
        cases.append(CaseEntry(_strip_nii(img.name), img, lab))
    return cases


def _count_case(case: CaseEntry, organs: Sequence[int]):
    labels = load_labels(case.label)
    present = np.bincount(labels.voxels.ravel().astype(np.int64))
    counts = {o: int(present[o]) if o < len(present) else 0 for o in organs}
    return labels.geometry, counts


def build_index(
    source,
    organ_table: Mapping[int, str] | None = None,
    workers: int = 1,
    strict: bool = False,
) -> DatasetIndex:
    """Index a dataset given a manifest file or a directory.

    A directory is searched for ``manifest.json`` first, then for the
    ``images/`` + ``labels/`` convention. Cases whose label grid differs
    from the first case are dropped and listed in ``index.rejected``;
    with ``strict=True`` that raises instead.
    """
    source = Path(source)
    manifest_organs: dict[int, str] = {}
    if source.is_file():
        cases, manifest_organs = read_manifest(source)
    elif (source / "manifest.json").is_file():
        cases, manifest_organs = read_manifest(source / "manifest.json")
    elif source.is_dir():
        cases = discover_cases(source)
    else:
        raise ConfigError(f"dataset source not found: {source}")
    if not cases:
        raise NoCasesFoundError(f"no cases found under {source}")

    organ_names = dict(organ_table) if organ_table else manifest_organs
    organ_names = {int(k): str(v) for k, v in organ_names.items()}
    if not organ_names:
        raise ConfigError("no organ table given and none in the manifest")
    organs = list(organ_names)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda c: _count_case(c, organs), cases))
    else:
        results = [_count_case(c, organs) for c in cases]

    ref = results[0][0]
    kept, counts, rejected, voxel_volumes = [], {}, {}, {}
    for case, (geom, case_counts) in zip(cases, results):
        if not geometry_compatible(ref, geom):
            rejected[case.case_id] = f"grid {geom.dims} @ {geom.spacing} differs from {ref.dims} @ {ref.spacing}"
            continue
        kept.append(case)
        voxel_volumes[case.case_id] = geom.voxel_volume
        for o, n in case_counts.items():
            counts[(case.case_id, o)] = n
    if rejected:
        if strict:
            raise GeometryIncompatibleError(sorted(rejected))
        logger.warning("rejected %d case(s) with incompatible geometry: %s", len(rejected), ", ".join(rejected))
    return DatasetIndex(kept, organs, organ_names, counts, ref, rejected, voxel_volumes)


# --------------------------------------------------------------------------
# plan enumeration


def _eligible_donors(index: DatasetIndex, background: str, organ: int, threshold: float, weighting: str) -> list[str]:
    base = index.size(background, organ, weighting)
    out = []
    for cid in index.case_ids:
        size = index.size(cid, organ, weighting)
        if size <= 0:
            continue
        if ratio_from_counts(size, base) < threshold:
            out.append(cid)
    return out


def iter_plans(index: DatasetIndex, threshold: float = 0.02, weighting: str = "count") -> Iterator[AugmentationPlan]:
    """Stream plans whose every organ has size ratio strictly below ``threshold``.

    Backgrounds follow index order; for each background the donor
    tuples come out in lexicographic (organ order, case order). Cases
    missing an organ can neither host nor donate it. The identity plan
    is skipped.
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    for bg in index.case_ids:
        if any(index.count(bg, o) <= 0 for o in index.organs):
            continue
        donor_lists = [_eligible_donors(index, bg, o, threshold, weighting) for o in index.organs]
        for combo in itertools.product(*donor_lists):
            if all(c == bg for c in combo):
                continue
            yield AugmentationPlan(bg, zip(index.organs, combo))


def enumerate_plans(index: DatasetIndex, threshold: float = 0.02, weighting: str = "count") -> list[AugmentationPlan]:
    return list(iter_plans(index, threshold, weighting))


def sample_plans(plans: Sequence[AugmentationPlan], k: int, seed: int) -> list[AugmentationPlan]:
    """Seeded sample of ``k`` plans without replacement, kept in enumeration order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    plans = list(plans)
    if k >= len(plans):
        return plans
    picked = sorted(random.Random(seed).sample(range(len(plans)), k))
    return [plans[i] for i in picked]


def write_plans(plans: Iterable[AugmentationPlan], path) -> int:
    n = 0
    with open(path, "w") as f:
        for p in plans:
            f.write(json.dumps(p.to_json()) + "\n")
            n += 1
    return n


def read_plans(path) -> list[AugmentationPlan]:
    with open(path) as f:
        return [AugmentationPlan.from_json(json.loads(line)) for line in f if line.strip()]


def donor_histogram(plans: Iterable[AugmentationPlan]) -> dict[int, dict[str, int]]:
    """How often each case donates each organ."""
    hist: dict[int, dict[str, int]] = {}
    for p in plans:
        for o, c in p.donors:
            hist.setdefault(o, {}).setdefault(c, 0)
            hist[o][c] += 1
    return {o: dict(sorted(h.items())) for o, h in sorted(hist.items())}
