"""Organ-recombination data augmentation for multi-organ CT segmentation.

Typical use::

    from anatoforge import build_index, enumerate_plans, transplant

    index = build_index("data/manifest.json")
    plans = enumerate_plans(index, threshold=0.02)
    result = transplant(plans[0], index)
"""

from .errors import AnatoforgeError
from .inpaint import InpaintConfig, blend, diffusion_fill
from .maskops import (
    BinaryMask,
    CentroidWindow,
    ShiftOffset,
    ShiftWindow,
    best_shift,
    best_shift_exhaustive,
    extract_mask,
    overlap,
    popcount,
    shift_mask,
    size_ratio,
)
from .metrics import dice, evaluate_case, evaluate_dataset
from .phantom import OrganSpec, PhantomSpec, generate
from .pipeline import realize_plan, realize_plans
from .planner import (
    AugmentationPlan,
    DatasetIndex,
    build_index,
    combination_count,
    enumerate_plans,
    iter_plans,
    sample_plans,
)
from .transplant import TransplantResult, hole_mask, transplant
from .volume_io import (
    IntensityVolume,
    LabelVolume,
    VolumeGeometry,
    geometry_compatible,
    load_volume,
    write_volume,
)

__version__ = "0.1.0"
