"""Binary-mask algebra and the overlap-maximising shift search.

A shift ``d = (dx, dy, dz)`` moves a mask so that output voxel ``p`` takes
the value of input voxel ``p - d``. Voxels pushed outside the grid are
dropped; nothing wraps around.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Union

import numpy as np
import scipy.fft

from .errors import EmptyMaskError, GeometryMismatchError, UnknownOrganError
from .volume_io import LabelVolume, VolumeGeometry, _readonly, geometry_compatible

__all__ = [
    "BinaryMask",
    "ShiftOffset",
    "ShiftWindow",
    "CentroidWindow",
    "extract_mask",
    "popcount",
    "size_ratio",
    "ratio_from_counts",
    "shift_mask",
    "shift_array",
    "overlap",
    "centroid",
    "default_window",
    "best_shift",
    "best_shift_exhaustive",
    "DEFAULT_WINDOW_RADIUS",
]

DEFAULT_WINDOW_RADIUS = 8


@dataclass(frozen=True, eq=False)
class BinaryMask:
    geometry: VolumeGeometry
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.shape != self.geometry.dims:
            raise GeometryMismatchError(f"mask shape {bits.shape} does not match dims {self.geometry.dims}")
        object.__setattr__(self, "bits", _readonly(bits))

    @classmethod
    def empty(cls, geometry: VolumeGeometry) -> "BinaryMask":
        return cls(geometry, np.zeros(geometry.dims, dtype=bool))

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.geometry.dims == other.geometry.dims and np.array_equal(self.bits, other.bits)

    __hash__ = None


class ShiftOffset(NamedTuple):
    dx: int
    dy: int
    dz: int

    def __neg__(self) -> "ShiftOffset":
        return ShiftOffset(-self.dx, -self.dy, -self.dz)

    def __add__(self, other) -> "ShiftOffset":
        return ShiftOffset(*(int(a) + int(b) for a, b in zip(self, other)))

    @property
    def magnitude(self) -> int:
        """Chebyshev length."""
        return max(abs(self.dx), abs(self.dy), abs(self.dz))


ZERO_SHIFT = ShiftOffset(0, 0, 0)


@dataclass(frozen=True)
class ShiftWindow:
    """Axis-aligned box of candidate shifts: ``center ± radius`` per axis."""

    center: tuple[int, int, int] = (0, 0, 0)
    radius: tuple[int, int, int] = (DEFAULT_WINDOW_RADIUS,) * 3

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(int(c) for c in self.center))
        object.__setattr__(self, "radius", tuple(int(r) for r in self.radius))
        if any(r < 0 for r in self.radius):
            raise ValueError(f"window radius must be >= 0, got {self.radius}")

    def bounds(self, dims: Sequence[int]) -> tuple[tuple[int, int], ...]:
        """Inclusive ``(lo, hi)`` per axis, clamped to ``±(dim - 1)``."""
        out = []
        for c, r, n in zip(self.center, self.radius, dims):
            lo, hi = max(c - r, -(n - 1)), min(c + r, n - 1)
            if lo > hi:
                # window entirely outside the feasible range: snap to the nearest edge
                lo = hi = min(max(c, -(n - 1)), n - 1)
            out.append((lo, hi))
        return tuple(out)


@dataclass(frozen=True)
class CentroidWindow:
    """``radius`` voxels around the centroid displacement of the mask pair."""

    radius: int = DEFAULT_WINDOW_RADIUS


WindowLike = Union[None, int, Sequence[int], ShiftWindow, CentroidWindow]


def _as_window(window: WindowLike, base: "BinaryMask", donor: "BinaryMask") -> ShiftWindow:
    if window is None:
        return default_window(base, donor)
    if isinstance(window, CentroidWindow):
        return default_window(base, donor, window.radius)
    if isinstance(window, ShiftWindow):
        return window
    if isinstance(window, (int, np.integer)):
        return ShiftWindow(radius=(int(window),) * 3)
    return ShiftWindow(radius=tuple(window))


def _same_geometry(a: BinaryMask, b: BinaryMask) -> None:
    if a.bits.shape != b.bits.shape or not geometry_compatible(a.geometry, b.geometry):
        raise GeometryMismatchError(f"mask geometries differ: {a.geometry!r} vs {b.geometry!r}")


# --------------------------------------------------------------------------
# elementary operations


def extract_mask(labels: LabelVolume, organ: int) -> BinaryMask:
    organ = int(organ)
    if organ not in labels.label_table:
        raise UnknownOrganError(f"organ {organ} not in label table {sorted(labels.label_table)}")
    return BinaryMask(labels.geometry, labels.voxels == organ)


def popcount(m: BinaryMask) -> int:
    return int(np.count_nonzero(m.bits))


def ratio_from_counts(donor_count: int, base_count: int) -> float:
    """Relative size difference ``|donor - base| / base``."""
    if base_count <= 0:
        raise EmptyMaskError("base organ has no voxels; size ratio undefined")
    return abs(donor_count - base_count) / base_count


def size_ratio(donor: BinaryMask, base: BinaryMask) -> float:
    return ratio_from_counts(popcount(donor), popcount(base))


def _shift_slices(d: Sequence[int], dims: Sequence[int]):
    """Destination and source slices realising ``out[p] = in[p - d]``."""
    dst, src = [], []
    for s, n in zip(d, dims):
        s = int(s)
        if s >= 0:
            dst.append(slice(s, n))
            src.append(slice(0, max(n - s, 0)))
        else:
            dst.append(slice(0, max(n + s, 0)))
            src.append(slice(-s, n))
    return tuple(dst), tuple(src)


def shift_array(arr: np.ndarray, d: Sequence[int], fill=0) -> np.ndarray:
    """Translate a 3-D array by integer ``d`` with constant padding."""
    out = np.full_like(arr, fill)
    if any(abs(int(s)) >= n for s, n in zip(d, arr.shape)):
        return out
    dst, src = _shift_slices(d, arr.shape)
    out[dst] = arr[src]
    return out


def shift_mask(m: BinaryMask, d: Sequence[int]) -> BinaryMask:
    d = ShiftOffset(*(int(v) for v in d))
    for s, n in zip(d, m.geometry.dims):
        if abs(s) > n - 1:
            raise ValueError(f"shift {tuple(d)} exceeds grid {m.geometry.dims}")
    return BinaryMask(m.geometry, shift_array(m.bits, d, False))


def overlap(a: BinaryMask, b: BinaryMask) -> int:
    _same_geometry(a, b)
    return int(np.count_nonzero(a.bits & b.bits))


def _shifted_overlap(base: np.ndarray, donor: np.ndarray, d: Sequence[int]) -> int:
    """``overlap(base, shift(donor, d))`` without materialising the shift."""
    dst, src = _shift_slices(d, base.shape)
    return int(np.count_nonzero(base[dst] & donor[src]))


def centroid(m: BinaryMask) -> np.ndarray:
    idx = np.argwhere(m.bits)
    if len(idx) == 0:
        raise EmptyMaskError("centroid of an empty mask")
    return idx.mean(axis=0)


def default_window(base: BinaryMask, donor: BinaryMask, radius: int = DEFAULT_WINDOW_RADIUS) -> ShiftWindow:
    """Window centred on the centroid displacement that moves donor onto base."""
    delta = np.rint(centroid(base) - centroid(donor)).astype(int)
    return ShiftWindow(center=tuple(int(v) for v in delta), radius=(radius,) * 3)


def _check_search_inputs(base: BinaryMask, donor: BinaryMask) -> None:
    _same_geometry(base, donor)
    if not base.bits.any():
        raise EmptyMaskError("base mask is empty")
    if not donor.bits.any():
        raise EmptyMaskError("donor mask is empty")


def _tie_break_key(d: Sequence[int]):
    return (max(abs(int(v)) for v in d), *(int(v) for v in d))


# --------------------------------------------------------------------------
# shift search


def best_shift_exhaustive(base: BinaryMask, donor: BinaryMask, window: WindowLike = None) -> tuple[ShiftOffset, int]:
    """Direct enumeration of every shift in the window.

    Ties on overlap go to the smallest Chebyshev magnitude, then to the
    lexicographically smallest ``(dx, dy, dz)``.
    """
    _check_search_inputs(base, donor)
    win = _as_window(window, base, donor)
    ranges = [range(lo, hi + 1) for lo, hi in win.bounds(base.geometry.dims)]
    best_key, best_d, best_val = None, None, -1
    for d in itertools.product(*ranges):
        val = _shifted_overlap(base.bits, donor.bits, d)
        key = (-val, *_tie_break_key(d))
        if best_key is None or key < best_key:
            best_key, best_d, best_val = key, d, val
    return ShiftOffset(*best_d), best_val


def _bbox(bits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    idx = np.nonzero(bits)
    lo = np.array([i.min() for i in idx])
    hi = np.array([i.max() for i in idx]) + 1
    return lo, hi


def _correlate(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Linear cross-correlation ``c[k] = sum_u a[u] * b[u - k]``.

    Returned array is indexed by ``k + (len(b) - 1)`` per axis, so
    ``k`` ranges over ``-(len(b)-1) .. len(a)-1``.
    """
    out_shape = [na + nb - 1 for na, nb in zip(a.shape, b.shape)]
    fast = [scipy.fft.next_fast_len(n, real=True) for n in out_shape]
    fa = scipy.fft.rfftn(a.astype(np.float64), fast)
    fb = scipy.fft.rfftn(b.astype(np.float64), fast)
    circ = scipy.fft.irfftn(fa * np.conj(fb), fast)
    # circular index k >= 0 at k, k < 0 at fast + k; roll so that k = -(nb-1) sits at 0
    shifts = [nb - 1 for nb in b.shape]
    circ = np.roll(circ, shifts, axis=(0, 1, 2))
    return circ[tuple(slice(0, n) for n in out_shape)]


def _window_overlaps(base: np.ndarray, donor: np.ndarray, bounds) -> np.ndarray:
    """Correlation values for every shift in ``bounds`` (float, unrounded)."""
    b_lo, b_hi = _bbox(base)
    d_lo, d_hi = _bbox(donor)
    a = base[tuple(slice(l, h) for l, h in zip(b_lo, b_hi))]
    b = donor[tuple(slice(l, h) for l, h in zip(d_lo, d_hi))]
    corr = _correlate(a, b)
    # crop-space lag k maps to grid shift d = k + (b_lo - d_lo)
    offset = b_lo - d_lo
    win_shape = [hi - lo + 1 for lo, hi in bounds]
    out = np.zeros(win_shape, dtype=np.float64)
    src, dst = [], []
    for axis, (lo, hi) in enumerate(bounds):
        k_min = -(b.shape[axis] - 1)
        k_max = a.shape[axis] - 1
        # d range covered by correlation
        d_first = max(lo, k_min + offset[axis])
        d_last = min(hi, k_max + offset[axis])
        if d_first > d_last:
            return out
        dst.append(slice(d_first - lo, d_last - lo + 1))
        k_first = d_first - offset[axis]
        src.append(slice(k_first - k_min, k_first - k_min + d_last - d_first + 1))
    out[tuple(dst)] = corr[tuple(src)]
    return out


def best_shift(base: BinaryMask, donor: BinaryMask, window: WindowLike = None) -> tuple[ShiftOffset, int]:
    """Shift of ``donor`` within ``window`` maximising overlap with ``base``.

    Correlation is computed in the frequency domain on the two masks'
    bounding boxes. The rounded counts pick the candidate; its overlap is
    then recounted directly, and any disagreement triggers an exact
    recount of every near-maximal candidate, so rounding error can never
    change the answer.

    ``window`` may be ``None`` (centroid-centred ±8), a
    :class:`CentroidWindow`, an int radius or 3-tuple of radii around
    zero, or a :class:`ShiftWindow`.
    """
    _check_search_inputs(base, donor)
    win = _as_window(window, base, donor)
    bounds = win.bounds(base.geometry.dims)
    lo = np.array([b[0] for b in bounds])
    raw = _window_overlaps(base.bits, donor.bits, bounds)
    counts = np.rint(raw)
    top = counts.max()
    cand = np.argwhere(counts == top) + lo
    d = min((tuple(int(v) for v in c) for c in cand), key=_tie_break_key)
    exact = _shifted_overlap(base.bits, donor.bits, d)
    if exact == int(top) and np.abs(raw - counts).max() < 0.25:
        return ShiftOffset(*d), exact

    # rounding is not trustworthy here: recount every candidate within one count of the top
    loose = np.argwhere(raw >= raw.max() - 1.5) + lo
    best_key, best_d, best_val = None, None, -1
    for c in loose:
        c = tuple(int(v) for v in c)
        val = _shifted_overlap(base.bits, donor.bits, c)
        key = (-val, *_tie_break_key(c))
        if best_key is None or key < best_key:
            best_key, best_d, best_val = key, c, val
    return ShiftOffset(*best_d), best_val
