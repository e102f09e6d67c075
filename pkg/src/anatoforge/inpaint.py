"""Harmonic hole filling and the masked blend.

Hole voxels are relaxed towards the average of their 6-connected
neighbours (Jacobi sweeps of the discrete Laplace equation) with all
non-hole voxels held fixed. Neighbours outside the grid are simply left
out of the average. Each hole component starts from the mean of its
boundary values, so every iterate stays inside the boundary range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import GeometryMismatchError, UnboundedHoleError
from .maskops import BinaryMask
from .volume_io import IntensityVolume, geometry_compatible

__all__ = ["InpaintConfig", "jacobi_fill", "diffusion_fill", "blend"]

_SIX = ndimage.generate_binary_structure(3, 1)


@dataclass(frozen=True)
class InpaintConfig:
    max_iterations: int = 10_000
    tolerance: float = 0.5  # HU, max per-voxel change between sweeps

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")


def _neighbour_table(holes: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flat indices of hole voxels, their 6 neighbours (-1 if off-grid), and valid counts."""
    dims = holes.shape
    coords = np.argwhere(holes)
    flat = np.ravel_multi_index(coords.T, dims)
    nbrs = np.full((len(coords), 6), -1, dtype=np.int64)
    k = 0
    for axis in range(3):
        for step in (-1, 1):
            c = coords.copy()
            c[:, axis] += step
            ok = (c[:, axis] >= 0) & (c[:, axis] < dims[axis])
            nbrs[ok, k] = np.ravel_multi_index(c[ok].T, dims)
            k += 1
    valid = nbrs >= 0
    return flat, nbrs, valid


def jacobi_fill(values: np.ndarray, holes: np.ndarray, cfg: InpaintConfig = InpaintConfig()):
    """Array-level fill. Returns ``(filled float64 array, max-update history)``."""
    holes = np.asarray(holes, dtype=bool)
    out = np.asarray(values, dtype=np.float64).copy()
    if not holes.any():
        return out, []

    comp, n_comp = ndimage.label(holes, structure=_SIX)
    ring = ndimage.binary_dilation(holes, structure=_SIX) & ~holes
    # boundary values per component, one term per face contact
    sums = np.zeros(n_comp + 1)
    cnts = np.zeros(n_comp + 1)
    for axis in range(3):
        for step in (-1, 1):
            nb = np.roll(comp, step, axis=axis)
            edge = [slice(None)] * 3
            edge[axis] = 0 if step == 1 else -1
            nb[tuple(edge)] = 0  # undo wrap-around
            hit = ring & (nb > 0)
            np.add.at(sums, nb[hit], out[hit])
            np.add.at(cnts, nb[hit], 1)
    if np.any(cnts[1:] == 0):
        bad = int(np.flatnonzero(cnts[1:] == 0)[0]) + 1
        raise UnboundedHoleError(f"hole component {bad} has no non-hole neighbour to fill from")
    out[holes] = (sums / np.maximum(cnts, 1))[comp[holes]]

    flat, nbrs, valid = _neighbour_table(holes)
    n_valid = valid.sum(axis=1)
    safe = np.where(valid, nbrs, 0)
    vec = out.ravel()
    history = []
    for _ in range(cfg.max_iterations):
        gathered = np.where(valid, vec[safe], 0.0).sum(axis=1) / n_valid
        delta = float(np.abs(gathered - vec[flat]).max())
        vec[flat] = gathered
        history.append(delta)
        if delta < cfg.tolerance:
            break
    return vec.reshape(out.shape), history


def diffusion_fill(image: IntensityVolume, holes: BinaryMask, cfg: InpaintConfig = InpaintConfig()) -> IntensityVolume:
    """Fill ``holes`` in ``image`` harmonically; non-hole voxels are left as they were.

    Integer images get the filled values rounded to the nearest integer.
    """
    if image.voxels.shape != holes.bits.shape or not geometry_compatible(image.geometry, holes.geometry):
        raise GeometryMismatchError("image and hole mask live on different grids")
    if not holes.bits.any():
        return image
    filled, _ = jacobi_fill(image.voxels, holes.bits, cfg)
    out = np.array(image.voxels, copy=True)
    if out.dtype.kind in "iu":
        info = np.iinfo(out.dtype)
        out[holes.bits] = np.clip(np.rint(filled[holes.bits]), info.min, info.max).astype(out.dtype)
    else:
        out[holes.bits] = filled[holes.bits].astype(out.dtype)
    return IntensityVolume(image.geometry, out)


def blend(filled: IntensityVolume, original: IntensityVolume, holes: BinaryMask) -> IntensityVolume:
    """Take ``filled`` inside the holes and ``original`` everywhere else."""
    for vol in (filled, original):
        if vol.voxels.shape != holes.bits.shape or not geometry_compatible(vol.geometry, holes.geometry):
            raise GeometryMismatchError("blend inputs live on different grids")
    out = np.array(original.voxels, copy=True)
    values = filled.voxels[holes.bits]
    if out.dtype.kind in "iu" and values.dtype.kind == "f":
        values = np.rint(values)
    out[holes.bits] = values.astype(out.dtype)
    return IntensityVolume(original.geometry, out)
