"""Volume containers and a small NIfTI-1 single-file reader/writer.

Arrays are held as numpy arrays of shape ``(X, Y, Z)`` indexed ``[x, y, z]``.
On disk NIfTI stores x fastest and z slowest, which is Fortran order for
that shape, so payloads are decoded and encoded with ``order="F"``.

Only the subset needed for CT segmentation datasets is supported: 3-D
(or 4-D with a singleton fourth axis) volumes of uint8, int16, int32 or
float32, optionally gzip-wrapped. NIfTI-2, ``.hdr/.img`` pairs and
header extensions are not supported.
"""

from __future__ import annotations

import gzip
import io
import math
import os
import struct
from dataclasses import dataclass, field
from typing import Mapping, Union

import numpy as np

from .errors import (
    DimensionMismatchError,
    GeometryMismatchError,
    MalformedHeaderError,
    NiftiFormatError,
    TruncatedPayloadError,
    UnsupportedDatatypeError,
)

__all__ = [
    "VolumeGeometry",
    "IntensityVolume",
    "LabelVolume",
    "load_volume",
    "load_image",
    "load_labels",
    "write_volume",
    "geometry_compatible",
    "require_compatible",
]

HEADER_SIZE = 348
# 348-byte header followed by the 4-byte extension flag (all zero).
DEFAULT_VOX_OFFSET = 352

# (struct code, field name); layout of the NIfTI-1 header.
_HEADER_FIELDS = [
    ("i", "sizeof_hdr"),
    ("10s", "data_type"),
    ("18s", "db_name"),
    ("i", "extents"),
    ("h", "session_error"),
    ("b", "regular"),
    ("b", "dim_info"),
    ("8h", "dim"),
    ("f", "intent_p1"),
    ("f", "intent_p2"),
    ("f", "intent_p3"),
    ("h", "intent_code"),
    ("h", "datatype"),
    ("h", "bitpix"),
    ("h", "slice_start"),
    ("8f", "pixdim"),
    ("f", "vox_offset"),
    ("f", "scl_slope"),
    ("f", "scl_inter"),
    ("h", "slice_end"),
    ("b", "slice_code"),
    ("b", "xyzt_units"),
    ("f", "cal_max"),
    ("f", "cal_min"),
    ("f", "slice_duration"),
    ("f", "toffset"),
    ("i", "glmax"),
    ("i", "glmin"),
    ("80s", "descrip"),
    ("24s", "aux_file"),
    ("h", "qform_code"),
    ("h", "sform_code"),
    ("f", "quatern_b"),
    ("f", "quatern_c"),
    ("f", "quatern_d"),
    ("f", "qoffset_x"),
    ("f", "qoffset_y"),
    ("f", "qoffset_z"),
    ("4f", "srow_x"),
    ("4f", "srow_y"),
    ("4f", "srow_z"),
    ("16s", "intent_name"),
    ("4s", "magic"),
]
_HEADER_FORMAT = "".join(code for code, _ in _HEADER_FIELDS)
assert struct.calcsize("<" + _HEADER_FORMAT) == HEADER_SIZE

# NIfTI datatype code -> numpy dtype (byte order applied at decode time).
_DATATYPES = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    8: np.dtype(np.int32),
    16: np.dtype(np.float32),
}
_DATATYPE_CODES = {dt: code for code, dt in _DATATYPES.items()}

INTENSITY_DTYPES = (np.dtype(np.int16), np.dtype(np.float32))
LABEL_DTYPES = (np.dtype(np.uint8), np.dtype(np.int16), np.dtype(np.int32))


def _readonly(arr: np.ndarray) -> np.ndarray:
    view = arr.view()
    view.flags.writeable = False
    return view


@dataclass(frozen=True, eq=False)
class VolumeGeometry:
    """Grid extent, voxel spacing (mm) and voxel-to-world affine."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    affine: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        if len(dims) != 3 or len(spacing) != 3:
            raise ValueError("dims and spacing must have three entries")
        if any(d < 1 for d in dims):
            raise ValueError(f"all dims must be >= 1, got {dims}")
        if not all(s > 0 and math.isfinite(s) for s in spacing):
            raise ValueError(f"all spacings must be positive, got {spacing}")
        if self.affine is None:
            affine = np.diag([*spacing, 1.0])
        else:
            affine = np.array(self.affine, dtype=np.float64)
        if affine.shape != (4, 4):
            raise ValueError("affine must be 4x4")
        if not np.array_equal(affine[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValueError("affine last row must be (0, 0, 0, 1)")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "affine", _readonly(affine))

    @property
    def n_voxels(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def voxel_volume(self) -> float:
        return self.spacing[0] * self.spacing[1] * self.spacing[2]

    def __repr__(self) -> str:
        return f"VolumeGeometry(dims={self.dims}, spacing={self.spacing})"


def _check_shape(geometry: VolumeGeometry, voxels: np.ndarray) -> None:
    if voxels.shape != geometry.dims:
        raise GeometryMismatchError(
            f"voxel array shape {voxels.shape} does not match dims {geometry.dims}"
        )


@dataclass(frozen=True, eq=False)
class IntensityVolume:
    """Scalar CT intensities (HU), stored as int16 or float32."""

    geometry: VolumeGeometry
    voxels: np.ndarray = field(repr=False)

    def __post_init__(self):
        voxels = np.asarray(self.voxels)
        voxels = voxels.astype(voxels.dtype.newbyteorder("="), copy=False)
        if voxels.dtype not in INTENSITY_DTYPES:
            raise UnsupportedDatatypeError(f"intensity dtype must be int16 or float32, got {voxels.dtype}")
        _check_shape(self.geometry, voxels)
        object.__setattr__(self, "voxels", _readonly(voxels))

    @property
    def dtype(self) -> np.dtype:
        return self.voxels.dtype


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Integer organ labels; 0 is background.

    ``label_table`` maps organ id to a display name. When omitted it is
    built from the labels present in the array.
    """

    geometry: VolumeGeometry
    voxels: np.ndarray = field(repr=False)
    label_table: Mapping[int, str] = None

    def __post_init__(self):
        voxels = np.asarray(self.voxels)
        voxels = voxels.astype(voxels.dtype.newbyteorder("="), copy=False)
        if voxels.dtype not in LABEL_DTYPES:
            raise UnsupportedDatatypeError(f"label dtype must be uint8, int16 or int32, got {voxels.dtype}")
        _check_shape(self.geometry, voxels)
        present = [int(v) for v in np.unique(voxels)]
        if present and present[0] < 0:
            raise ValueError("labels must be non-negative")
        if self.label_table is None:
            table = {v: f"label{v}" for v in present if v != 0}
        else:
            table = {int(k): str(name) for k, name in self.label_table.items()}
            missing = [v for v in present if v != 0 and v not in table]
            if missing:
                raise ValueError(f"labels {missing} missing from label table")
        table.pop(0, None)
        object.__setattr__(self, "label_table", dict(sorted(table.items())))
        object.__setattr__(self, "voxels", _readonly(voxels))

    @property
    def dtype(self) -> np.dtype:
        return self.voxels.dtype


Volume = Union[IntensityVolume, LabelVolume]


def geometry_compatible(a: VolumeGeometry, b: VolumeGeometry) -> bool:
    """True iff the grids have equal dims and spacings within 1e-3 relative."""
    if a.dims != b.dims:
        return False
    return all(math.isclose(sa, sb, rel_tol=1e-3) for sa, sb in zip(a.spacing, b.spacing))


def require_compatible(*geometries: VolumeGeometry) -> None:
    first = geometries[0]
    for other in geometries[1:]:
        if not geometry_compatible(first, other):
            raise GeometryMismatchError(f"incompatible grids: {first!r} vs {other!r}")


# --------------------------------------------------------------------------
# reading


def _read_bytes(path) -> bytes:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise TruncatedPayloadError(f"{path}: corrupt gzip stream ({exc})") from exc
    return raw


def _detect_byteorder(raw: bytes, path) -> str:
    if len(raw) < HEADER_SIZE:
        raise MalformedHeaderError(f"{path}: file shorter than a NIfTI-1 header ({len(raw)} bytes)")
    for order in ("<", ">"):
        (dim0,) = struct.unpack_from(order + "h", raw, 40)
        if 1 <= dim0 <= 7:
            return order
    raise MalformedHeaderError(f"{path}: cannot determine byte order from dim[0]")


def _parse_header(raw: bytes, path) -> tuple[dict, str]:
    order = _detect_byteorder(raw, path)
    values = struct.unpack_from(order + _HEADER_FORMAT, raw, 0)
    hdr: dict = {}
    i = 0
    for code, name in _HEADER_FIELDS:
        count = int(code[:-1]) if code[:-1].isdigit() and not code.endswith("s") else 1
        if count == 1:
            hdr[name] = values[i]
        else:
            hdr[name] = values[i : i + count]
        i += count
    if hdr["sizeof_hdr"] != HEADER_SIZE:
        if hdr["sizeof_hdr"] == 540:
            raise MalformedHeaderError(f"{path}: NIfTI-2 files are not supported")
        raise MalformedHeaderError(f"{path}: sizeof_hdr is {hdr['sizeof_hdr']}, expected 348")
    if hdr["magic"] == b"ni1\x00":
        raise MalformedHeaderError(f"{path}: .hdr/.img pairs are not supported")
    if hdr["magic"] != b"n+1\x00":
        raise MalformedHeaderError(f"{path}: bad magic {hdr['magic']!r}")
    return hdr, order


def _quaternion_affine(hdr: dict, spacing) -> np.ndarray:
    b, c, d = hdr["quatern_b"], hdr["quatern_c"], hdr["quatern_d"]
    a = math.sqrt(max(0.0, 1.0 - (b * b + c * c + d * d)))
    rot = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ]
    )
    qfac = -1.0 if hdr["pixdim"][0] < 0 else 1.0
    scale = np.array([spacing[0], spacing[1], spacing[2] * qfac])
    affine = np.eye(4)
    affine[:3, :3] = rot * scale
    affine[:3, 3] = [hdr["qoffset_x"], hdr["qoffset_y"], hdr["qoffset_z"]]
    return affine


def _header_affine(hdr: dict, spacing) -> np.ndarray:
    if hdr["sform_code"] > 0:
        affine = np.eye(4)
        affine[0] = hdr["srow_x"]
        affine[1] = hdr["srow_y"]
        affine[2] = hdr["srow_z"]
        return affine
    if hdr["qform_code"] > 0:
        return _quaternion_affine(hdr, spacing)
    return np.diag([*spacing, 1.0])


def _decode(raw: bytes, path) -> tuple[VolumeGeometry, np.ndarray]:
    hdr, order = _parse_header(raw, path)
    dim = hdr["dim"]
    ndim = dim[0]
    if ndim not in (3, 4):
        raise DimensionMismatchError(f"{path}: dim[0] = {ndim}, only 3-D volumes are supported")
    extra = dim[4 : ndim + 1]
    if any(e != 1 for e in extra):
        raise DimensionMismatchError(f"{path}: non-singleton extents beyond the third axis: {extra}")
    dims = tuple(int(d) for d in dim[1:4])
    if any(d < 1 for d in dims):
        raise MalformedHeaderError(f"{path}: non-positive dims {dims}")

    code = hdr["datatype"]
    if code not in _DATATYPES:
        raise UnsupportedDatatypeError(f"{path}: unsupported datatype code {code}")
    dtype = _DATATYPES[code].newbyteorder(order)

    spacing = tuple(abs(float(p)) for p in hdr["pixdim"][1:4])
    if not all(s > 0 for s in spacing):
        raise MalformedHeaderError(f"{path}: non-positive pixdim {spacing}")

    offset = int(hdr["vox_offset"])
    if offset < HEADER_SIZE:
        offset = DEFAULT_VOX_OFFSET
    nbytes = dims[0] * dims[1] * dims[2] * dtype.itemsize
    if len(raw) < offset + nbytes:
        raise TruncatedPayloadError(
            f"{path}: payload has {max(0, len(raw) - offset)} bytes, header declares {nbytes}"
        )
    data = np.frombuffer(raw, dtype=dtype, count=dims[0] * dims[1] * dims[2], offset=offset)
    data = data.reshape(dims, order="F").astype(dtype.newbyteorder("="))

    slope, inter = float(hdr["scl_slope"]), float(hdr["scl_inter"])
    if math.isfinite(slope) and slope != 0.0 and math.isfinite(inter) and (slope, inter) != (1.0, 0.0):
        data = (data.astype(np.float64) * slope + inter).astype(np.float32)

    geometry = VolumeGeometry(dims, spacing, _header_affine(hdr, spacing))
    return geometry, data


def _as_intensity(data: np.ndarray) -> np.ndarray:
    if data.dtype in INTENSITY_DTYPES:
        return data
    if data.dtype == np.uint8:
        return data.astype(np.int16)
    if data.min() >= np.iinfo(np.int16).min and data.max() <= np.iinfo(np.int16).max:
        return data.astype(np.int16)
    return data.astype(np.float32)


def _as_labels(data: np.ndarray, path) -> np.ndarray:
    if data.dtype.kind == "f":
        rounded = np.rint(data)
        if not np.array_equal(rounded, data):
            raise NiftiFormatError(f"{path}: label volume holds non-integer values")
        data = rounded.astype(np.int32)
    if data.size and data.min() < 0:
        raise NiftiFormatError(f"{path}: label volume holds negative values")
    if data.dtype in LABEL_DTYPES:
        return data
    return data.astype(np.int32)


def load_volume(path, kind: str = "auto", label_table: Mapping[int, str] | None = None) -> Volume:
    """Read a ``.nii`` or ``.nii.gz`` file.

    ``kind`` is ``"image"``, ``"label"`` or ``"auto"``. In auto mode uint8
    and int32 payloads become a :class:`LabelVolume`, everything else an
    :class:`IntensityVolume`.
    """
    geometry, data = _decode(_read_bytes(path), path)
    if kind == "auto":
        kind = "label" if data.dtype in (np.dtype(np.uint8), np.dtype(np.int32)) else "image"
    if kind == "image":
        return IntensityVolume(geometry, _as_intensity(data))
    if kind == "label":
        return LabelVolume(geometry, _as_labels(data, path), label_table)
    raise ValueError(f"unknown volume kind {kind!r}")


def load_image(path) -> IntensityVolume:
    return load_volume(path, kind="image")


def load_labels(path, label_table: Mapping[int, str] | None = None) -> LabelVolume:
    return load_volume(path, kind="label", label_table=label_table)


# --------------------------------------------------------------------------
# writing


def _encode(v: Volume) -> bytes:
    voxels = v.voxels
    dtype = voxels.dtype.newbyteorder("=")
    if dtype not in _DATATYPE_CODES:
        raise UnsupportedDatatypeError(f"cannot write dtype {voxels.dtype}")
    g = v.geometry
    dim = (3, *g.dims, 1, 1, 1, 1)
    pixdim = (1.0, *g.spacing, 0.0, 0.0, 0.0, 0.0)
    hdr = {
        "sizeof_hdr": HEADER_SIZE,
        "data_type": b"",
        "db_name": b"",
        "extents": 0,
        "session_error": 0,
        "regular": ord("r"),
        "dim_info": 0,
        "dim": dim,
        "intent_p1": 0.0,
        "intent_p2": 0.0,
        "intent_p3": 0.0,
        "intent_code": 0,
        "datatype": _DATATYPE_CODES[dtype],
        "bitpix": dtype.itemsize * 8,
        "slice_start": 0,
        "pixdim": pixdim,
        "vox_offset": float(DEFAULT_VOX_OFFSET),
        "scl_slope": 1.0,
        "scl_inter": 0.0,
        "slice_end": 0,
        "slice_code": 0,
        "xyzt_units": 2,  # mm
        "cal_max": 0.0,
        "cal_min": 0.0,
        "slice_duration": 0.0,
        "toffset": 0.0,
        "glmax": 0,
        "glmin": 0,
        "descrip": b"",
        "aux_file": b"",
        "qform_code": 0,
        "sform_code": 1,
        "quatern_b": 0.0,
        "quatern_c": 0.0,
        "quatern_d": 0.0,
        "qoffset_x": 0.0,
        "qoffset_y": 0.0,
        "qoffset_z": 0.0,
        "srow_x": tuple(g.affine[0]),
        "srow_y": tuple(g.affine[1]),
        "srow_z": tuple(g.affine[2]),
        "intent_name": b"",
        "magic": b"n+1\x00",
    }
    flat = []
    for code, name in _HEADER_FIELDS:
        value = hdr[name]
        if isinstance(value, tuple):
            flat.extend(value)
        else:
            flat.append(value)
    header = struct.pack("<" + _HEADER_FORMAT, *flat)
    payload = np.asarray(voxels, dtype=dtype.newbyteorder("<")).tobytes(order="F")
    return header + b"\x00" * (DEFAULT_VOX_OFFSET - HEADER_SIZE) + payload


def write_volume(v: Volume, path) -> None:
    """Write ``v`` as NIfTI-1; a ``.gz`` suffix selects gzip compression.

    The gzip member carries no name and a zero mtime so equal volumes
    always produce equal bytes.
    """
    data = _encode(v)
    path = os.fspath(path)
    if path.endswith(".gz"):
        buf = io.BytesIO()
        with gzip.GzipFile(filename="", mode="wb", fileobj=buf, mtime=0, compresslevel=6) as gz:
            gz.write(data)
        data = buf.getvalue()
    with open(path, "wb") as f:
        f.write(data)
