"""CT-like scalar volumes in physical coordinates.

Axis convention (recorded in the file header as ``axis_convention``):
X points toward the subject's left, Z toward the head, Y completes the
right-handed frame.  Axial planes are perpendicular to Z, coronal to Y,
sagittal to X.  A volume with dims ``(nx, ny, nz)`` and spacing ``s``
covers the world box ``[origin, origin + dims * s]``; voxel ``(i, j, k)``
is sampled at ``origin + (i, j, k) * s``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

HU_MIN = -1024
HU_MAX = 3071
WINDOW_LO = -1000.0  # display/model window: air
WINDOW_HI = 2000.0   # dense cortical bone
AIR_HU = -1000

AXIS_OF_VIEW = {"sagittal": 0, "coronal": 1, "axial": 2}

CTV_AXIS_CONVENTION = "fig2d"


class CtvFormatError(ValueError):
    """Raised when a .ctv file is malformed or inconsistent."""


def _check_geometry(spacing, origin, shape):
    spacing = np.asarray(spacing, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    if spacing.shape != (3,) or origin.shape != (3,):
        raise ValueError("spacing and origin must be length-3 vectors")
    if not np.all(spacing > 0):
        raise ValueError(f"spacing must be strictly positive, got {spacing}")
    if len(shape) != 3 or any(n < 1 for n in shape):
        raise ValueError(f"volume data must be 3-D with positive dims, got shape {shape}")
    return spacing, origin


@dataclass(frozen=True)
class HuVolume:
    """3-D scalar field in Hounsfield units with physical geometry.

    ``data[i, j, k]`` indexes (x, y, z); dtype is int16.
    """

    data: np.ndarray
    spacing: np.ndarray
    origin: np.ndarray

    def __post_init__(self):
        spacing, origin = _check_geometry(self.spacing, self.origin, self.data.shape)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        if self.data.dtype != np.int16:
            raise ValueError(f"HuVolume data must be int16, got {self.data.dtype}")
        self.data.setflags(write=False)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def world_box(self) -> AxisBox:
        """Cell-convention physical extent: dims * spacing per axis."""
        return AxisBox(self.origin.copy(), self.origin + np.array(self.dims) * self.spacing)

    def mirror_plane_x(self) -> float:
        """X of the plane about which mirror_x reflects voxel content."""
        return float(self.origin[0] + (self.dims[0] - 1) / 2.0 * self.spacing[0])


@dataclass(frozen=True)
class BinaryMask:
    """Boolean voxel field sharing an HuVolume's geometry."""

    data: np.ndarray
    spacing: np.ndarray
    origin: np.ndarray

    def __post_init__(self):
        spacing, origin = _check_geometry(self.spacing, self.origin, self.data.shape)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        if self.data.dtype != np.bool_:
            raise ValueError(f"BinaryMask data must be bool, got {self.data.dtype}")
        self.data.setflags(write=False)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class AxisBox:
    """Axis-aligned box in world mm, min <= max componentwise."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64)
        hi = np.asarray(self.max, dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ValueError("AxisBox bounds must be length-3 vectors")
        if not np.all(lo <= hi):
            raise ValueError(f"AxisBox min must be <= max, got {lo} / {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min


@dataclass(frozen=True)
class PlanarSlice:
    """A single physical plane, windowed to unit-interval pixels.

    ``pixels[a, b]`` indexes the two in-plane axes in ascending axis
    order (axial -> (x, y), coronal -> (x, z), sagittal -> (y, z)).
    """

    view: str
    index: int
    pixels: np.ndarray
    pixel_spacing: tuple[float, float]

    def __post_init__(self):
        if self.view not in AXIS_OF_VIEW:
            raise ValueError(f"unknown view {self.view!r}")
        if self.pixels.ndim != 2:
            raise ValueError("slice pixels must be 2-D")
        self.pixels.setflags(write=False)


# ---------------------------------------------------------------------------
# .ctv container


def _write_ctv(path, array: np.ndarray, spacing, origin, dtype: str, extra: dict | None = None) -> None:
    header = {
        "dims": [int(n) for n in array.shape],
        "spacing_mm": [float(v) for v in spacing],
        "origin_mm": [float(v) for v in origin],
        "dtype": dtype,
        "axis_convention": CTV_AXIS_CONVENTION,
    }
    if extra:
        header.update(extra)
    np_dtype = {"i16le": "<i2", "f32le": "<f4"}[dtype]
    payload = np.asfortranarray(array.astype(np_dtype, copy=False)).tobytes(order="F")
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(blob + b"\n\x00" + payload)


def _read_ctv(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as f:
        raw = f.read()
    sep = raw.find(b"\n\x00")
    if sep < 0:
        raise CtvFormatError(f"{path}: missing header terminator")
    try:
        header = json.loads(raw[:sep].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CtvFormatError(f"{path}: malformed JSON header ({exc})") from exc
    for key in ("dims", "spacing_mm", "origin_mm", "dtype"):
        if key not in header:
            raise CtvFormatError(f"{path}: header missing field {key!r}")
    dims = header["dims"]
    if len(dims) != 3 or any(not isinstance(n, int) or n < 1 for n in dims):
        raise CtvFormatError(f"{path}: bad dims {dims}")
    if any(s <= 0 for s in header["spacing_mm"]):
        raise CtvFormatError(f"{path}: non-positive spacing {header['spacing_mm']}")
    if header["dtype"] not in ("i16le", "f32le"):
        raise CtvFormatError(f"{path}: unsupported dtype {header['dtype']!r}")
    np_dtype = {"i16le": "<i2", "f32le": "<f4"}[header["dtype"]]
    payload = raw[sep + 2:]
    n_expected = dims[0] * dims[1] * dims[2]
    flat = np.frombuffer(payload, dtype=np_dtype)
    if flat.size != n_expected:
        raise CtvFormatError(
            f"{path}: payload holds {flat.size} voxels, header declares {n_expected}"
        )
    array = np.ascontiguousarray(flat.reshape(tuple(dims), order="F"))
    return header, array


def save_volume(path, vol: HuVolume) -> None:
    _write_ctv(path, vol.data, vol.spacing, vol.origin, "i16le")


def load_volume(path) -> HuVolume:
    """Load an i16le .ctv volume; bit-exact inverse of save_volume."""
    header, array = _read_ctv(path)
    if header["dtype"] != "i16le":
        raise CtvFormatError(f"{path}: expected i16le volume, got {header['dtype']}")
    return HuVolume(
        data=array.astype(np.int16),
        spacing=np.array(header["spacing_mm"], dtype=np.float64),
        origin=np.array(header["origin_mm"], dtype=np.float64),
    )


# ---------------------------------------------------------------------------
# Sampling core


def sample_grid(
    vol: HuVolume,
    rel: tuple[np.ndarray, np.ndarray, np.ndarray],
    pad_value: float | None,
    chunk: int = 64,
) -> np.ndarray:
    """Trilinear sampling on a separable grid of continuous voxel indices.

    ``rel[a]`` holds the continuous index positions along axis ``a``.
    ``pad_value None`` clamps to the border (edge replication); otherwise
    points outside the sample hull ``[0, dims-1]`` receive ``pad_value``.
    Returns float64 of shape ``(len(rel[0]), len(rel[1]), len(rel[2]))``.
    """
    data = vol.data
    dims = np.array(data.shape)
    rel = [np.asarray(r, dtype=np.float64) for r in rel]
    out = np.empty((rel[0].size, rel[1].size, rel[2].size), dtype=np.float64)

    idx0, frac, valid = [], [], []
    for a in range(3):
        r = rel[a]
        inside = (r >= 0.0) & (r <= dims[a] - 1)
        rc = np.clip(r, 0.0, dims[a] - 1)
        i0 = np.floor(rc).astype(np.intp)
        i0 = np.minimum(i0, max(dims[a] - 2, 0))
        f = rc - i0
        if dims[a] == 1:
            f = np.zeros_like(f)
        idx0.append(i0)
        frac.append(f)
        valid.append(inside)

    fy = frac[1][:, None]
    fz = frac[2][None, :]
    j0, k0 = idx0[1], idx0[2]
    j1 = np.minimum(j0 + 1, dims[1] - 1)
    k1 = np.minimum(k0 + 1, dims[2] - 1)

    for start in range(0, rel[0].size, chunk):
        stop = min(start + chunk, rel[0].size)
        i0 = idx0[0][start:stop]
        i1 = np.minimum(i0 + 1, dims[0] - 1)
        fx = frac[0][start:stop][:, None, None]
        ia = i0[:, None, None]
        ib = i1[:, None, None]
        ja, jb = j0[None, :, None], j1[None, :, None]
        ka, kb = k0[None, None, :], k1[None, None, :]
        c000 = data[ia, ja, ka].astype(np.float64)
        c100 = data[ib, ja, ka].astype(np.float64)
        c010 = data[ia, jb, ka].astype(np.float64)
        c110 = data[ib, jb, ka].astype(np.float64)
        c001 = data[ia, ja, kb].astype(np.float64)
        c101 = data[ib, ja, kb].astype(np.float64)
        c011 = data[ia, jb, kb].astype(np.float64)
        c111 = data[ib, jb, kb].astype(np.float64)
        cx00 = c000 * (1 - fx) + c100 * fx
        cx10 = c010 * (1 - fx) + c110 * fx
        cx01 = c001 * (1 - fx) + c101 * fx
        cx11 = c011 * (1 - fx) + c111 * fx
        cxy0 = cx00 * (1 - fy) + cx10 * fy
        cxy1 = cx01 * (1 - fy) + cx11 * fy
        out[start:stop] = cxy0 * (1 - fz) + cxy1 * fz

    if pad_value is not None:
        mask = (
            valid[0][:, None, None]
            & valid[1][None, :, None]
            & valid[2][None, None, :]
        )
        out = np.where(mask, out, float(pad_value))
    return out


# ---------------------------------------------------------------------------
# Operations


def threshold_bone(vol: HuVolume, threshold: float = 300.0) -> BinaryMask:
    """Mask of voxels with HU >= threshold (inclusive: 300 counts as bone)."""
    return BinaryMask(data=vol.data >= threshold, spacing=vol.spacing, origin=vol.origin)


def resample_isotropic(vol: HuVolume, target_spacing: float = 0.5) -> HuVolume:
    """Resample to isotropic spacing by trilinear interpolation.

    The output grid is anchored at the source origin (sample i sits at
    origin + i*target); per axis the voxel count is round(dims*s/target),
    preserving the cell-convention extent within one output voxel.
    Samples past the last source sample are border-clamped.
    """
    if target_spacing <= 0:
        raise ValueError("target_spacing must be positive")
    if any(n < 2 for n in vol.dims):
        raise ValueError(f"cannot resample degenerate volume with dims {vol.dims}")
    dims_out = [
        max(2, int(round(vol.dims[a] * vol.spacing[a] / target_spacing))) for a in range(3)
    ]
    rel = tuple(
        np.arange(dims_out[a], dtype=np.float64) * (target_spacing / vol.spacing[a])
        for a in range(3)
    )
    values = sample_grid(vol, rel, pad_value=None)
    data = np.clip(np.rint(values), HU_MIN, HU_MAX).astype(np.int16)
    return HuVolume(
        data=data,
        spacing=np.full(3, float(target_spacing)),
        origin=vol.origin.copy(),
    )


def crop_box(vol: HuVolume, box: AxisBox, pad_value: float = AIR_HU) -> HuVolume:
    """Crop to a world box at the source spacing, padding outside voxels.

    The output grid is anchored at box.min; the voxel count per axis is
    ceil(extent/spacing) so the cell-convention output extent covers the
    box. Off-lattice boxes are sampled by trilinear interpolation.
    """
    extent = box.extent
    if not np.all(extent > 0):
        raise ValueError(f"degenerate crop box with extent {extent}")
    dims_out = [max(1, int(np.ceil(extent[a] / vol.spacing[a] - 1e-9))) for a in range(3)]
    base = (box.min - vol.origin) / vol.spacing
    rel = tuple(base[a] + np.arange(dims_out[a], dtype=np.float64) for a in range(3))
    values = sample_grid(vol, rel, pad_value=pad_value)
    data = np.clip(np.rint(values), HU_MIN, HU_MAX).astype(np.int16)
    return HuVolume(data=data, spacing=vol.spacing.copy(), origin=box.min.copy())


def window_to_unit(hu: np.ndarray) -> np.ndarray:
    """Clip HU to [WINDOW_LO, WINDOW_HI] and map affinely onto [0, 1]."""
    clipped = np.clip(np.asarray(hu, dtype=np.float64), WINDOW_LO, WINDOW_HI)
    return (clipped - WINDOW_LO) / (WINDOW_HI - WINDOW_LO)


def extract_slice(vol: HuVolume, view: str, index: int) -> PlanarSlice:
    """Extract one physical plane, windowed to [0, 1] pixels."""
    axis = AXIS_OF_VIEW.get(view)
    if axis is None:
        raise ValueError(f"unknown view {view!r}")
    if not 0 <= index < vol.dims[axis]:
        raise IndexError(f"{view} index {index} outside [0, {vol.dims[axis] - 1}]")
    plane = np.take(vol.data, index, axis=axis)
    in_plane = [a for a in range(3) if a != axis]
    return PlanarSlice(
        view=view,
        index=index,
        pixels=window_to_unit(plane),
        pixel_spacing=(float(vol.spacing[in_plane[0]]), float(vol.spacing[in_plane[1]])),
    )


def mirror_x(vol: HuVolume) -> HuVolume:
    """Flip voxel content about the volume's central YZ plane."""
    return HuVolume(
        data=np.ascontiguousarray(vol.data[::-1]),
        spacing=vol.spacing.copy(),
        origin=vol.origin.copy(),
    )
