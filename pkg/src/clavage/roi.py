"""MCE localization: the standardized 50-cube around the sternal end.

For a right clavicle the region of interest is the 25 mm cube hanging
off the bounding-box vertex at (X_max, Y_max, Z_min), expanded along
-X, -Y, +Z. Left clavicles are mirrored (volume and mesh) about the
volume's central plane first, so every extracted cube shares the
right-clavicle orientation. Values are sampled from the original HU
field (never the mask), padded with air, resampled at 0.5 mm isotropic
spacing, then windowed onto [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import volume as volmod
from .mesh import TriangleMesh, mirror_mesh_x
from .volume import AxisBox, HuVolume, PlanarSlice, _read_ctv, _write_ctv

MCE_SIZE_MM = 25.0
MCE_SPACING_MM = 0.5
MCE_N = 50  # 25 mm at 0.5 mm spacing: 50 samples, hence 50 slices per view


class RoiError(ValueError):
    pass


@dataclass(frozen=True)
class MceVolume:
    """Standardized unit-interval cube, 50 samples per axis at 0.5 mm."""

    laterality: str
    data: np.ndarray  # (50, 50, 50) float32 in [0, 1]
    world_box: AxisBox  # provenance in the (mirrored-for-left) volume frame

    def __post_init__(self):
        if self.laterality not in ("left", "right"):
            raise RoiError(f"laterality must be left or right, got {self.laterality!r}")
        if self.data.shape != (MCE_N, MCE_N, MCE_N):
            raise RoiError(f"MCE volume must be {MCE_N}^3, got {self.data.shape}")
        if self.data.dtype != np.float32:
            raise RoiError("MCE data must be float32")
        self.data.setflags(write=False)


def mce_box_for_right_clavicle(bbox: AxisBox) -> AxisBox:
    """25 mm cube off the (X_max, Y_max, Z_min) bounding-box vertex."""
    x_max, y_max = bbox.max[0], bbox.max[1]
    z_min = bbox.min[2]
    return AxisBox(
        np.array([x_max - MCE_SIZE_MM, y_max - MCE_SIZE_MM, z_min]),
        np.array([x_max, y_max, z_min + MCE_SIZE_MM]),
    )


def localize_mce(clavicle: TriangleMesh, vol: HuVolume, laterality: str) -> MceVolume:
    """Extract the standardized MCE cube for one detected clavicle."""
    if laterality == "left":
        plane = vol.mirror_plane_x()
        vol = volmod.mirror_x(vol)
        clavicle = mirror_mesh_x(clavicle, plane)
    elif laterality != "right":
        raise RoiError(f"cannot localize MCE for laterality {laterality!r}")

    box = mce_box_for_right_clavicle(clavicle.bounding_box())
    base = (box.min - vol.origin) / vol.spacing
    rel = tuple(
        base[a] + np.arange(MCE_N, dtype=np.float64) * (MCE_SPACING_MM / vol.spacing[a])
        for a in range(3)
    )
    hu = volmod.sample_grid(vol, rel, pad_value=volmod.AIR_HU)
    return MceVolume(
        laterality=laterality,
        data=volmod.window_to_unit(hu).astype(np.float32),
        world_box=box,
    )


def slice_stack(mce: MceVolume, view: str) -> list[PlanarSlice]:
    """All 50 planes of one view, ascending along the view's normal axis."""
    axis = volmod.AXIS_OF_VIEW.get(view)
    if axis is None:
        raise RoiError(f"unknown view {view!r}")
    slices = []
    for k in range(MCE_N):
        plane = np.take(mce.data, k, axis=axis).astype(np.float64)
        slices.append(
            PlanarSlice(
                view=view,
                index=k,
                pixels=plane,
                pixel_spacing=(MCE_SPACING_MM, MCE_SPACING_MM),
            )
        )
    return slices


def slice_pixels(mce: MceVolume, view: str, index: int) -> np.ndarray:
    """One plane as float64 pixels (model input form)."""
    axis = volmod.AXIS_OF_VIEW.get(view)
    if axis is None:
        raise RoiError(f"unknown view {view!r}")
    if not 0 <= index < MCE_N:
        raise RoiError(f"slice index {index} outside [0, {MCE_N - 1}]")
    return np.take(mce.data, index, axis=axis).astype(np.float64)


def save_mce(path, mce: MceVolume) -> None:
    _write_ctv(
        path,
        mce.data,
        spacing=np.full(3, MCE_SPACING_MM),
        origin=mce.world_box.min,
        dtype="f32le",
        extra={"laterality": mce.laterality},
    )


def load_mce(path) -> MceVolume:
    header, data = _read_ctv(path)
    if header["dtype"] != "f32le" or "laterality" not in header:
        raise RoiError(f"{path}: not an MCE volume file")
    origin = np.array(header["origin_mm"], dtype=np.float64)
    return MceVolume(
        laterality=header["laterality"],
        data=data.astype(np.float32),
        world_box=AxisBox(origin, origin + MCE_SIZE_MM),
    )
