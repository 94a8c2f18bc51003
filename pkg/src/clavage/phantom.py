"""Synthetic CT-like torso scenes with ground truth.

Each scene holds two mirrored S-curved clavicle tubes whose medial ends
face each other across a soft-tissue sternum block, plus distractor
bones (ribs, a spine segment, blobs, and one clavicle-like confuser).
The medial end of each clavicle carries a transverse epiphyseal gap of
age-dependent width, filled at cartilage-like intensity and bridged by
a cortical ring, so the bone stays one connected component while the
gap remains visible only in the unthresholded volume.

Determinism: every random quantity derives from the spec seed, and all
placement coordinates are quantized to 1/64 mm so that a mirrored scene
evaluates bit-identically (enabling exact left/right symmetry checks).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import volume as volmod
from .mesh import ComponentSet, TriangleMesh, connected_components, marching_cubes
from .roi import MceVolume, localize_mce
from .volume import AxisBox, BinaryMask, HuVolume

# Tissue intensities (HU)
SOFT_TISSUE = 40.0
STERNUM_HU = 120.0
SHAFT_HU = 900.0
CAP_HU = 700.0
GAP_HU = 100.0

# Fixed medial-region geometry: keeping the z profile constant across
# subjects pins the informative axial plane to a stable stack position.
TUBE_RADIUS = 5.0
Z_FLATTEN = 1.15  # elliptical cross-section: z semi-axis = r / 1.15
EDGE_W = 0.8  # outer soft-edge width (partial-volume ramp), mm
PAINT_W = 0.4  # internal region soft edges, mm
MEDIAL_RISE = 3.5  # tip sits this much above the acromial end (laterality cue)
MID_DIP = 3.2  # mid-bone dip below the acromial height (bbox Z_min)
STRAIGHT_LEN = 14.0  # straight +X run at the medial end (gap lives here)
CORE_RADIUS = 2.75  # epiphyseal gap disc radius (cortical ring bridges it)


class PhantomError(ValueError):
    pass


def _q64(x):
    """Quantize to 1/64 mm so mirrored coordinates are exact in float."""
    return np.round(np.asarray(x, dtype=np.float64) * 64.0) / 64.0


@dataclass(frozen=True)
class PhantomSpec:
    seed: int
    age: float
    gap_slope: float = 0.35  # mm of gap per year below gap_max_age
    gap_max_age: float = 24.0
    distractor_count: int = 6
    noise_sigma: float = 25.0
    voxel_spacing: float = 1.0
    volume_dims: tuple[int, int, int] = (160, 120, 120)

    def __post_init__(self):
        if not 14.0 <= self.age <= 26.0:
            raise PhantomError(f"age {self.age} outside [14, 26]")
        if not 0 <= self.distractor_count <= 6:
            raise PhantomError("distractor_count must be in [0, 6]")
        if self.voxel_spacing <= 0:
            raise PhantomError("voxel_spacing must be positive")

    def gap_width(self) -> float:
        return max(0.0, self.gap_slope * (self.gap_max_age - self.age))


@dataclass(frozen=True)
class ClavicleTruth:
    side: str
    tip: np.ndarray  # world mm, medial tip centre
    gap_center_x: float  # world x of the gap slab centre (this side's frame)
    gap_width: float
    cap_thickness: float
    analytic_box: AxisBox  # approximate iso-300 bounding box
    gap_plane_index: dict[str, int]  # per-view index in the MCE stack


@dataclass(frozen=True)
class PhantomScene:
    volume: HuVolume
    true_age: float
    clavicles: dict[str, ClavicleTruth]
    shape_boxes: list[tuple[str, AxisBox]]  # (tag, analytic box) incl. distractors
    spec: PhantomSpec

    def label_components(self, comps: ComponentSet) -> dict[int, str]:
        """Tag mesh components by matching centroids to ground-truth boxes."""
        labels = {}
        for i, mesh in enumerate(comps.components):
            centroid = mesh.vertices[np.unique(mesh.triangles)].mean(axis=0)
            best_tag, best_d = "distractor", np.inf
            for tag, box in self.shape_boxes:
                d = np.linalg.norm(
                    np.maximum(box.min - centroid, 0) + np.maximum(centroid - box.max, 0)
                )
                if d < best_d:
                    best_tag, best_d = tag, d
            labels[i] = best_tag
        return labels


# ---------------------------------------------------------------------------
# Geometry builders


def _clavicle_params(rng: np.random.Generator, spec: PhantomSpec, x_center: float) -> dict:
    p = {
        "half_gap": float(_q64(rng.uniform(7.0, 9.0))),
        "tip_y": float(_q64(rng.uniform(95.0, 98.0))),
        "tip_z": float(_q64(rng.uniform(64.0, 68.0))),
        "span_x": float(_q64(rng.uniform(38.0, 44.0))),
        "span_y": float(_q64(rng.uniform(79.0, 85.0))),
        "wiggle": float(_q64(rng.uniform(4.0, 7.0))),
        "cap_thickness": float(_q64(rng.uniform(4.5, 6.5))),
    }
    p["tip_x"] = float(_q64(x_center - p["half_gap"]))
    p["gap_width"] = float(_q64(spec.gap_width()))
    return p


def _right_clavicle_polyline(p: dict) -> np.ndarray:
    """Centerline of the right clavicle (low-X bone), medial tip last."""
    tip = np.array([p["tip_x"], p["tip_y"], p["tip_z"]])
    straight_start = tip - np.array([STRAIGHT_LEN, 0.0, 0.0])
    acromial = np.array(
        [
            p["tip_x"] - STRAIGHT_LEN - p["span_x"],
            p["tip_y"] - p["span_y"],
            p["tip_z"] - MEDIAL_RISE,
        ]
    )
    tau = np.linspace(0.0, 1.0, 33)[:-1]  # curved part, acromial -> straight start
    smooth = 3 * tau**2 - 2 * tau**3
    x = acromial[0] + p["span_x"] * tau + p["wiggle"] * np.sin(2 * np.pi * tau) * tau * (1 - tau)
    y = acromial[1] + p["span_y"] * smooth
    z = acromial[2] + MEDIAL_RISE * tau**1.5 - MID_DIP * np.sin(np.pi * tau)
    curve = np.stack([x, y, z], axis=1)
    s = np.linspace(0.0, 1.0, 8)
    straight = straight_start[None, :] * (1 - s[:, None]) + tip[None, :] * s[:, None]
    return _q64(np.vstack([curve, straight]))


def _mirror_polyline(pts: np.ndarray, x_center: float) -> np.ndarray:
    out = pts.copy()
    out[:, 0] = 2.0 * x_center - out[:, 0]
    return out


def _polyline_distance(coords, pts: np.ndarray) -> np.ndarray:
    """Min distance from grid points to a polyline, z-flattened metric.

    The difference is formed as (p - a) - t*(a->b) so that mirrored
    inputs produce bitwise-identical distances.
    """
    xs, ys, zs = coords
    zf = Z_FLATTEN
    best = None
    for a, b in zip(pts[:-1], pts[1:]):
        ab = b - a
        dx = xs - a[0]
        dy = ys - a[1]
        dz = (zs - a[2]) * zf
        abz = ab[2] * zf
        denom = ab[0] * ab[0] + ab[1] * ab[1] + abz * abz
        if denom == 0.0:
            t = 0.0
        else:
            t = (dx * ab[0] + dy * ab[1] + dz * abz) / denom
            t = np.clip(t, 0.0, 1.0)
        ex = dx - t * ab[0]
        ey = dy - t * ab[1]
        ez = dz - t * abz
        d2 = ex * ex + ey * ey + ez * ez
        best = d2 if best is None else np.minimum(best, d2)
    return np.sqrt(best)


def _ramp(t: np.ndarray) -> np.ndarray:
    return np.clip(t + 0.5, 0.0, 1.0)


def _paint_clavicle(coords, dist, p: dict, side: str, x_center: float) -> np.ndarray:
    """HU inside the tube: shaft, cap beyond the gap, ring-bridged gap disc.

    The gap disc is carved out to the surface on the -Y side (a slit in
    the cortical ring), so the gap interior is never a closed cavity and
    each clavicle meshes as a single surface component.
    """
    xs, ys = coords[0], coords[1]
    x_tip = p["tip_x"] if side == "right" else 2.0 * x_center - p["tip_x"]
    sign = 1.0 if side == "right" else -1.0
    # medial-axis coordinate: distance from the tip going into the bone
    depth = sign * (x_tip - xs)
    cap_a = _ramp((p["cap_thickness"] - depth) / PAINT_W)
    gap_lo = p["cap_thickness"]
    gap_hi = p["cap_thickness"] + p["gap_width"]
    slab = _ramp((depth - gap_lo) / PAINT_W) * _ramp((gap_hi - depth) / PAINT_W)
    core = _ramp((CORE_RADIUS - dist) / PAINT_W)
    slit = _ramp((-(ys - p["tip_y"]) - 1.2) / PAINT_W)
    opening = np.maximum(core, slit)
    value = SHAFT_HU + (GAP_HU - SHAFT_HU) * slab * opening
    return value * (1.0 - cap_a) + CAP_HU * cap_a


def _analytic_tube_box(pts: np.ndarray, r_eff: float) -> AxisBox:
    lo = pts.min(axis=0) - np.array([r_eff, r_eff, r_eff / Z_FLATTEN])
    hi = pts.max(axis=0) + np.array([r_eff, r_eff, r_eff / Z_FLATTEN])
    return AxisBox(lo, hi)


def iso300_radius(r: float = TUBE_RADIUS, w: float = EDGE_W) -> float:
    """Effective radius where the soft-edged tube crosses 300 HU."""
    frac = (300.0 - SOFT_TISSUE) / (SHAFT_HU - SOFT_TISSUE)
    return r + w * (0.5 - frac)


# ---------------------------------------------------------------------------
# Rasterization


class _Canvas:
    def __init__(self, spec: PhantomSpec):
        self.spacing = spec.voxel_spacing
        self.dims = spec.volume_dims
        self.hu = np.full(spec.volume_dims, SOFT_TISSUE, dtype=np.float64)

    def subgrid(self, box: AxisBox, margin: float):
        lo = np.maximum(np.floor((box.min - margin) / self.spacing).astype(int), 0)
        hi = np.minimum(
            np.ceil((box.max + margin) / self.spacing).astype(int) + 1, self.dims
        )
        idx = tuple(slice(lo[a], hi[a]) for a in range(3))
        coords = (
            (np.arange(lo[0], hi[0]) * self.spacing)[:, None, None],
            (np.arange(lo[1], hi[1]) * self.spacing)[None, :, None],
            (np.arange(lo[2], hi[2]) * self.spacing)[None, None, :],
        )
        return idx, coords

    def blend(self, idx, alpha: np.ndarray, value) -> None:
        region = self.hu[idx]
        self.hu[idx] = region * (1.0 - alpha) + value * alpha

    def add_tube(self, pts: np.ndarray, radius: float, value, w: float = EDGE_W) -> None:
        box = AxisBox(pts.min(axis=0), pts.max(axis=0))
        idx, coords = self.subgrid(box, radius + w + 1.0)
        dist = _polyline_distance(coords, pts)
        alpha = _ramp((radius - dist) / w)
        val = value(coords, dist) if callable(value) else value
        self.blend(idx, alpha, val)

    def add_ellipsoid(self, center, semi, value) -> None:
        center = np.asarray(center, dtype=np.float64)
        semi = np.asarray(semi, dtype=np.float64)
        idx, coords = self.subgrid(AxisBox(center - semi, center + semi), EDGE_W + 1.0)
        xs, ys, zs = coords
        dn = np.sqrt(
            ((xs - center[0]) / semi[0]) ** 2
            + ((ys - center[1]) / semi[1]) ** 2
            + ((zs - center[2]) / semi[2]) ** 2
        )
        alpha = _ramp((1.0 - dn) * semi.min() / EDGE_W)
        self.blend(idx, alpha, value)

    def add_box(self, center, half, value) -> None:
        center = np.asarray(center, dtype=np.float64)
        half = np.asarray(half, dtype=np.float64)
        idx, coords = self.subgrid(AxisBox(center - half, center + half), EDGE_W + 1.0)
        xs, ys, zs = coords
        qx = np.abs(xs - center[0]) - half[0]
        qy = np.abs(ys - center[1]) - half[1]
        qz = np.abs(zs - center[2]) - half[2]
        outside = np.sqrt(
            np.maximum(qx, 0.0) ** 2 + np.maximum(qy, 0.0) ** 2 + np.maximum(qz, 0.0) ** 2
        )
        inside = np.minimum(np.maximum(qx, np.maximum(qy, qz)), 0.0)
        alpha = _ramp(-(outside + inside) / EDGE_W)
        self.blend(idx, alpha, value)

    def finalize(self, noise_sigma: float, rng: np.random.Generator) -> HuVolume:
        hu = self.hu
        if noise_sigma > 0:
            hu = hu + rng.normal(0.0, noise_sigma, size=hu.shape)
        data = np.clip(np.rint(hu), volmod.HU_MIN, volmod.HU_MAX).astype(np.int16)
        return HuVolume(
            data=data,
            spacing=np.full(3, self.spacing),
            origin=np.zeros(3),
        )


# ---------------------------------------------------------------------------
# Distractor catalog (first `distractor_count` entries are used)


def _distractors(rng: np.random.Generator, x_center: float) -> list[tuple[str, dict]]:
    """Six-shape catalog in pairwise-disjoint placement cells.

    Everything in the low band stays >= 10 mm below the clavicle boxes;
    the confuser (a clavicle-scale curved tube) owns the high band.
    """

    def arc(cx, cy, cz, r_arc, z_tilt, half_angle=1.0, n=25):
        th = np.linspace(-half_angle, half_angle, n)
        pts = np.stack(
            [cx + r_arc * np.sin(th), cy + r_arc * (1 - np.cos(th)), cz + z_tilt * th],
            axis=1,
        )
        return _q64(pts)

    j = lambda lo, hi: float(_q64(rng.uniform(lo, hi)))
    catalog = [
        ("rib", {"kind": "tube", "pts": arc(j(36, 40), j(24, 34), j(13, 15), j(22, 28), j(1, 2)),
                  "radius": j(2.6, 3.2), "hu": 780.0}),
        ("rib", {"kind": "tube", "pts": arc(j(118, 124), j(24, 34), j(13, 15), j(22, 28), j(-2, -1)),
                  "radius": j(2.6, 3.2), "hu": 760.0}),
        ("spine", {"kind": "tube",
                   "pts": _q64(np.array([[x_center + j(-4, 4), j(20, 28), 24.0],
                                          [x_center + j(-4, 4), j(20, 28), 34.0]])),
                   "radius": j(5.0, 6.0), "hu": 950.0}),
        ("blob", {"kind": "ellipsoid", "center": [j(40, 50), j(64, 70), j(27, 31)],
                   "semi": [j(9, 12), j(7, 9), j(5, 7)], "hu": 480.0}),
        ("blob", {"kind": "ellipsoid", "center": [j(110, 120), j(64, 70), j(27, 31)],
                   "semi": [j(7, 9), j(6, 8), j(5, 7)], "hu": 520.0}),
        ("confuser", {"kind": "tube",
                      "pts": arc(j(70, 90), j(48, 62), j(92, 96), j(38, 46), j(2, 3)),
                      "radius": j(4.3, 5.0), "hu": 870.0}),
    ]
    return catalog


# ---------------------------------------------------------------------------


def _gap_plane_indices(p: dict, polyline_right: np.ndarray) -> dict[str, int]:
    """Ground-truth most-informative slice per view, right-clavicle frame."""
    r_eff = iso300_radius()
    box = _analytic_tube_box(polyline_right, r_eff)
    gap_center_depth = p["cap_thickness"] + p["gap_width"] / 2.0
    spacing = 0.5
    axial = (p["tip_z"] - box.min[2]) / spacing
    coronal = (p["tip_y"] - (box.max[1] - 25.0)) / spacing
    sagittal = ((p["tip_x"] - gap_center_depth) - (box.max[0] - 25.0)) / spacing
    clamp = lambda v: int(np.clip(round(v), 0, 49))
    return {"axial": clamp(axial), "coronal": clamp(coronal), "sagittal": clamp(sagittal)}


def _validate_dims(spec: PhantomSpec) -> None:
    extent = np.array(spec.volume_dims) * spec.voxel_spacing
    needed = np.array([150.0, 110.0, 112.0])
    if np.any(extent < needed):
        raise PhantomError(
            f"volume extent {extent} mm too small for the scene (needs >= {needed})"
        )


def generate_scene(spec: PhantomSpec) -> PhantomScene:
    """Deterministic scene synthesis from the spec seed."""
    _validate_dims(spec)
    ss = np.random.SeedSequence(spec.seed).spawn(3)
    geom_rng = np.random.default_rng(ss[0])
    distractor_rng = np.random.default_rng(ss[1])
    noise_rng = np.random.default_rng(ss[2])

    x_center = (spec.volume_dims[0] - 1) / 2.0 * spec.voxel_spacing
    p = _clavicle_params(geom_rng, spec, x_center)
    right_pts = _right_clavicle_polyline(p)
    left_pts = _mirror_polyline(right_pts, x_center)

    canvas = _Canvas(spec)
    # sternum block between the medial tips (soft tissue; below threshold)
    canvas.add_box(
        [x_center, p["tip_y"] - 2.0, p["tip_z"]],
        [max(p["half_gap"] - 2.0, 1.5), 7.0, 9.0],
        STERNUM_HU,
    )
    for side, pts in (("right", right_pts), ("left", left_pts)):
        canvas.add_tube(
            pts,
            TUBE_RADIUS,
            lambda coords, dist, side=side: _paint_clavicle(coords, dist, p, side, x_center),
        )
    shape_boxes = []
    r_eff = iso300_radius()
    for side, pts in (("right", right_pts), ("left", left_pts)):
        shape_boxes.append((f"{side}-clavicle", _analytic_tube_box(pts, r_eff)))

    for tag, d in _distractors(distractor_rng, x_center)[: spec.distractor_count]:
        if d["kind"] == "tube":
            canvas.add_tube(d["pts"], d["radius"], d["hu"])
            shape_boxes.append((tag, _analytic_tube_box(d["pts"], d["radius"] + EDGE_W)))
        else:
            canvas.add_ellipsoid(d["center"], d["semi"], d["hu"])
            c, s = np.asarray(d["center"]), np.asarray(d["semi"])
            shape_boxes.append((tag, AxisBox(c - s - EDGE_W, c + s + EDGE_W)))

    volume = canvas.finalize(spec.noise_sigma, noise_rng)

    indices = _gap_plane_indices(p, right_pts)
    clavicles = {}
    for side, pts in (("right", right_pts), ("left", left_pts)):
        tip = pts[-1]
        sign = 1.0 if side == "right" else -1.0
        clavicles[side] = ClavicleTruth(
            side=side,
            tip=tip,
            gap_center_x=float(tip[0] - sign * (p["cap_thickness"] + p["gap_width"] / 2.0)),
            gap_width=p["gap_width"],
            cap_thickness=p["cap_thickness"],
            analytic_box=_analytic_tube_box(pts, r_eff),
            gap_plane_index=dict(indices),
        )

    return PhantomScene(
        volume=volume,
        true_age=spec.age,
        clavicles=clavicles,
        shape_boxes=shape_boxes,
        spec=spec,
    )


def scene_components(scene: PhantomScene, threshold: float = 300.0) -> ComponentSet:
    """Threshold + marching cubes + connected components for one scene."""
    mask = volmod.threshold_bone(scene.volume, threshold)
    return connected_components(marching_cubes(mask), source_volume_id=str(scene.spec.seed))


# ---------------------------------------------------------------------------
# Fast path: clavicle-only sub-volume -> MCE pair (skips detection)


def generate_mce_pair(spec: PhantomSpec) -> tuple[MceVolume, MceVolume, float]:
    """Standardized MCE cubes for both clavicles without full-scene work.

    Rasterizes each clavicle (plus noise) into a sub-volume that covers
    the medial region and the mid-bone dip, then runs the regular
    threshold -> mesh -> localize path on it.
    """
    _validate_dims(spec)
    ss = np.random.SeedSequence(spec.seed).spawn(3)
    geom_rng = np.random.default_rng(ss[0])
    noise_rng = np.random.default_rng(ss[2])

    x_center = (spec.volume_dims[0] - 1) / 2.0 * spec.voxel_spacing
    p = _clavicle_params(geom_rng, spec, x_center)
    right_pts = _right_clavicle_polyline(p)

    out = []
    for side in ("right", "left"):
        pts = right_pts if side == "right" else _mirror_polyline(right_pts, x_center)
        sub = _ClavicleSubVolume(spec, pts, p, side, x_center, noise_rng)
        mask = volmod.threshold_bone(sub.volume)
        comps = connected_components(marching_cubes(mask))
        if len(comps) == 0:
            raise PhantomError("clavicle sub-volume produced no components")
        mce = localize_mce(comps.components[0], sub.volume, side)
        out.append(mce)
    return out[0], out[1], spec.age


class _ClavicleSubVolume:
    def __init__(self, spec, pts, p, side, x_center, noise_rng):
        spacing = spec.voxel_spacing
        r_eff = iso300_radius()
        box = _analytic_tube_box(pts, r_eff)
        # cover the medial ~46 mm including the mid-bone dip (bbox Z_min)
        tip = pts[-1]
        if side == "right":
            lo_x, hi_x = tip[0] - 46.0, tip[0] + 8.0
        else:
            lo_x, hi_x = tip[0] - 8.0, tip[0] + 46.0
        lo = np.array([lo_x, tip[1] - 55.0, box.min[2] - 6.0])
        hi = np.array([hi_x, tip[1] + 8.0, tip[2] + 16.0])  # crop reaches z_min+25
        lo_idx = np.floor(lo / spacing).astype(int)
        hi_idx = np.ceil(hi / spacing).astype(int) + 1
        dims = tuple((hi_idx - lo_idx).tolist())
        origin = lo_idx * spacing

        coords = (
            (np.arange(lo_idx[0], hi_idx[0]) * spacing)[:, None, None],
            (np.arange(lo_idx[1], hi_idx[1]) * spacing)[None, :, None],
            (np.arange(lo_idx[2], hi_idx[2]) * spacing)[None, None, :],
        )
        hu = np.full(dims, SOFT_TISSUE, dtype=np.float64)
        # the sternum corner pokes into the crop; rasterize it like the scene
        xs, ys, zs = coords
        center = np.array([x_center, p["tip_y"] - 2.0, p["tip_z"]])
        half = np.array([max(p["half_gap"] - 2.0, 1.5), 7.0, 9.0])
        qx = np.abs(xs - center[0]) - half[0]
        qy = np.abs(ys - center[1]) - half[1]
        qz = np.abs(zs - center[2]) - half[2]
        outside = np.sqrt(
            np.maximum(qx, 0.0) ** 2 + np.maximum(qy, 0.0) ** 2 + np.maximum(qz, 0.0) ** 2
        )
        inside = np.minimum(np.maximum(qx, np.maximum(qy, qz)), 0.0)
        st_alpha = _ramp(-(outside + inside) / EDGE_W)
        hu = hu * (1.0 - st_alpha) + STERNUM_HU * st_alpha

        dist = _polyline_distance(coords, pts)
        alpha = _ramp((TUBE_RADIUS - dist) / EDGE_W)
        value = _paint_clavicle(coords, dist, p, side, x_center)
        hu = hu * (1.0 - alpha) + value * alpha
        if spec.noise_sigma > 0:
            hu = hu + noise_rng.normal(0.0, spec.noise_sigma, size=hu.shape)
        data = np.clip(np.rint(hu), volmod.HU_MIN, volmod.HU_MAX).astype(np.int16)
        self.volume = HuVolume(data=data, spacing=np.full(3, spacing), origin=origin.astype(np.float64))


# ---------------------------------------------------------------------------
# Dataset


@dataclass(frozen=True)
class PhantomDataset:
    """Per-scene specs plus a stratified train/val/test split (lazy scenes)."""

    specs: list[PhantomSpec]
    split: dict[str, list[int]]

    @property
    def ages(self) -> np.ndarray:
        return np.array([s.age for s in self.specs])

    def scene(self, i: int) -> PhantomScene:
        return generate_scene(self.specs[i])

    def split_indices(self, name: str) -> list[int]:
        return list(self.split[name])


def _split_tokens(n: int) -> list[str]:
    """Exact 64/16/20 token counts, interleaved to spread across strata."""
    fractions = (("train", 0.64), ("val", 0.16), ("test", 0.20))
    targets = {}
    floor_total = 0
    remainders = []
    for name, f in fractions:
        t = int(np.floor(f * n))
        targets[name] = t
        floor_total += t
        remainders.append((f * n - t, name))
    for _, name in sorted(remainders, reverse=True)[: n - floor_total]:
        targets[name] += 1
    counts = {name: 0 for name, _ in fractions}
    tokens = []
    for k in range(1, n + 1):
        name = max(
            fractions,
            key=lambda nf: nf[1] * k - counts[nf[0]] - (0 if counts[nf[0]] < targets[nf[0]] else np.inf),
        )[0]
        counts[name] += 1
        tokens.append(name)
    return tokens


def generate_dataset(
    n: int,
    age_range: tuple[float, float] = (14.0, 26.0),
    seed: int = 0,
    **spec_overrides,
) -> PhantomDataset:
    """n scenes with uniform ages and a stratified 64/16/20 split."""
    if n < 25:
        raise PhantomError("need at least 25 scenes for a meaningful split")
    ss = np.random.SeedSequence(seed)
    age_rng = np.random.default_rng(ss.spawn(1)[0])
    ages = age_rng.uniform(age_range[0], age_range[1], size=n)
    scene_seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(n + 1)[1:]]
    specs = [
        PhantomSpec(seed=scene_seeds[i], age=float(ages[i]), **spec_overrides)
        for i in range(n)
    ]

    # stratify by integer age: deal interleaved split tokens down the
    # stratum-sorted subject order
    order = sorted(range(n), key=lambda i: (int(np.floor(ages[i])), i))
    tokens = _split_tokens(n)
    split = {"train": [], "val": [], "test": []}
    for subj, tok in zip(order, tokens):
        split[tok].append(subj)
    for key in split:
        split[key].sort()
    return PhantomDataset(specs=specs, split=split)
