"""Triangle meshes from binary masks: marching cubes, components, geometry.

Vertices live in world millimetres. Meshes produced by marching cubes on
a closed mask region are watertight (every undirected edge borders
exactly two triangles) with outward-oriented winding; vertex coordinates
come from exact lattice arithmetic so identical lattice points are
shared, never duplicated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mc_tables import CORNER_OFFSETS, CORNER_PAIRS, TRI_TABLE
from .volume import AxisBox, BinaryMask


class MeshError(ValueError):
    """Raised for geometric preconditions (e.g. non-watertight input)."""


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle soup; exact-zero-area triangles are dropped."""

    vertices: np.ndarray  # (V, 3) float64, world mm
    triangles: np.ndarray  # (T, 3) int64

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        tris = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if tris.size and (tris.min() < 0 or tris.max() >= len(verts)):
            raise ValueError("triangle indices out of range")
        if tris.size:
            p = verts[tris]
            cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
            keep = np.einsum("ij,ij->i", cross, cross) > 0.0
            tris = tris[keep]
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "triangles", tris)
        verts.setflags(write=False)
        tris.setflags(write=False)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def bounding_box(self) -> AxisBox:
        if self.is_empty():
            raise MeshError("empty mesh has no bounding box")
        used = self.vertices[np.unique(self.triangles)]
        return AxisBox(used.min(axis=0), used.max(axis=0))


@dataclass(frozen=True)
class ComponentSet:
    """Connected components of a mesh, ordered largest-first."""

    components: list[TriangleMesh]
    source_volume_id: str = ""

    def __len__(self) -> int:
        return len(self.components)


# ---------------------------------------------------------------------------
# Marching cubes

# Per-edge lattice offset of the lower corner plus the edge axis, derived
# from the table conventions once at import.
def _edge_geometry():
    lower, axis = [], []
    for a, b in CORNER_PAIRS:
        oa = np.array(CORNER_OFFSETS[a])
        ob = np.array(CORNER_OFFSETS[b])
        diff = ob - oa
        (ax,) = np.nonzero(diff)[0].reshape(1)
        lo = oa if diff[ax] > 0 else ob
        lower.append(lo)
        axis.append(int(ax))
    return np.array(lower, dtype=np.int64), np.array(axis, dtype=np.int64)


_EDGE_LOWER, _EDGE_AXIS = _edge_geometry()


def marching_cubes(mask: BinaryMask) -> TriangleMesh:
    """Isosurface of the 0/1 voxel field at isovalue 0.5, in world mm.

    The mask is zero-padded by one voxel so every closed region yields a
    closed surface. Isosurface vertices sit at lattice edge midpoints and
    are welded by exact lattice identity.
    """
    field = np.pad(mask.data, 1).astype(np.uint8)
    px, py, pz = field.shape
    cx, cy, cz = px - 1, py - 1, pz - 1

    case = np.zeros((cx, cy, cz), dtype=np.uint16)
    for bit, (dx, dy, dz) in enumerate(CORNER_OFFSETS):
        below = field[dx:dx + cx, dy:dy + cy, dz:dz + cz] == 0
        case |= below.astype(np.uint16) << bit

    active = np.nonzero((case > 0) & (case < 255))
    if active[0].size == 0:
        return TriangleMesh(np.empty((0, 3)), np.empty((0, 3), dtype=np.int64))
    codes = case[active]
    bases = np.stack(active, axis=1).astype(np.int64)

    key_parts = []
    for code in np.unique(codes):
        table = TRI_TABLE[code]
        if not table:
            continue
        sel = bases[codes == code]
        edges = np.array(table, dtype=np.int64).reshape(-1, 3)
        # lattice key of each triangle corner: lower-corner position + axis
        lower = sel[:, None, None, :] + _EDGE_LOWER[edges][None, :, :, :]
        axis = np.broadcast_to(_EDGE_AXIS[edges][None, :, :], lower.shape[:3])
        flat_pos = (lower[..., 0] * py + lower[..., 1]) * pz + lower[..., 2]
        key_parts.append((flat_pos * 3 + axis).reshape(-1, 3))

    keys = np.concatenate(key_parts, axis=0)
    uniq, inverse = np.unique(keys.reshape(-1), return_inverse=True)
    triangles = inverse.reshape(-1, 3)

    axis = uniq % 3
    pos = uniq // 3
    lz = pos % pz
    ly = (pos // pz) % py
    lx = pos // (pz * py)
    verts = np.stack([lx, ly, lz], axis=1).astype(np.float64)
    verts[np.arange(len(verts)), axis] += 0.5
    verts = mask.origin[None, :] + (verts - 1.0) * mask.spacing[None, :]

    # With the bit-set-below-isovalue convention the table's winding is
    # already outward for a positive interior (verified by signed volume).
    return TriangleMesh(verts, triangles)


# ---------------------------------------------------------------------------
# Connected components


def connected_components(mesh: TriangleMesh, source_volume_id: str = "") -> ComponentSet:
    """Partition triangles by shared-vertex connectivity.

    Components are ordered by descending triangle count, ties broken by
    the smallest vertex index in the original mesh.
    """
    if mesh.is_empty():
        return ComponentSet(components=[], source_volume_id=source_volume_id)

    n = len(mesh.vertices)
    labels = np.arange(n, dtype=np.int64)
    tri = mesh.triangles
    pairs = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]], axis=0)
    while True:
        prev = labels.copy()
        np.minimum.at(labels, pairs[:, 0], labels[pairs[:, 1]])
        np.minimum.at(labels, pairs[:, 1], labels[pairs[:, 0]])
        labels = labels[labels]  # pointer jumping
        if np.array_equal(labels, prev):
            break

    tri_label = labels[tri[:, 0]]
    roots, tri_root_idx = np.unique(tri_label, return_inverse=True)
    counts = np.bincount(tri_root_idx)
    order = sorted(range(len(roots)), key=lambda i: (-counts[i], roots[i]))

    components = []
    for i in order:
        tris = tri[tri_root_idx == i]
        used, local = np.unique(tris.reshape(-1), return_inverse=True)
        components.append(
            TriangleMesh(mesh.vertices[used], local.reshape(-1, 3).astype(np.int64))
        )
    return ComponentSet(components=components, source_volume_id=source_volume_id)


# ---------------------------------------------------------------------------
# Exact surface geometry


def surface_area(mesh: TriangleMesh) -> float:
    """Total triangle area in mm^2."""
    if mesh.is_empty():
        return 0.0
    p = mesh.vertices[mesh.triangles]
    cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    return float(0.5 * np.linalg.norm(cross, axis=1).sum())


def is_watertight(mesh: TriangleMesh) -> bool:
    """Every undirected edge borders exactly two triangles, once per side."""
    if mesh.is_empty():
        return False
    tri = mesh.triangles
    directed = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]], axis=0)
    n = len(mesh.vertices)
    codes = directed[:, 0] * n + directed[:, 1]
    if len(np.unique(codes)) != len(codes):
        return False  # repeated directed edge: inconsistent orientation
    lo = directed.min(axis=1).astype(np.int64)
    hi = directed.max(axis=1).astype(np.int64)
    und = lo * n + hi
    _, counts = np.unique(und, return_counts=True)
    return bool(np.all(counts == 2))


def enclosed_volume(mesh: TriangleMesh) -> float:
    """Signed volume via the divergence theorem; requires a watertight mesh."""
    if not is_watertight(mesh):
        raise MeshError("enclosed_volume requires a watertight mesh")
    p = mesh.vertices[mesh.triangles]
    det = np.einsum("ij,ij->i", p[:, 0], np.cross(p[:, 1], p[:, 2]))
    return float(det.sum() / 6.0)


def sample_surface(mesh: TriangleMesh, n: int, rng: np.random.Generator) -> np.ndarray:
    """Area-weighted uniform random points on the surface, shape (n, 3)."""
    if mesh.is_empty():
        raise MeshError("cannot sample an empty mesh")
    p = mesh.vertices[mesh.triangles]
    cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    area = 0.5 * np.linalg.norm(cross, axis=1)
    probs = area / area.sum()
    idx = rng.choice(len(area), size=n, p=probs)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    base = p[idx]
    return (
        base[:, 0]
        + u[:, None] * (base[:, 1] - base[:, 0])
        + v[:, None] * (base[:, 2] - base[:, 0])
    )


def _canonicalize_degenerate_axes(vals: np.ndarray, vecs: np.ndarray, rel_tol: float = 0.05) -> np.ndarray:
    """Within near-equal eigenvalue groups, realign toward coordinate axes.

    Principal axes are arbitrary inside a degenerate eigenspace (sampling
    noise then picks a random basis); replacing each such group with the
    orthonormalized projections of the best-matching coordinate axes makes
    the result deterministic and exact for axis-aligned symmetric shapes.
    """
    scale = max(vals[-1], 1e-30)
    groups, start = [], 0
    for i in range(1, 3):
        if vals[i] - vals[i - 1] > rel_tol * scale:
            groups.append(range(start, i))
            start = i
    groups.append(range(start, 3))
    out = vecs.copy()
    for grp in groups:
        k = len(grp)
        if k == 1:
            continue
        sub = vecs[:, list(grp)]
        proj = sub @ sub.T  # projector onto the degenerate subspace
        scores = np.linalg.norm(proj, axis=0)
        chosen = np.sort(np.argsort(-scores)[:k])
        basis = []
        for axis_idx in chosen:
            v = proj[:, axis_idx].copy()
            for b in basis:
                v -= (b @ v) * b
            v /= np.linalg.norm(v)
            basis.append(v)
        out[:, list(grp)] = np.stack(basis, axis=1)
    return out


def obb_extents(mesh: TriangleMesh, n_samples: int = 10_000, seed: int = 0) -> tuple[float, float, float]:
    """Oriented-box extents (length >= width >= height) in mm.

    Axes come from the covariance of area-weighted surface samples
    (fixed seed, so the result is deterministic); extents are exact
    vertex-projection ranges along those axes.
    """
    if mesh.is_empty():
        raise MeshError("cannot measure an empty mesh")
    pts = sample_surface(mesh, n_samples, np.random.default_rng(seed))
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / len(pts)
    vals, axes = np.linalg.eigh(cov)
    axes = _canonicalize_degenerate_axes(vals, axes)
    used = mesh.vertices[np.unique(mesh.triangles)]
    proj = (used - used.mean(axis=0)) @ axes
    extents = proj.max(axis=0) - proj.min(axis=0)
    ext = np.sort(extents)[::-1]
    return float(ext[0]), float(ext[1]), float(ext[2])


def mirror_mesh_x(mesh: TriangleMesh, plane_x: float) -> TriangleMesh:
    """Reflect about the plane x = plane_x, restoring outward winding."""
    verts = mesh.vertices.copy()
    verts[:, 0] = 2.0 * plane_x - verts[:, 0]
    return TriangleMesh(verts, mesh.triangles[:, [0, 2, 1]])


def save_off(mesh: TriangleMesh, path) -> None:
    """Write ASCII OFF (header, counts, vertex lines, face lines)."""
    with open(path, "w") as f:
        f.write("OFF\n")
        f.write(f"{len(mesh.vertices)} {len(mesh.triangles)} 0\n")
        for v in mesh.vertices:
            f.write(f"{v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for t in mesh.triangles:
            f.write(f"3 {t[0]} {t[1]} {t[2]}\n")
