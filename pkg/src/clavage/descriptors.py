"""Per-component shape descriptors.

A component is summarized by four Osada-style shape distributions (A3,
D1, D2, D3; 64 bins each) concatenated with six geometric scalars into a
fixed 262-entry feature vector. Distributions are rotation- and
translation-invariant up to Monte-Carlo noise and deterministic for a
given seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import mesh as meshmod
from .mesh import TriangleMesh

KINDS = ("A3", "D1", "D2", "D3")
N_BINS = 64
N_GEOMETRIC = 6
FEATURE_LENGTH = len(KINDS) * N_BINS + N_GEOMETRIC  # 262
GEOMETRIC_NAMES = (
    "area",
    "volume",
    "normalized_shape_index",
    "area_to_volume",
    "length_to_width",
    "sphericity",
)


class DescriptorError(ValueError):
    pass


@dataclass(frozen=True)
class ShapeDistribution:
    """Normalized histogram of a random geometric measurement.

    Measured quantity by kind: A3 angle (radians) at the middle of three
    surface points; D1 distance from the area centroid to a point; D2
    distance between two points; D3 square root of the area of the
    triangle spanned by three points (mm, Osada's convention).
    """

    kind: str
    bins: np.ndarray  # (64,) non-negative, sums to 1
    value_range: tuple[float, float]
    n_samples: int
    seed: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DescriptorError(f"unknown distribution kind {self.kind!r}")
        b = np.asarray(self.bins, dtype=np.float64)
        if b.shape != (N_BINS,) or abs(b.sum() - 1.0) > 1e-9 or (b < 0).any():
            raise DescriptorError("bins must be 64 non-negative reals summing to 1")
        object.__setattr__(self, "bins", b)
        b.setflags(write=False)

    @property
    def bin_width(self) -> float:
        lo, hi = self.value_range
        return (hi - lo) / N_BINS


@dataclass(frozen=True)
class GeometricFeatures:
    area: float
    volume: float
    normalized_shape_index: float
    area_to_volume: float
    length_to_width: float
    sphericity: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in GEOMETRIC_NAMES])


def surface_centroid(mesh: TriangleMesh) -> np.ndarray:
    """Area-weighted centroid of the surface."""
    p = mesh.vertices[mesh.triangles]
    cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    area = 0.5 * np.linalg.norm(cross, axis=1)
    centroids = p.mean(axis=1)
    return (centroids * area[:, None]).sum(axis=0) / area.sum()


def _measure(mesh: TriangleMesh, kind: str, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "D1":
        pts = meshmod.sample_surface(mesh, n_samples, rng)
        return np.linalg.norm(pts - surface_centroid(mesh), axis=1)
    if kind == "D2":
        pts = meshmod.sample_surface(mesh, 2 * n_samples, rng)
        return np.linalg.norm(pts[:n_samples] - pts[n_samples:], axis=1)
    if kind == "D3":
        pts = meshmod.sample_surface(mesh, 3 * n_samples, rng)
        a, b, c = pts[:n_samples], pts[n_samples:2 * n_samples], pts[2 * n_samples:]
        area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
        return np.sqrt(area)
    pts = meshmod.sample_surface(mesh, 3 * n_samples, rng)
    a, b, c = pts[:n_samples], pts[n_samples:2 * n_samples], pts[2 * n_samples:]
    return angle_at_middle(a, b, c)


def angle_at_middle(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Angle at b of each (a, b, c) triple, in [0, pi].

    Collinear triples give exactly 0 or pi; coincident points give 0;
    never NaN.
    """
    a, b, c = np.atleast_2d(a), np.atleast_2d(b), np.atleast_2d(c)
    u = a - b
    v = c - b
    denom = np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1)
    cos = np.ones(len(denom))
    ok = denom > 0
    cos[ok] = np.einsum("ij,ij->i", u[ok], v[ok]) / denom[ok]
    return np.arccos(np.clip(cos, -1.0, 1.0))


def sample_shape_distribution(
    mesh: TriangleMesh,
    kind: str,
    n_samples: int = 100_000,
    seed: int = 0,
    value_range: tuple[float, float] | None = None,
) -> ShapeDistribution:
    """Histogram one shape measurement over random surface points.

    When no range is given, A3 uses [0, pi] and the distance kinds use
    [0, observed max]. With an explicit range, values are clipped into
    the final bin so the bins always sum to 1.
    """
    if kind not in KINDS:
        raise DescriptorError(f"unknown distribution kind {kind!r}")
    if mesh.is_empty():
        raise DescriptorError("cannot sample a shape distribution of an empty mesh")
    rng = np.random.default_rng([_kind_tag(kind), seed])
    values = _measure(mesh, kind, n_samples, rng)
    if value_range is None:
        hi = np.pi if kind == "A3" else float(values.max())
        value_range = (0.0, hi if hi > 0 else 1.0)
    lo, hi = value_range
    counts, _ = np.histogram(np.clip(values, lo, hi), bins=N_BINS, range=(lo, hi))
    return ShapeDistribution(
        kind=kind,
        bins=counts / float(n_samples),
        value_range=(float(lo), float(hi)),
        n_samples=n_samples,
        seed=seed,
    )


def _kind_tag(kind: str) -> int:
    return KINDS.index(kind)


def geometric_features(mesh: TriangleMesh) -> GeometricFeatures:
    """Six exact scalars of a watertight mesh.

    sphericity = pi^(1/3) (6V)^(2/3) / A in (0, 1]; the normalized shape
    index is its reciprocal compactness A^(3/2) / (6 sqrt(pi) V), equal
    to 1 for a sphere and growing with elongation.
    """
    area = meshmod.surface_area(mesh)
    volume = meshmod.enclosed_volume(mesh)  # raises on non-watertight input
    if volume <= 0:
        raise DescriptorError(f"expected positive enclosed volume, got {volume}")
    length, width, _ = meshmod.obb_extents(mesh)
    sphericity = np.pi ** (1.0 / 3.0) * (6.0 * volume) ** (2.0 / 3.0) / area
    return GeometricFeatures(
        area=area,
        volume=volume,
        normalized_shape_index=area ** 1.5 / (6.0 * np.sqrt(np.pi) * volume),
        area_to_volume=area / volume,
        length_to_width=length / width,
        sphericity=float(sphericity),
    )


def feature_vector(
    mesh: TriangleMesh,
    seed: int = 0,
    n_samples: int = 100_000,
    ranges: dict[str, tuple[float, float]] | None = None,
) -> np.ndarray:
    """Ordered 262-entry descriptor: A3 | D1 | D2 | D3 bins, then scalars.

    ``ranges`` pins the histogram range per kind (training-set policy);
    otherwise each distribution is self-ranged.
    """
    parts = []
    for kind in KINDS:
        value_range = None if ranges is None else ranges.get(kind)
        dist = sample_shape_distribution(
            mesh, kind, n_samples=n_samples, seed=seed, value_range=value_range
        )
        parts.append(dist.bins)
    parts.append(geometric_features(mesh).as_array())
    out = np.concatenate(parts)
    assert out.shape == (FEATURE_LENGTH,)
    return out


def wasserstein_distance(a: ShapeDistribution, b: ShapeDistribution) -> float:
    """1-D W1 distance: L1 between cumulative sums, scaled by bin width."""
    if a.kind != b.kind:
        raise DescriptorError(f"kind mismatch: {a.kind} vs {b.kind}")
    if not np.allclose(a.value_range, b.value_range, rtol=0, atol=1e-9):
        raise DescriptorError(f"range mismatch: {a.value_range} vs {b.value_range}")
    return float(np.abs(np.cumsum(a.bins - b.bins)).sum() * a.bin_width)


def wasserstein_from_bins(bins_a: np.ndarray, bins_b: np.ndarray, bin_width: float) -> float:
    """W1 on raw bin arrays known to share a range (detector fast path)."""
    return float(np.abs(np.cumsum(np.asarray(bins_a) - np.asarray(bins_b))).sum() * bin_width)


# ---------------------------------------------------------------------------
# CSV interchange (detector training file format)


def write_feature_csv(path, component_ids, features: np.ndarray, labels=None) -> None:
    """Rows of 262 feature columns + component_id (+ optional 0/1 label)."""
    features = np.asarray(features, dtype=np.float64)
    header = [f"f{i}" for i in range(FEATURE_LENGTH)] + ["component_id"]
    if labels is not None:
        header.append("label")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row_i, cid in enumerate(component_ids):
            row = [repr(float(v)) for v in features[row_i]] + [str(cid)]
            if labels is not None:
                row.append(str(int(labels[row_i])))
            writer.writerow(row)


def read_feature_csv(path):
    """Inverse of write_feature_csv -> (ids, features, labels-or-None)."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        has_label = header[-1] == "label"
        ids, rows, labels = [], [], []
        for rec in reader:
            rows.append([float(v) for v in rec[:FEATURE_LENGTH]])
            if has_label:
                ids.append(rec[-2])
                labels.append(int(rec[-1]))
            else:
                ids.append(rec[-1])
    feats = np.array(rows, dtype=np.float64)
    return ids, feats, (np.array(labels) if has_label else None)
