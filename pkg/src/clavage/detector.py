"""Clavicle detection on connected components.

A 50-tree Random Forest (entropy splits, sqrt-of-features per split,
bootstrap resamples, unbounded depth) classifies 262-entry component
descriptors as clavicle / non-clavicle. The three highest-probability
components then pass through the probability and anatomical-constraint
pairing procedure, which returns at most one left-right pair. A
distance-to-average baseline is included for ablation comparisons.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import descriptors
from .descriptors import FEATURE_LENGTH, KINDS, N_BINS
from .mesh import TriangleMesh


class DetectorError(ValueError):
    pass


@dataclass(frozen=True)
class AnatomicalConfig:
    """Pairing thresholds: medial-height tolerance and probability cut."""

    epsilon_mm: float = 10.0
    prob_threshold: float = 0.5

    def __post_init__(self):
        if self.epsilon_mm <= 0:
            raise ValueError("epsilon_mm must be positive")
        if not 0.0 < self.prob_threshold < 1.0:
            raise ValueError("prob_threshold must lie in (0, 1)")


@dataclass(frozen=True)
class DetectionCandidate:
    component_id: int
    probability: float
    laterality: str  # left | right | unknown


@dataclass(frozen=True)
class DetectionResult:
    """Outcome of the pairing procedure.

    ``chosen`` lists every selected component id in probability order;
    ``right``/``left`` are filled when the selection's lateralities
    resolve to one bone per side. ``rule`` records which branch fired:
    fast-path, compat-12, compat-13, single, or none.
    """

    right: int | None
    left: int | None
    chosen: tuple[int, ...]
    rule: str


# ---------------------------------------------------------------------------
# Random forest


def _entropy_terms(ones: np.ndarray, total: np.ndarray) -> np.ndarray:
    """total * H(ones/total), with 0 log 0 = 0; inputs broadcast together."""
    zeros = total - ones
    out = np.zeros(np.broadcast(ones, total).shape, dtype=np.float64)
    for part in (ones, zeros):
        frac = np.divide(part, total, out=np.zeros_like(out), where=total > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            term = np.where(part > 0, part * np.log2(frac, where=frac > 0), 0.0)
        out -= term
    return out


def _build_tree(X: np.ndarray, y: np.ndarray, rng: np.random.Generator, n_split_features: int):
    n, d = X.shape
    ones = int(y.sum())
    if ones == 0 or ones == n:
        return {"counts": [n - ones, ones]}
    feats = np.sort(rng.choice(d, size=n_split_features, replace=False))
    vals = X[:, feats]
    order = np.argsort(vals, axis=0, kind="stable")
    sorted_vals = np.take_along_axis(vals, order, axis=0)
    sorted_y = y[order]
    prefix_ones = np.cumsum(sorted_y, axis=0)

    n_left = np.arange(1, n, dtype=np.float64)[:, None]
    ones_left = prefix_ones[:-1].astype(np.float64)
    parent = _entropy_terms(np.array(float(ones)), np.array(float(n)))
    child = _entropy_terms(ones_left, n_left) + _entropy_terms(ones - ones_left, n - n_left)
    gain = (parent - child) / n
    gain[sorted_vals[1:] <= sorted_vals[:-1]] = -np.inf

    best = int(np.argmax(gain))
    pos, col = divmod(best, len(feats))
    if not np.isfinite(gain[pos, col]) or gain[pos, col] <= 0.0:
        return {"counts": [n - ones, ones]}
    feat = int(feats[col])
    threshold = float((sorted_vals[pos, col] + sorted_vals[pos + 1, col]) / 2.0)
    go_left = X[:, feat] <= threshold
    return {
        "feature": feat,
        "threshold": threshold,
        "left": _build_tree(X[go_left], y[go_left], rng, n_split_features),
        "right": _build_tree(X[~go_left], y[~go_left], rng, n_split_features),
    }


def _leaf_probability(node, x: np.ndarray) -> float:
    while "counts" not in node:
        node = node["left"] if x[node["feature"]] <= node["threshold"] else node["right"]
    n0, n1 = node["counts"]
    return n1 / (n0 + n1)


@dataclass
class ForestModel:
    trees: list
    n_features: int
    features_per_split: int
    per_tree_seeds: list[int]
    class_counts: tuple[int, int]
    oob_accuracy: float | None
    feature_ranges: dict[str, tuple[float, float]] | None = None

    @property
    def n_trees(self) -> int:
        return len(self.trees)


def train_forest(
    features: np.ndarray,
    labels: np.ndarray,
    seed: int,
    n_trees: int = 50,
    feature_ranges: dict | None = None,
) -> ForestModel:
    """Fit the forest; deterministic given seed, with out-of-bag accuracy."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise DetectorError("features must be (n, d) with one label per row")
    if len(X) < 2:
        raise DetectorError("need at least 2 training rows")
    classes = np.unique(y)
    if not np.array_equal(classes, [0, 1]):
        raise DetectorError(f"need both classes present, got labels {classes}")

    n, d = X.shape
    n_split = max(1, int(np.floor(np.sqrt(d))))
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n_trees)]

    trees = []
    oob_prob_sum = np.zeros(n)
    oob_votes = np.zeros(n, dtype=np.int64)
    for tree_seed in seeds:
        rng = np.random.default_rng(tree_seed)
        bag = rng.choice(n, size=n, replace=True)
        tree = _build_tree(X[bag], y[bag], rng, n_split)
        trees.append(tree)
        oob = np.setdiff1d(np.arange(n), bag, assume_unique=False)
        for i in oob:
            oob_prob_sum[i] += _leaf_probability(tree, X[i])
            oob_votes[i] += 1

    seen = oob_votes > 0
    oob_accuracy = None
    if seen.any():
        oob_pred = (oob_prob_sum[seen] / oob_votes[seen]) >= 0.5
        oob_accuracy = float(np.mean(oob_pred == (y[seen] == 1)))

    return ForestModel(
        trees=trees,
        n_features=d,
        features_per_split=n_split,
        per_tree_seeds=seeds,
        class_counts=(int((y == 0).sum()), int((y == 1).sum())),
        oob_accuracy=oob_accuracy,
        feature_ranges=feature_ranges,
    )


def predict_probability(model: ForestModel, fv: np.ndarray) -> float:
    """Clavicle probability: mean over trees of the leaf class frequency."""
    fv = np.asarray(fv, dtype=np.float64)
    if fv.shape != (model.n_features,):
        raise DetectorError(f"feature vector length {fv.shape} != {model.n_features}")
    return float(np.mean([_leaf_probability(t, fv) for t in model.trees]))


def predict_probabilities(model: ForestModel, features: np.ndarray) -> np.ndarray:
    return np.array([predict_probability(model, row) for row in np.atleast_2d(features)])


def save_forest(model: ForestModel, path) -> None:
    blob = {
        "format": "clavage-forest-v1",
        "n_features": model.n_features,
        "features_per_split": model.features_per_split,
        "per_tree_seeds": model.per_tree_seeds,
        "class_counts": list(model.class_counts),
        "oob_accuracy": model.oob_accuracy,
        "feature_ranges": model.feature_ranges,
        "trees": model.trees,
    }
    with open(path, "w") as f:
        json.dump(blob, f, sort_keys=True, separators=(",", ":"))


def load_forest(path) -> ForestModel:
    with open(path) as f:
        blob = json.load(f)
    if blob.get("format") != "clavage-forest-v1":
        raise DetectorError(f"{path}: not a forest model file")
    ranges = blob["feature_ranges"]
    if ranges is not None:
        ranges = {k: tuple(v) for k, v in ranges.items()}
    return ForestModel(
        trees=blob["trees"],
        n_features=blob["n_features"],
        features_per_split=blob["features_per_split"],
        per_tree_seeds=blob["per_tree_seeds"],
        class_counts=tuple(blob["class_counts"]),
        oob_accuracy=blob["oob_accuracy"],
        feature_ranges=ranges,
    )


def fit_feature_ranges(meshes, seed: int = 0, n_samples: int = 10_000) -> dict[str, tuple[float, float]]:
    """Histogram ranges per kind: training-set maxima plus 10% headroom."""
    ranges: dict[str, tuple[float, float]] = {"A3": (0.0, float(np.pi))}
    for kind in KINDS:
        if kind == "A3":
            continue
        hi = 0.0
        for m in meshes:
            dist = descriptors.sample_shape_distribution(m, kind, n_samples=n_samples, seed=seed)
            hi = max(hi, dist.value_range[1])
        ranges[kind] = (0.0, 1.1 * hi if hi > 0 else 1.0)
    return ranges


# ---------------------------------------------------------------------------
# Laterality and anatomical constraints


def _extreme_vertices_x(mesh: TriangleMesh) -> tuple[np.ndarray, np.ndarray]:
    used = mesh.vertices[np.unique(mesh.triangles)]
    return used[np.argmin(used[:, 0])], used[np.argmax(used[:, 0])]


LATERALITY_TIE_MM = 0.5


def laterality_of(mesh: TriangleMesh) -> str:
    """Compare the heights of the two X-extreme points.

    With the medial end sitting higher than the acromial end in this
    frame, a right clavicle has its low-X (acromial) point below its
    high-X (medial) point. Height differences inside the 0.5 mm tie band
    are reported as unknown.
    """
    if mesh.is_empty():
        raise DetectorError("cannot determine laterality of an empty mesh")
    at_xmin, at_xmax = _extreme_vertices_x(mesh)
    z_l, z_r = at_xmin[2], at_xmax[2]
    if abs(z_l - z_r) < LATERALITY_TIE_MM:
        return "unknown"
    return "right" if z_l < z_r else "left"


def medial_point(mesh: TriangleMesh, laterality: str) -> np.ndarray:
    """Sternal-end vertex: the X_max point of a right clavicle, X_min of a left."""
    at_xmin, at_xmax = _extreme_vertices_x(mesh)
    if laterality == "right":
        return at_xmax
    if laterality == "left":
        return at_xmin
    raise DetectorError(f"no medial point for laterality {laterality!r}")


def check_anatomical_compatibility(a: TriangleMesh, b: TriangleMesh, cfg: AnatomicalConfig) -> bool:
    """True iff the two meshes can be a left-right clavicle pair.

    (i) one left and one right; (ii) the medial ends face each other with
    a positive gap along X (right bone entirely at lower X); (iii) the
    medial-end heights differ by at most epsilon.
    """
    lat_a, lat_b = laterality_of(a), laterality_of(b)
    if {lat_a, lat_b} != {"left", "right"}:
        return False
    c_r, c_l = (a, b) if lat_a == "right" else (b, a)
    medial_r = medial_point(c_r, "right")
    medial_l = medial_point(c_l, "left")
    if not medial_r[0] < medial_l[0]:
        return False
    return abs(medial_r[2] - medial_l[2]) <= cfg.epsilon_mm


def _assign_sides(selected: list[DetectionCandidate]) -> tuple[int | None, int | None]:
    lats = [c.laterality for c in selected]
    if len(selected) == 2 and sorted(lats) == ["left", "right"]:
        right = next(c.component_id for c in selected if c.laterality == "right")
        left = next(c.component_id for c in selected if c.laterality == "left")
        return right, left
    if len(selected) == 1 and lats[0] in ("left", "right"):
        cid = selected[0].component_id
        return (cid, None) if lats[0] == "right" else (None, cid)
    return None, None


def pair_candidates(
    candidates: list[DetectionCandidate],
    meshes: dict[int, TriangleMesh],
    cfg: AnatomicalConfig = AnatomicalConfig(),
    compat=check_anatomical_compatibility,
) -> DetectionResult:
    """Select at most one clavicle pair from the top-3 candidates.

    Candidates arrive sorted by descending probability; missing entries
    behave as probability 0. Branches, in order: the fast path takes the
    top two when P2 >= threshold and P3 < threshold; otherwise the first
    anatomically compatible pair among (X1, X2) then (X1, X3) wins; else
    X1 alone when P1 > threshold; else nothing.
    """
    cands = list(candidates)
    probs = [c.probability for c in cands] + [0.0] * (3 - len(cands))
    t = cfg.prob_threshold

    def result(selected, rule):
        right, left = _assign_sides(selected)
        return DetectionResult(
            right=right, left=left, chosen=tuple(c.component_id for c in selected), rule=rule
        )

    if probs[1] >= t and probs[2] < t:
        return result([cands[0], cands[1]], "fast-path")

    def compatible(i, j):
        if i >= len(cands) or j >= len(cands):
            return False
        a, b = meshes[cands[i].component_id], meshes[cands[j].component_id]
        return compat(a, b, cfg)

    if compatible(0, 1):
        return result([cands[0], cands[1]], "compat-12")
    if compatible(0, 2):
        return result([cands[0], cands[2]], "compat-13")
    if probs[0] > t:
        return result([cands[0]], "single")
    return result([], "none")


def detect_components(
    meshes: list[TriangleMesh],
    model: ForestModel,
    cfg: AnatomicalConfig = AnatomicalConfig(),
    seed: int = 0,
    features: np.ndarray | None = None,
) -> tuple[DetectionResult, list[DetectionCandidate]]:
    """Full per-scene detection: features -> probabilities -> pairing."""
    if features is None:
        features = np.stack(
            [descriptors.feature_vector(m, seed=seed, ranges=model.feature_ranges) for m in meshes]
        )
    probs = predict_probabilities(model, features)
    order = np.argsort(-probs, kind="stable")[:3]
    candidates = [
        DetectionCandidate(
            component_id=int(i), probability=float(probs[i]), laterality=laterality_of(meshes[i])
        )
        for i in order
    ]
    result = pair_candidates(candidates, {i: meshes[i] for i in range(len(meshes))}, cfg)
    return result, candidates


# ---------------------------------------------------------------------------
# Distance-to-average baseline


@dataclass
class AverageClavicleModel:
    """Mean clavicle descriptor plus the scalar standardization parameters."""

    vector: np.ndarray  # (262,)
    scalar_mean: np.ndarray  # (6,)
    scalar_sd: np.ndarray  # (6,)
    ranges: dict[str, tuple[float, float]]


def build_average_clavicle(
    clavicle_features: np.ndarray,
    population_features: np.ndarray,
    ranges: dict[str, tuple[float, float]],
) -> AverageClavicleModel:
    clav = np.atleast_2d(np.asarray(clavicle_features, dtype=np.float64))
    pop = np.atleast_2d(np.asarray(population_features, dtype=np.float64))
    if clav.shape[0] < 1:
        raise DetectorError("need at least one labeled clavicle")
    scalars = pop[:, -descriptors.N_GEOMETRIC:]
    sd = scalars.std(axis=0)
    sd[sd == 0] = 1.0
    return AverageClavicleModel(
        vector=clav.mean(axis=0),
        scalar_mean=scalars.mean(axis=0),
        scalar_sd=sd,
        ranges=dict(ranges),
    )


def baseline_distance(features: np.ndarray, avg: AverageClavicleModel) -> np.ndarray:
    """Per-component distance: summed per-kind W1 plus standardized Euclidean."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    dist = np.zeros(len(X))
    for k, kind in enumerate(KINDS):
        lo, hi = avg.ranges[kind]
        width = (hi - lo) / N_BINS
        sl = slice(k * N_BINS, (k + 1) * N_BINS)
        ref = avg.vector[sl]
        for i, row in enumerate(X):
            dist[i] += descriptors.wasserstein_from_bins(row[sl], ref, width)
    z = (X[:, -descriptors.N_GEOMETRIC:] - avg.scalar_mean) / avg.scalar_sd
    z_ref = (avg.vector[-descriptors.N_GEOMETRIC:] - avg.scalar_mean) / avg.scalar_sd
    dist += np.linalg.norm(z - z_ref, axis=1)
    return dist


def baseline_distance_detect(features: np.ndarray, avg: AverageClavicleModel) -> tuple[int, int]:
    """Indices of the two components closest to the average clavicle."""
    X = np.atleast_2d(features)
    if len(X) < 2:
        raise DetectorError("baseline needs at least two components")
    order = np.argsort(baseline_distance(X, avg), kind="stable")
    return int(order[0]), int(order[1])
