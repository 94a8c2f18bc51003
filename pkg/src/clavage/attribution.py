"""Integrated-gradients attribution and most-informative-slice selection.

IG is computed against the fusion network's input (the concatenated
branch features) with an all-zeros baseline, using a midpoint Riemann
rule. Branch scores sum each branch's feature attributions; the slice
center is their attribution-weighted average position, with negative
scores clamped to zero so the center stays a position.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .nnet import autodiff as ad
from .nnet.autodiff import Tensor
from .nnet.layers import MultiBranchRegressor


class AttributionError(ValueError):
    pass


@dataclass(frozen=True)
class AttributionResult:
    per_feature: np.ndarray  # (B*F,) fusion-input attributions
    branch_scores: np.ndarray  # (B,)
    positions: np.ndarray  # (B,) slice index of each branch
    center: float


def integrated_gradients(
    f,
    x: np.ndarray,
    baseline: np.ndarray,
    steps: int = 256,
) -> np.ndarray:
    """Per-feature IG of a scalar-valued differentiable function.

    ``f`` maps a Tensor of shape (n, d) to a Tensor of shape (n, 1).
    Returns (x - baseline) times the path-averaged input gradient,
    sampled at midpoints (k + 1/2)/steps along the straight path.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    baseline = np.asarray(baseline, dtype=np.float64).reshape(-1)
    if x.shape != baseline.shape:
        raise AttributionError(f"shape mismatch: {x.shape} vs {baseline.shape}")
    if steps < 1:
        raise AttributionError("steps must be >= 1")
    alphas = (np.arange(steps) + 0.5) / steps
    points = baseline[None, :] + alphas[:, None] * (x - baseline)[None, :]
    xt = Tensor(points, requires_grad=True)
    out = f(xt)
    if out.shape != (steps, 1):
        raise AttributionError(f"f must return (n, 1), got {out.shape}")
    ad.backward(out)
    mean_grad = xt.grad.mean(axis=0)
    return (x - baseline) * mean_grad


def branch_aggregate(per_feature: np.ndarray, n_branches: int, n_features: int) -> np.ndarray:
    """Branch score S_n: sum of the branch's feature attributions."""
    per_feature = np.asarray(per_feature, dtype=np.float64).reshape(-1)
    if per_feature.size != n_branches * n_features:
        raise AttributionError(
            f"expected {n_branches * n_features} attributions, got {per_feature.size}"
        )
    return per_feature.reshape(n_branches, n_features).sum(axis=1)


def most_informative_slice(scores: np.ndarray, positions: np.ndarray) -> float:
    """Attribution-weighted average slice position.

    Negative scores are clamped to zero first; if everything clamps to
    zero the median position is returned.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    p = np.asarray(positions, dtype=np.float64).reshape(-1)
    if s.size == 0 or s.size != p.size:
        raise AttributionError("scores and positions must be equal-length and non-empty")
    s = np.maximum(s, 0.0)
    total = s.sum()
    if total == 0.0:
        return float(np.median(p))
    return float((s * p).sum() / total)


def attribute_subject(
    model: MultiBranchRegressor,
    slices: np.ndarray,
    positions,
    steps: int = 256,
) -> AttributionResult:
    """IG pipeline for one subject: fusion-input attributions -> S -> c."""
    x = np.asarray(slices, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != model.config.n_branches:
        raise AttributionError(
            f"expected ({model.config.n_branches}, H, W) slices, got {x.shape}"
        )
    feats = model.branch_features(x[None]).data[0]
    per_feature = integrated_gradients(
        lambda t: model.fusion(t, training=False),
        feats,
        np.zeros_like(feats),
        steps=steps,
    )
    scores = branch_aggregate(per_feature, model.config.n_branches, model.config.n_features)
    positions = np.asarray(positions, dtype=np.float64)
    center = most_informative_slice(scores, positions)
    return AttributionResult(
        per_feature=per_feature, branch_scores=scores, positions=positions, center=center
    )


def pixel_attributions(
    model: MultiBranchRegressor,
    slices: np.ndarray,
    steps: int = 64,
) -> np.ndarray:
    """Per-pixel IG maps of the end-to-end model for one subject.

    All branch inputs are interpolated jointly toward an all-zeros
    baseline; returns attributions with the same (B, H, W) shape.
    """
    x = np.asarray(slices, dtype=np.float64)
    b, h, w = x.shape
    alphas = ((np.arange(steps) + 0.5) / steps)[:, None, None, None]
    inputs = []
    feats = []
    for i, branch in enumerate(model.branches):
        xb = Tensor(alphas * x[i][None, None, :, :], requires_grad=True)
        inputs.append(xb)
        feats.append(branch(xb))
    out = model.fusion(ad.concat(feats, axis=1), training=False)
    ad.backward(out)
    maps = np.stack([t.grad.mean(axis=0)[0] for t in inputs])
    return x * maps


def export_heatmap_pgm(attribution_map: np.ndarray, path) -> None:
    """ASCII PGM (P2, 255 levels), min-max normalized per slice."""
    m = np.asarray(attribution_map, dtype=np.float64)
    lo, hi = m.min(), m.max()
    levels = np.zeros_like(m) if hi == lo else (m - lo) / (hi - lo) * 255.0
    levels = np.rint(levels).astype(int)
    with open(path, "w") as f:
        f.write("P2\n")
        f.write(f"{m.shape[1]} {m.shape[0]}\n255\n")
        for row in levels:
            f.write(" ".join(str(v) for v in row) + "\n")


def export_heatmap_csv(attribution_map: np.ndarray, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        for row in np.asarray(attribution_map, dtype=np.float64):
            writer.writerow([repr(float(v)) for v in row])
