"""Two-stage training: Adam, the 1cycle schedule, and gradient checking.

Stage 1 trains only the fusion head for exactly one epoch at the base
learning rate; stage 2 fine-tunes the last conv block of each branch,
the branch terminal dense layers, and the fusion head at 1/100 of the
base rate, with early stopping on validation MAE and best-weights
restore. Both stages run their own 1cycle schedule. Training is bitwise
reproducible for a fixed seed and config.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .layers import MultiBranchRegressor


class TrainingDivergedError(RuntimeError):
    """Raised when a non-finite loss or gradient appears; names the parameter."""


@dataclass(frozen=True)
class TrainConfig:
    eta1: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 4
    max_epochs: int = 30
    early_stop_patience: int = 10
    seed: int = 0

    @property
    def eta2(self) -> float:
        return self.eta1 / 100.0


def one_cycle_lr(step: int, total_steps: int, eta_base: float, ramp_frac: float = 0.3) -> float:
    """Cosine 1cycle: eta/25 up to eta over the first 30% of steps, then
    down to eta/1000. The three anchor values are exact."""
    if total_steps < 2:
        raise ValueError("total_steps must be at least 2")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    peak = min(max(1, round(ramp_frac * total_steps)), total_steps - 1)
    if step <= peak:
        w = (1.0 - math.cos(math.pi * step / peak)) / 2.0
        lo, hi = eta_base / 25.0, eta_base
    else:
        w = (1.0 - math.cos(math.pi * (step - peak) / (total_steps - peak))) / 2.0
        lo, hi = eta_base, eta_base / 1000.0
    return lo * (1.0 - w) + hi * w


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, ad.Tensor], state: AdamState, lr: float, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update in place; missing grads act as zeros."""
    state.t += 1
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient at parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = state.m[name] / (1 - b1**state.t)
        v_hat = state.v[name] / (1 - b2**state.t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# Two-stage training


def evaluate_mae(model: MultiBranchRegressor, x: np.ndarray, y: np.ndarray) -> float:
    pred = model.predict(x)
    return float(np.mean(np.abs(pred - np.asarray(y, dtype=np.float64))))


def _run_epoch(model, params, opt_state, x, y, cfg, base_lr, schedule_offset, total_steps,
               shuffle_rng, dropout_rng):
    n = len(x)
    order = shuffle_rng.permutation(n)
    losses = []
    all_params = model.named_parameters()
    step = schedule_offset
    for start in range(0, n, cfg.batch_size):
        batch = order[start:start + cfg.batch_size]
        lr = one_cycle_lr(step, total_steps, base_lr)
        for p in all_params.values():
            p.zero_grad()
        out = model.forward(x[batch], training=True, rng=dropout_rng)
        loss = ad.mse_loss(out, y[batch][:, None])
        if not np.isfinite(loss.data):
            raise TrainingDivergedError("non-finite training loss")
        ad.backward(loss)
        adam_step(params, opt_state, lr, cfg)
        losses.append(float(loss.data))
        step += 1
    return step, float(np.mean(losses))


def train_two_stage(
    model: MultiBranchRegressor,
    train_set: tuple[np.ndarray, np.ndarray],
    val_set: tuple[np.ndarray, np.ndarray],
    cfg: TrainConfig,
) -> dict:
    """Train in place; returns the history dict. Best-on-validation weights
    (by MAE, earliest epoch wins ties) are restored before returning."""
    x_train, y_train = np.asarray(train_set[0]), np.asarray(train_set[1], dtype=np.float64)
    x_val, y_val = np.asarray(val_set[0]), np.asarray(val_set[1], dtype=np.float64)
    if len(x_train) == 0 or len(x_val) == 0:
        raise ValueError("training and validation sets must be non-empty")

    # Targets are standardized for optimization (Adam steps are bounded by
    # the learning rate, so raw year-scale targets would need thousands of
    # steps just to reach the mean). The affine scale is folded back into
    # the final linear layer before returning, so the model outputs years.
    mu = float(y_train.mean())
    sd = float(y_train.std())
    if sd == 0.0:
        sd = 1.0
    y_train = (y_train - mu) / sd
    y_val_years = y_val

    ss = np.random.SeedSequence(cfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(ss[0])
    dropout_rng = np.random.default_rng(ss[1])

    steps_per_epoch = math.ceil(len(x_train) / cfg.batch_size)
    history = {"train_loss": [], "val_mae": [], "n_train_samples": int(len(x_train))}

    def val_mae_years() -> float:
        pred = model.predict(x_val) * sd + mu
        return float(np.mean(np.abs(pred - y_val_years)))

    # Stage 1: fusion only, exactly one epoch at eta1 under its own cycle.
    fusion_params = model.parameter_group("fusion")
    _run_epoch(
        model, fusion_params, AdamState(), x_train, y_train, cfg,
        base_lr=cfg.eta1, schedule_offset=0, total_steps=max(2, steps_per_epoch),
        shuffle_rng=shuffle_rng, dropout_rng=dropout_rng,
    )
    history["stage1_val_mae"] = val_mae_years()

    # Stage 2: last conv group + branch dense + fusion at eta2, fresh cycle.
    stage2_params = dict(model.parameter_group("fusion"))
    stage2_params.update(model.parameter_group("branch_fc"))
    stage2_params.update(model.parameter_group("branch_last_conv"))
    opt_state = AdamState()
    total_steps = max(2, steps_per_epoch * cfg.max_epochs)

    best_mae = math.inf
    best_state = model.state_arrays()
    best_epoch = -1
    bad_epochs = 0
    step = 0
    for epoch in range(cfg.max_epochs):
        step, mean_loss = _run_epoch(
            model, stage2_params, opt_state, x_train, y_train, cfg,
            base_lr=cfg.eta2, schedule_offset=step, total_steps=total_steps,
            shuffle_rng=shuffle_rng, dropout_rng=dropout_rng,
        )
        val_mae = val_mae_years()
        history["train_loss"].append(mean_loss)
        history["val_mae"].append(val_mae)
        if val_mae < best_mae:
            best_mae = val_mae
            best_state = model.state_arrays()
            best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.early_stop_patience:
                break

    model.load_state_arrays(best_state)
    # fold the target standardization into the output layer: years out
    model.fusion.out.w.data = model.fusion.out.w.data * sd
    model.fusion.out.b.data = model.fusion.out.b.data * sd + mu
    history["best_epoch"] = best_epoch
    history["best_val_mae"] = best_mae if best_mae < math.inf else None
    return history


# ---------------------------------------------------------------------------
# Gradient verification


def gradient_check(
    model: MultiBranchRegressor,
    slices: np.ndarray,
    epsilon: float = 1e-4,
    entries_per_param: int = 2,
    seed: int = 0,
) -> float:
    """Max relative error between reverse-mode and central-difference
    gradients of the summed eval-mode output, over sampled parameter
    entries (relative to max(|fd|, |ad|) with a 1e-6 floor)."""
    x = np.asarray(slices, dtype=np.float64)
    params = model.named_parameters()
    for p in params.values():
        p.zero_grad()
    out = model.forward(x, training=False)
    ad.backward(out)
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n_entries = min(entries_per_param, flat.size)
        for idx in rng.choice(flat.size, size=n_entries, replace=False):
            original = flat[idx]
            flat[idx] = original + epsilon
            f_plus = float(model.forward(x, training=False).data.sum())
            flat[idx] = original - epsilon
            f_minus = float(model.forward(x, training=False).data.sum())
            flat[idx] = original
            fd = (f_plus - f_minus) / (2.0 * epsilon)
            an = float(analytic[name].reshape(-1)[idx])
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
            worst = max(worst, rel)
    return worst
