"""Multi-branch age-regression architecture.

Each input slice feeds its own convolutional branch (stride-2 3x3 conv
blocks with ReLU, global average pooling, then a terminal dense layer);
the concatenated branch features pass through a fusion head of dense ->
dropout -> ReLU blocks whose widths follow the B*F -> F -> F/4 -> 1
ratio pattern, with a 0.5 dropout before the output layer. Branches
share no weights. Weights are He-uniform, biases zero, all seeded.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_MAGIC = b"CLVCKPT1"


def _he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Dense:
    def __init__(self, rng, n_in: int, n_out: int):
        self.w = Tensor(_he_uniform(rng, (n_in, n_out), n_in), requires_grad=True)
        self.b = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.w), self.b)

    def params(self) -> dict[str, Tensor]:
        return {"w": self.w, "b": self.b}


class Conv:
    def __init__(self, rng, c_in: int, c_out: int, k: int = 3, stride: int = 2, pad: int = 1):
        self.stride, self.pad = stride, pad
        self.w = Tensor(_he_uniform(rng, (c_out, c_in, k, k), c_in * k * k), requires_grad=True)
        self.b = Tensor(np.zeros(c_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad)

    def params(self) -> dict[str, Tensor]:
        return {"w": self.w, "b": self.b}


class BranchNet:
    """Per-slice feature extractor: conv blocks -> GAP -> dense to F features."""

    def __init__(self, rng, conv_channels: tuple[int, ...], n_features: int):
        self.conv_channels = tuple(conv_channels)
        self.n_features = n_features
        self.convs = []
        c_in = 1
        for c_out in conv_channels:
            self.convs.append(Conv(rng, c_in, c_out))
            c_in = c_out
        self.fc = Dense(rng, c_in, n_features)

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for conv in self.convs:
            h = ad.relu(conv(h))
        return self.fc(ad.global_avg_pool(h))

    def params(self) -> dict[str, Tensor]:
        out = {}
        for i, conv in enumerate(self.convs):
            for k, v in conv.params().items():
                out[f"conv{i}.{k}"] = v
        for k, v in self.fc.params().items():
            out[f"fc.{k}"] = v
        return out


class FusionNet:
    """Dense head over concatenated branch features, regressing one real.

    Default dropout rates are 0.25 on hidden blocks and 0.5 before the
    output; desk-scale configs may lower them (with few, highly
    correlated hidden units the dropout variance penalty shrinks the
    learnable signal, unlike at full backbone scale).
    """

    def __init__(self, rng, n_branches: int, n_features: int, depth: int = 2,
                 drop_hidden: float = 0.25, drop_out: float = 0.5):
        self.depth = depth
        self.drop_hidden = drop_hidden
        self.drop_out = drop_out
        widths = [n_branches * n_features] + [
            max(4, n_features // (4**i)) for i in range(depth)
        ]
        self.blocks = [Dense(rng, widths[i], widths[i + 1]) for i in range(depth)]
        self.out = Dense(rng, widths[-1], 1)

    def __call__(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        h = x
        for block in self.blocks:
            h = block(h)
            h = ad.dropout(h, self.drop_hidden, rng, training)
            h = ad.relu(h)
        h = ad.dropout(h, self.drop_out, rng, training)
        return self.out(h)

    def params(self) -> dict[str, Tensor]:
        out = {}
        for i, block in enumerate(self.blocks):
            for k, v in block.params().items():
                out[f"block{i}.{k}"] = v
        for k, v in self.out.params().items():
            out[f"out.{k}"] = v
        return out


@dataclass(frozen=True)
class ModelConfig:
    n_branches: int = 4
    n_features: int = 64
    conv_channels: tuple[int, ...] = (8, 16, 32, 64)
    fusion_depth: int = 2
    drop_hidden: float = 0.25
    drop_out: float = 0.5
    init_seed: int = 0


class MultiBranchRegressor:
    """B independent branches plus a fusion head; forward maps B slices to years."""

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence(config.init_seed))
        self.branches = [
            BranchNet(rng, config.conv_channels, config.n_features)
            for _ in range(config.n_branches)
        ]
        self.fusion = FusionNet(
            rng, config.n_branches, config.n_features, config.fusion_depth,
            drop_hidden=config.drop_hidden, drop_out=config.drop_out,
        )

    # -- forward ------------------------------------------------------------

    def branch_features(self, slices: np.ndarray) -> Tensor:
        """(N, B, H, W) -> concatenated (N, B*F) branch features."""
        x = np.asarray(slices, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != self.config.n_branches:
            raise ValueError(
                f"expected (N, {self.config.n_branches}, H, W) slices, got {x.shape}"
            )
        feats = []
        for b, branch in enumerate(self.branches):
            xb = Tensor(x[:, b][:, None, :, :])
            feats.append(branch(xb))
        return ad.concat(feats, axis=1)

    def forward(self, slices: np.ndarray, training: bool = False, rng=None) -> Tensor:
        """Ages in years, shape (N, 1); deterministic when training=False."""
        feats = self.branch_features(slices)
        return self.fusion(feats, training=training, rng=rng)

    def predict(self, slices: np.ndarray, batch_size: int = 64) -> np.ndarray:
        x = np.asarray(slices, dtype=np.float64)
        outs = [
            self.forward(x[i:i + batch_size]).data[:, 0]
            for i in range(0, len(x), batch_size)
        ]
        return np.concatenate(outs) if outs else np.empty(0)

    # -- parameter bookkeeping ------------------------------------------------

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for b, branch in enumerate(self.branches):
            for k, v in branch.params().items():
                out[f"branch{b}.{k}"] = v
        for k, v in self.fusion.params().items():
            out[f"fusion.{k}"] = v
        return out

    def parameter_group(self, group: str) -> dict[str, Tensor]:
        """Named groups: fusion | branch_fc | branch_last_conv | all."""
        params = self.named_parameters()
        last = len(self.config.conv_channels) - 1
        if group == "fusion":
            return {k: v for k, v in params.items() if k.startswith("fusion.")}
        if group == "branch_fc":
            return {k: v for k, v in params.items() if ".fc." in k}
        if group == "branch_last_conv":
            return {k: v for k, v in params.items() if f".conv{last}." in k}
        if group == "all":
            return params
        raise ValueError(f"unknown parameter group {group!r}")

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        if set(state) != set(params):
            raise ValueError("state does not match model parameters")
        for k, v in params.items():
            v.data = np.asarray(state[k], dtype=np.float64).reshape(v.data.shape)


# ---------------------------------------------------------------------------
# Checkpoint container: magic, JSON (config + param manifest), f32le payload.


def save_checkpoint(model: MultiBranchRegressor, path) -> None:
    params = model.named_parameters()
    names = sorted(params)
    meta = {
        "config": {
            "n_branches": model.config.n_branches,
            "n_features": model.config.n_features,
            "conv_channels": list(model.config.conv_channels),
            "fusion_depth": model.config.fusion_depth,
            "drop_hidden": model.config.drop_hidden,
            "drop_out": model.config.drop_out,
            "init_seed": model.config.init_seed,
        },
        "params": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for n in names:
            f.write(params[n].data.astype("<f4").tobytes(order="C"))


def load_checkpoint(path) -> MultiBranchRegressor:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    (blob_len,) = struct.unpack("<I", raw[8:12])
    meta = json.loads(raw[12:12 + blob_len].decode())
    cfg = meta["config"]
    model = MultiBranchRegressor(
        ModelConfig(
            n_branches=cfg["n_branches"],
            n_features=cfg["n_features"],
            conv_channels=tuple(cfg["conv_channels"]),
            fusion_depth=cfg["fusion_depth"],
            drop_hidden=cfg.get("drop_hidden", 0.25),
            drop_out=cfg.get("drop_out", 0.5),
            init_seed=cfg["init_seed"],
        )
    )
    params = model.named_parameters()
    offset = 12 + blob_len
    state = {}
    for entry in meta["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        state[entry["name"]] = arr.reshape(shape).astype(np.float64)
        offset += count * 4
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    if set(state) != set(params):
        raise ValueError(f"{path}: parameter manifest mismatch")
    model.load_state_arrays(state)
    return model
