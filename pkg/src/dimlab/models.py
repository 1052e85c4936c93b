"""The four benchmark architectures over the autodiff engine.

All models are scalar-output regressors: ReLU hidden activations, linear
head, Glorot-uniform weights, zero biases. Parameters live in a flat
name -> float64 array map; every forward pass builds a fresh graph over
them (define-by-run).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ConfigError, DimensionError, SchemaError

ARCHITECTURES = ("ann", "mlp3", "mlp5", "cnn1d")

HIDDEN_DEFAULTS = {
    "ann": (128,),
    "mlp3": (128, 64, 32),
    "mlp5": (256, 128, 64, 32, 16),
    "cnn1d": (128, 64, 32),  # conv filter counts, kernel width 3
}

DROPOUT_DEFAULTS = {"ann": 0.0, "mlp3": 0.2, "mlp5": 0.2, "cnn1d": 0.0}

# rng stream key for parameter initialization (seeded as [key, seed])
INIT_STREAM = 101


@dataclass(frozen=True)
class ModelConfig:
    architecture: str
    input_dim: int
    hidden_sizes: tuple[int, ...] = ()
    dropout_rate: float = -1.0  # sentinel, replaced by architecture default
    seed: int = 0

    def __post_init__(self):
        arch = str(self.architecture).lower()
        if arch not in ARCHITECTURES:
            raise ConfigError(
                f"unknown architecture {self.architecture!r}, "
                f"expected one of {ARCHITECTURES}")
        object.__setattr__(self, "architecture", arch)
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        sizes = tuple(int(s) for s in self.hidden_sizes) or HIDDEN_DEFAULTS[arch]
        if any(s < 1 for s in sizes):
            raise ConfigError(f"hidden sizes must be positive, got {sizes}")
        object.__setattr__(self, "hidden_sizes", sizes)
        if self.dropout_rate < 0:
            object.__setattr__(self, "dropout_rate", DROPOUT_DEFAULTS[arch])
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(
                f"dropout_rate must be in [0, 1), got {self.dropout_rate}")


@dataclass
class Model:
    config: ModelConfig
    parameters: dict[str, np.ndarray] = field(default_factory=dict)


def _glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def build_model(config: ModelConfig) -> Model:
    """Allocate and initialize all parameters for the configured network."""
    rng = np.random.default_rng([INIT_STREAM, config.seed])
    params: dict[str, np.ndarray] = {}
    if config.architecture == "cnn1d":
        in_ch = 1
        for i, filters in enumerate(config.hidden_sizes):
            params[f"conv{i}_w"] = _glorot(rng, in_ch * 3, filters * 3,
                                           (filters, in_ch, 3))
            params[f"conv{i}_b"] = np.zeros(filters)
            in_ch = filters
        params["head_w"] = _glorot(rng, in_ch, 1, (in_ch, 1))
        params["head_b"] = np.zeros(1)
    else:
        width = config.input_dim
        for i, units in enumerate(config.hidden_sizes):
            params[f"layer{i}_w"] = _glorot(rng, width, units, (width, units))
            params[f"layer{i}_b"] = np.zeros(units)
            width = units
        params["head_w"] = _glorot(rng, width, 1, (width, 1))
        params["head_b"] = np.zeros(1)
    return Model(config=config, parameters=params)


def param_count(model: Model) -> int:
    return sum(p.size for p in model.parameters.values())


def forward_with_params(model: Model, batch, training: bool = False,
                        rng: np.random.Generator | None = None):
    """Run the network on a batch, returning the prediction node and the
    parameter leaf nodes of the freshly built graph (for gradient reads)."""
    x = ad.as_tensor(batch)
    if x.ndim != 2 or x.shape[1] != model.config.input_dim:
        raise DimensionError(
            f"batch must be (N, {model.config.input_dim}), got {x.shape}")
    nodes = {name: ad.leaf(value, requires_grad=True)
             for name, value in model.parameters.items()}
    cfg = model.config
    n = x.shape[0]
    if cfg.architecture == "cnn1d":
        h = ad.reshape(ad.constant(x), (n, cfg.input_dim, 1))
        for i in range(len(cfg.hidden_sizes)):
            h = ad.relu(ad.conv1d_same(h, nodes[f"conv{i}_w"], nodes[f"conv{i}_b"]))
        h = ad.global_avg_pool(h)
    else:
        h = ad.constant(x)
        for i in range(len(cfg.hidden_sizes)):
            h = ad.relu(ad.matmul(h, nodes[f"layer{i}_w"]) + nodes[f"layer{i}_b"])
            if training and cfg.dropout_rate > 0.0:
                h = ad.dropout(h, cfg.dropout_rate, training=True, rng=rng)
    out = ad.matmul(h, nodes["head_w"]) + nodes["head_b"]
    return ad.reshape(out, (n,)), nodes


def forward(model: Model, batch, training: bool = False,
            rng: np.random.Generator | None = None) -> Node:
    """Length-N prediction node; dropout is active only when training."""
    preds, _ = forward_with_params(model, batch, training=training, rng=rng)
    return preds


def save_model(model: Model, path) -> None:
    """Checkpoint format: one .npz archive holding every parameter array
    under its name plus a '__config__' JSON string."""
    meta = json.dumps(asdict(model.config), sort_keys=True)
    np.savez(path, __config__=np.array(meta), **model.parameters)


def load_model(path) -> Model:
    with np.load(path, allow_pickle=False) as archive:
        if "__config__" not in archive:
            raise SchemaError(f"{path}: not a model checkpoint (no __config__)")
        meta = json.loads(str(archive["__config__"]))
        try:
            config = ModelConfig(**meta)
        except TypeError as exc:
            raise SchemaError(f"{path}: bad checkpoint config: {exc}") from exc
        params = {k: archive[k] for k in archive.files if k != "__config__"}
    expected = build_model(config).parameters
    if params.keys() != expected.keys():
        raise SchemaError(
            f"{path}: checkpoint parameters {sorted(params)} do not match "
            f"architecture {config.architecture}")
    for name, arr in params.items():
        if arr.shape != expected[name].shape:
            raise SchemaError(
                f"{path}: parameter {name} has shape {arr.shape}, "
                f"expected {expected[name].shape}")
    return Model(config=config, parameters={k: np.ascontiguousarray(v, dtype=np.float64)
                                            for k, v in params.items()})
