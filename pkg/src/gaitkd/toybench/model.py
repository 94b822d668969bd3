"""Tiny part-structured networks: one MLP per part plus a per-part classifier."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import gradcore as gc
from ..errors import ConfigError, ShapeError
from ..objective import StudentOutputs


@dataclass(frozen=True)
class ModelConfig:
    num_parts: int = 4
    hidden: int = 16
    depth: int = 1
    emb_dim: int = 8
    activation: str = "relu"

    def __post_init__(self):
        if min(self.num_parts, self.hidden, self.emb_dim) < 1 or self.depth < 1:
            raise ConfigError("model sizes must be >= 1")
        if self.activation not in ("relu", "tanh"):
            raise ConfigError(f"activation must be 'relu' or 'tanh', got {self.activation!r}")


class ToyModel:
    """Parameters live in ``self.params`` as float64 arrays with a leading part axis."""

    def __init__(self, cfg: ModelConfig, in_dim: int, num_classes: int, params=None, seed=0):
        self.cfg = cfg
        self.in_dim = int(in_dim)
        self.num_classes = int(num_classes)
        if params is None:
            params = self._init(np.random.default_rng(seed))
        self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        self._check_params()

    def param_shapes(self):
        P, H, D, C = self.cfg.num_parts, self.cfg.hidden, self.cfg.emb_dim, self.num_classes
        shapes = {}
        fan_in = self.in_dim
        for layer in range(self.cfg.depth):
            shapes[f"W{layer}"] = (P, fan_in, H)
            shapes[f"b{layer}"] = (P, 1, H)
            fan_in = H
        shapes["W_emb"] = (P, H, D)
        shapes["b_emb"] = (P, 1, D)
        shapes["W_cls"] = (P, D, C)
        return shapes

    def _init(self, rng):
        params = {}
        for name, shape in self.param_shapes().items():
            if name == "b_emb":
                # a nonzero offset keeps dead-ReLU samples away from the zero embedding
                params[name] = 0.1 * rng.standard_normal(shape)
            elif name.startswith("b"):
                params[name] = np.zeros(shape)
            else:
                params[name] = rng.standard_normal(shape) * np.sqrt(2.0 / shape[1])
        return params

    def _check_params(self):
        expected = self.param_shapes()
        if set(expected) != set(self.params):
            raise ShapeError(f"parameter names {sorted(self.params)} do not match {sorted(expected)}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ShapeError(f"parameter {name} has shape {self.params[name].shape}, model expects {shape}")

    def forward(self, x, params=None):
        """``x``: (N, data_parts, in_dim) part inputs.  Returns StudentOutputs in (B, K, P) layout.

        ``params`` may map names to Vars to record the pass on a tape.
        """
        params = self.params if params is None else params
        x = np.asarray(x, dtype=float)
        P = self.cfg.num_parts
        if x.ndim != 3 or x.shape[2] != self.in_dim or x.shape[1] < P:
            raise ShapeError(f"model needs input (N, >={P}, {self.in_dim}), got {x.shape}")
        act = gc.relu if self.cfg.activation == "relu" else gc.tanh
        h = np.ascontiguousarray(np.moveaxis(x[:, :P, :], 1, 0))  # (P, N, in)
        for layer in range(self.cfg.depth):
            h = act(gc.matmul(h, params[f"W{layer}"]) + params[f"b{layer}"])
        emb = gc.matmul(h, params["W_emb"]) + params["b_emb"]
        logits = gc.matmul(emb, params["W_cls"])
        # (P, N, K) -> (N, K, P)
        return StudentOutputs(gc.moveaxis(logits, 0, 2), gc.moveaxis(emb, 0, 2), (gc.moveaxis(h, 0, 2),))

    def predict(self, x, batch=512):
        """Forward without a tape, as numpy arrays."""
        outs = [self.forward(x[i:i + batch]) for i in range(0, len(x), batch)]
        return StudentOutputs(np.concatenate([o.logits for o in outs]),
                              np.concatenate([o.emb for o in outs]),
                              (np.concatenate([o.layers[0] for o in outs]),))

    def copy(self):
        return ToyModel(self.cfg, self.in_dim, self.num_classes, params=self.params)
