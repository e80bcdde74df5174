"""Stacked bidirectional LSTM encoder with exact backpropagation through time.

Gates are stacked in the order input, forget, output, candidate, so every
direction holds ``W`` (4H x d), ``U`` (4H x H) and ``b`` (4H). Both
directions start from zero hidden and cell state.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import _kernels
from .numerics import ShapeError, as_matrix

INIT_SCALE = 0.05


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    hidden_dim: int = 32
    num_layers: int = 2

    def __post_init__(self):
        if self.num_layers < 1 or self.hidden_dim < 1 or self.input_dim < 1:
            raise ValueError(f"invalid encoder config {self}")

    @classmethod
    def full_scale(cls, input_dim: int) -> "EncoderConfig":
        return cls(input_dim=input_dim, hidden_dim=360, num_layers=6)

    @property
    def output_dim(self) -> int:
        return 2 * self.hidden_dim

    def layer_input_dim(self, k: int) -> int:
        return self.input_dim if k == 0 else 2 * self.hidden_dim


@dataclass
class LstmDirection:
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    @property
    def hidden_dim(self) -> int:
        return self.U.shape[1]

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "LstmDirection":
        return cls(
            np.zeros((4 * hidden_dim, input_dim)),
            np.zeros((4 * hidden_dim, hidden_dim)),
            np.zeros(4 * hidden_dim),
        )

    @classmethod
    def uniform(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator) -> "LstmDirection":
        return cls(
            rng.uniform(-INIT_SCALE, INIT_SCALE, size=(4 * hidden_dim, input_dim)),
            rng.uniform(-INIT_SCALE, INIT_SCALE, size=(4 * hidden_dim, hidden_dim)),
            np.zeros(4 * hidden_dim),
        )

    def tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        yield "W", self.W
        yield "U", self.U
        yield "b", self.b


@dataclass
class LstmLayerParams:
    fwd: LstmDirection
    bwd: LstmDirection

    def tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        for tag, d in (("fwd", self.fwd), ("bwd", self.bwd)):
            for name, arr in d.tensors():
                yield f"{tag}.{name}", arr


@dataclass
class EncoderParams:
    config: EncoderConfig
    layers: list[LstmLayerParams]
    # bumped by every in-place update so stale forward caches can be detected
    version: int = 0

    @classmethod
    def init(cls, config: EncoderConfig, rng: np.random.Generator) -> "EncoderParams":
        layers = []
        for k in range(config.num_layers):
            d = config.layer_input_dim(k)
            fwd = LstmDirection.uniform(d, config.hidden_dim, rng)
            bwd = LstmDirection.uniform(d, config.hidden_dim, rng)
            layers.append(LstmLayerParams(fwd, bwd))
        return cls(config, layers)

    @classmethod
    def zeros_like(cls, other: "EncoderParams") -> "EncoderParams":
        return cls(
            other.config,
            [
                LstmLayerParams(
                    LstmDirection.zeros(l.fwd.W.shape[1], l.fwd.hidden_dim),
                    LstmDirection.zeros(l.bwd.W.shape[1], l.bwd.hidden_dim),
                )
                for l in other.layers
            ],
        )

    def tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        for k, layer in enumerate(self.layers):
            for name, arr in layer.tensors():
                yield f"encoder.{k}.{name}", arr

    def copy(self) -> "EncoderParams":
        clone = EncoderParams.zeros_like(self)
        for (_, dst), (_, src) in zip(clone.tensors(), self.tensors()):
            dst[...] = src
        return clone

    def num_parameters(self) -> int:
        return sum(a.size for _, a in self.tensors())


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_cell_step(params: LstmDirection, x_t, h_prev, c_prev) -> tuple[np.ndarray, np.ndarray]:
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    H = params.hidden_dim
    if x_t.shape != (params.W.shape[1],) or h_prev.shape != (H,) or c_prev.shape != (H,):
        raise ShapeError(
            f"cell expects x {params.W.shape[1]}, state {H}; "
            f"got x {x_t.shape}, h {h_prev.shape}, c {c_prev.shape}"
        )
    pre = params.W @ x_t + params.U @ h_prev + params.b
    i = _sigmoid(pre[:H])
    f = _sigmoid(pre[H : 2 * H])
    o = _sigmoid(pre[2 * H : 3 * H])
    g = np.tanh(pre[3 * H :])
    c_t = f * c_prev + i * g
    return o * np.tanh(c_t), c_t


@dataclass
class _DirectionCache:
    gates: np.ndarray
    c: np.ndarray
    h: np.ndarray


@dataclass
class _LayerCache:
    x: np.ndarray
    fwd: _DirectionCache
    bwd: _DirectionCache


def _direction_forward(p: LstmDirection, x: np.ndarray, reverse: bool) -> _DirectionCache:
    xproj = np.ascontiguousarray(x @ p.W.T + p.b)
    gates, c, h = _kernels.lstm_sweep_forward(xproj, np.ascontiguousarray(p.U), reverse)
    return _DirectionCache(gates, c, h)


def _layer_forward(layer: LstmLayerParams, x: np.ndarray) -> tuple[np.ndarray, _LayerCache]:
    if x.shape[0] == 0:
        raise ValueError("empty sequence")
    if x.shape[1] != layer.fwd.W.shape[1]:
        raise ShapeError(f"layer expects input dim {layer.fwd.W.shape[1]}, got {x.shape[1]}")
    f = _direction_forward(layer.fwd, x, reverse=False)
    b = _direction_forward(layer.bwd, x, reverse=True)
    return np.concatenate([f.h, b.h], axis=1), _LayerCache(x, f, b)


def bilstm_layer_forward(layer: LstmLayerParams, inputs) -> np.ndarray:
    """Row ``t`` is ``[forward h_t, backward h_t]``."""
    out, _ = _layer_forward(layer, as_matrix(inputs))
    return out


@dataclass
class EncoderOutput:
    e: np.ndarray
    caches: list = field(repr=False)
    params: EncoderParams = field(repr=False)
    version: int = 0


def encoder_forward(params: EncoderParams, X) -> EncoderOutput:
    x = as_matrix(X)
    if x.shape[1] != params.config.input_dim:
        raise ShapeError(f"expected {params.config.input_dim} features, got {x.shape[1]}")
    caches = []
    for layer in params.layers:
        x, cache = _layer_forward(layer, x)
        caches.append(cache)
    return EncoderOutput(x, caches, params, params.version)


def _direction_backward(p: LstmDirection, cache: _DirectionCache, x, dh, reverse: bool):
    dpre = _kernels.lstm_sweep_backward(
        cache.gates, cache.c, np.ascontiguousarray(p.U), np.ascontiguousarray(dh), reverse
    )
    h_prev = np.zeros_like(cache.h)
    if reverse:
        h_prev[:-1] = cache.h[1:]
    else:
        h_prev[1:] = cache.h[:-1]
    grads = LstmDirection(dpre.T @ x, dpre.T @ h_prev, dpre.sum(axis=0))
    return grads, dpre @ p.W


def encoder_backward(output: EncoderOutput, grad_e) -> tuple[EncoderParams, np.ndarray]:
    """Gradients for every encoder tensor and for the input features."""
    params = output.params
    if output.version != params.version:
        raise RuntimeError("stale encoder cache: parameters changed since the forward pass")
    g = as_matrix(grad_e)
    if g.shape != output.e.shape:
        raise ShapeError(f"grad_e shape {g.shape} does not match encoder output {output.e.shape}")
    H = params.config.hidden_dim
    grads = EncoderParams.zeros_like(params)
    for k in range(len(params.layers) - 1, -1, -1):
        layer, cache = params.layers[k], output.caches[k]
        gf, dx_f = _direction_backward(layer.fwd, cache.fwd, cache.x, g[:, :H], reverse=False)
        gb, dx_b = _direction_backward(layer.bwd, cache.bwd, cache.x, g[:, H:], reverse=True)
        grads.layers[k] = LstmLayerParams(gf, gb)
        g = dx_f + dx_b
    return grads, g
