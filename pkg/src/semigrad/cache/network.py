"""Radiance cache: frequency-encoded queries into a ReLU MLP.

The cache predicts reflected radiance only; :func:`cache_radiance` adds the
surface emission back (emission reparameterization).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError
from ..rng import Purpose, stream
from ..transport.sampling import SurfacePoint
from ..transport.scene import Scene
from ..transport.trace import emission
from .autodiff import Tape

RAW_FEATURES = 12


@dataclass(frozen=True)
class EncodingConfig:
    frequencies: int = 6
    use_direction: bool = True
    use_normal: bool = True
    use_albedo: bool = True

    @property
    def size(self) -> int:
        return RAW_FEATURES + 6 * self.frequencies


def encode_query(x, w, n, albedo, config: EncodingConfig) -> np.ndarray:
    """Features ``[x, w, n, albedo, sin/cos(2^k pi x_axis) for k < F]``.

    Disabled toggles zero their block rather than removing it, so the feature
    length is always ``12 + 6F``.
    """
    x = np.asarray(x, dtype=float)
    w, n, albedo = (np.broadcast_to(np.asarray(a, dtype=float), x.shape) for a in (w, n, albedo))
    zeros = np.zeros_like(x)
    blocks = [x,
              w if config.use_direction else zeros,
              n if config.use_normal else zeros,
              albedo if config.use_albedo else zeros]
    if config.frequencies:
        scale = np.pi * 2.0 ** np.arange(config.frequencies)
        arg = x[..., :, None] * scale  # (..., 3, F)
        sc = np.stack([np.sin(arg), np.cos(arg)], axis=-1)  # (..., 3, F, 2)
        blocks.append(sc.reshape(x.shape[:-1] + (6 * config.frequencies,)))
    return np.concatenate(blocks, axis=-1)


def _layer_shapes(topology):
    return [(topology[i], topology[i + 1]) for i in range(len(topology) - 1)]


def parameter_count(topology) -> int:
    return sum(a * b + b for a, b in _layer_shapes(topology))


@dataclass
class CacheParams:
    theta: np.ndarray
    topology: tuple[int, ...]
    encoding: EncodingConfig = field(default_factory=EncodingConfig)

    def __post_init__(self):
        self.topology = tuple(int(t) for t in self.topology)
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if len(self.topology) < 2 or self.topology[-1] != 3:
            raise ConfigurationError(f"topology must end in 3 outputs, got {self.topology}")
        if self.topology[0] != self.encoding.size:
            raise ConfigurationError(
                f"topology input width {self.topology[0]} != encoding size {self.encoding.size}")
        if self.theta.shape != (parameter_count(self.topology),):
            raise ConfigurationError(
                f"theta has {self.theta.size} entries, topology needs {parameter_count(self.topology)}")

    def layers(self):
        """(W, b) views into ``theta`` in layer order; W has shape (fan_in, fan_out)."""
        out, k = [], 0
        for a, b in _layer_shapes(self.topology):
            W = self.theta[k:k + a * b].reshape(a, b)
            k += a * b
            out.append((W, self.theta[k:k + b]))
            k += b
        return out

    def copy(self) -> "CacheParams":
        return CacheParams(self.theta.copy(), self.topology, self.encoding)


def default_topology(encoding: EncodingConfig, width=128, layers=4) -> tuple[int, ...]:
    """``layers`` linear layers: input -> width x (layers-1) -> 3."""
    return (encoding.size,) + (width,) * (layers - 1) + (3,)


def init_params(topology=None, encoding: EncodingConfig | None = None, seed=0) -> CacheParams:
    """Xavier-uniform weights, zero biases."""
    encoding = encoding or EncodingConfig()
    topology = tuple(topology) if topology is not None else default_topology(encoding)
    rng = stream(seed, Purpose.INIT)
    parts = []
    for a, b in _layer_shapes(topology):
        lim = np.sqrt(6.0 / (a + b))
        parts.append(rng.uniform(-lim, lim, size=a * b))
        parts.append(np.zeros(b))
    return CacheParams(np.concatenate(parts), topology, encoding)


def constant_params(value, topology=None, encoding: EncodingConfig | None = None) -> CacheParams:
    """Zero weights and an output bias of ``value``: the network outputs ``value`` everywhere."""
    encoding = encoding or EncodingConfig()
    topology = tuple(topology) if topology is not None else default_topology(encoding)
    params = CacheParams(np.zeros(parameter_count(topology)), topology, encoding)
    params.layers()[-1][1][:] = value
    return params


def _check_finite(params: CacheParams):
    if not np.all(np.isfinite(params.theta)):
        raise FloatingPointError("cache parameters contain non-finite values")


class ForwardTrace:
    """Activations kept by the fused forward pass, consumed by :func:`cache_backward`."""

    __slots__ = ("params", "inputs", "shape")

    def __init__(self, params: CacheParams, inputs: list, shape: tuple):
        self.params = params
        self.inputs = inputs  # input of every layer; hidden ones are post-ReLU
        self.shape = shape


def _run(layers, h, keep=None):
    last = len(layers) - 1
    for i, (W, b) in enumerate(layers):
        if keep is not None:
            keep.append(h)
        h = h @ W
        h += b
        if i < last:
            np.maximum(h, 0.0, out=h)
    return h


def _features(params: CacheParams, features) -> np.ndarray:
    _check_finite(params)
    features = np.asarray(features, dtype=float)
    if features.shape[-1] != params.topology[0]:
        raise ConfigurationError(
            f"feature width {features.shape[-1]} != network input {params.topology[0]}")
    return features


def cache_forward(params: CacheParams, features, engine="fused"):
    """Network output for a batch of features, plus what the backward pass needs.

    ``engine="fused"`` keeps layer inputs only; ``engine="tape"`` records every
    op on a generic :class:`Tape` (slower, used as a cross-check).
    """
    features = _features(params, features)
    flat = features.reshape(-1, features.shape[-1])
    out_shape = features.shape[:-1] + (3,)
    if engine == "fused":
        inputs = []
        h = _run(params.layers(), flat, inputs)
        return h.reshape(out_shape), ForwardTrace(params, inputs, out_shape)
    if engine != "tape":
        raise ConfigurationError(f"unknown engine {engine!r}")
    tape = Tape()
    tape.topology = params.topology
    h = tape.constant(flat)
    layers = params.layers()
    for i, (W, b) in enumerate(layers):
        h = tape.add(tape.matmul(h, tape.param(W)), tape.param(b))
        if i < len(layers) - 1:
            h = tape.relu(h)
    out = tape.reshape(h, out_shape)
    tape.output = out
    return out.value, tape


def cache_evaluate(params: CacheParams, features) -> np.ndarray:
    """Forward pass without keeping anything (no-grad path); bit-identical to the fused forward."""
    features = _features(params, features)
    h = _run(params.layers(), features.reshape(-1, features.shape[-1]))
    return h.reshape(features.shape[:-1] + (3,))


def _fused_backward(trace: ForwardTrace, upstream) -> np.ndarray:
    params = trace.params
    grad = np.zeros_like(params.theta)
    views = CacheParams.__new__(CacheParams)
    views.theta, views.topology = grad, params.topology
    gviews = views.layers()
    layers = params.layers()
    g = upstream.reshape(-1, 3)
    for i in range(len(layers) - 1, -1, -1):
        h = trace.inputs[i]
        gW, gb = gviews[i]
        np.matmul(h.T, g, out=gW)
        g.sum(axis=0, out=gb)
        if i > 0:
            g = g @ layers[i][0].T
            np.multiply(g, h > 0.0, out=g)
    return grad


def cache_backward(trace, upstream) -> np.ndarray:
    """Gradient of ``sum(upstream * output)`` with respect to the flat parameter vector."""
    upstream = np.asarray(upstream, dtype=float)
    if isinstance(trace, ForwardTrace):
        if upstream.shape != trace.shape:
            raise ValueError(f"upstream shape {upstream.shape} does not match output {trace.shape}")
        return _fused_backward(trace, upstream)
    if not isinstance(trace, Tape) or trace.output is None or not trace.params:
        raise ValueError("trace was not produced by cache_forward")
    if upstream.shape != trace.output.shape:
        raise ValueError(f"upstream shape {upstream.shape} does not match output {trace.output.shape}")
    grads = trace.backward(trace.output, upstream)
    parts = []
    for p in trace.params:
        g = grads[p.index]
        parts.append(np.zeros(p.value.size) if g is None else np.asarray(g).reshape(-1))
    return np.concatenate(parts)


def query_features(scene: Scene, x: SurfacePoint, w, config: EncodingConfig) -> np.ndarray:
    albedo = scene.packed["mat_albedo"][np.maximum(x.material_id, 0)]
    return encode_query(x.position, w, x.normal, albedo, config)


def cache_radiance(params: CacheParams, scene: Scene, x: SurfacePoint, w) -> np.ndarray:
    """``L(x, w) = E(x, w) + network(x, w)``."""
    net = cache_evaluate(params, query_features(scene, x, w, params.encoding))
    return emission(scene, x, w) + net
