"""Coordinate MLPs with optional split-layers and hand-written backprop.

A network is a chain of layers. Every layer is a list of affine branches
``a_n = z @ W_n.T + b_n``; a dense layer has one branch, a split layer has
``N >= 2`` branches whose outputs are multiplied elementwise before the
activation. Only the hidden trunk is split by default; the input layer maps
the (optionally encoded) coordinates to the trunk width and the output layer
maps the trunk to ``d_out``, both dense.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .core_math import Prng, ShapeError, init_weights

ACTIVATIONS = ("relu", "sine", "gauss", "variable_periodic", "gabor_real", "identity")
_SIREN_LIKE = ("sine", "variable_periodic")


@dataclass(frozen=True)
class EncodingSpec:
    kind: str = "none"  # "none" | "positional"
    num_frequencies: int = 10
    include_raw: bool = True

    def out_dim(self, d_in: int) -> int:
        if self.kind == "none":
            return d_in
        return d_in * (2 * self.num_frequencies + (1 if self.include_raw else 0))


@dataclass(frozen=True)
class ActivationSpec:
    kind: str = "relu"
    omega: float = 30.0
    scale: float | None = None  # gauss defaults to 30, gabor_real to 10

    def __post_init__(self):
        if self.kind not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.kind!r}")
        if self.omega <= 0:
            raise ValueError("omega must be positive")
        if self.scale is not None and self.scale <= 0:
            raise ValueError("scale must be positive")

    @property
    def spread(self) -> float:
        if self.scale is not None:
            return self.scale
        return 10.0 if self.kind == "gabor_real" else 30.0


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "dense" | "split"
    in_width: int
    out_width: int
    num_splits: int = 1
    bias: bool = True
    activation: str = "backbone"  # "backbone" | "identity" | "sigmoid"


@dataclass(frozen=True)
class NetworkSpec:
    d_in: int
    d_out: int
    backbone_width: int
    hidden_layers: int
    encoding: EncodingSpec = field(default_factory=EncodingSpec)
    activation: ActivationSpec = field(default_factory=ActivationSpec)
    num_splits: int = 0
    final_sigmoid: bool = False
    split_bias: bool = True
    split_input: bool = False  # also split the first (coordinate) layer

    def __post_init__(self):
        if min(self.d_in, self.d_out, self.backbone_width) < 1 or self.hidden_layers < 0:
            raise ValueError("network dimensions must be positive")
        n = self.num_splits
        if n != 0 and not 2 <= n <= self.backbone_width ** 2:
            raise ValueError(f"num_splits must be 0 or in [2, C^2], got {n}")
        if self.split_input and n == 0:
            raise ValueError("split_input requires num_splits >= 2")

    @property
    def trunk_width(self) -> int:
        return branch_width(self.backbone_width, max(self.num_splits, 1))

    def layers(self) -> list[LayerSpec]:
        w = self.trunk_width
        n = self.num_splits
        enc = self.encoding.out_dim(self.d_in)
        if self.split_input:
            out = [LayerSpec("split", enc, w, n, self.split_bias)]
        else:
            out = [LayerSpec("dense", enc, w)]
        for _ in range(self.hidden_layers):
            out.append(LayerSpec("split", w, w, n, self.split_bias) if n else LayerSpec("dense", w, w))
        out.append(LayerSpec("dense", w, self.d_out, activation="sigmoid" if self.final_sigmoid else "identity"))
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        d = dict(d)
        d["encoding"] = EncodingSpec(**d.get("encoding", {}))
        d["activation"] = ActivationSpec(**d.get("activation", {}))
        return cls(**d)


def branch_width(c: int, n: int) -> int:
    if n <= 1:
        return c
    w = int(math.floor(c / math.sqrt(n)))
    # guard against sqrt rounding at perfect squares
    while (w + 1) * (w + 1) * n <= c * c:
        w += 1
    while w * w * n > c * c:
        w -= 1
    return max(w, 1)


def positional_encode(x, spec: EncodingSpec) -> np.ndarray:
    """Fourier features ``[sin(2^k pi x), cos(2^k pi x)]`` per input dim, raw x first if requested.

    Accepts a single coordinate vector or a ``(batch, d_in)`` array.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    freqs = (2.0 ** np.arange(spec.num_frequencies)) * np.pi
    parts = []
    for d in range(xb.shape[1]):
        col = xb[:, d:d + 1]
        ang = col * freqs
        block = np.empty((xb.shape[0], 2 * spec.num_frequencies))
        block[:, 0::2] = np.sin(ang)
        block[:, 1::2] = np.cos(ang)
        if spec.include_raw:
            parts.append(col)
        parts.append(block)
    out = np.concatenate(parts, axis=1)
    return out[0] if single else out


def encode(x: np.ndarray, spec: EncodingSpec) -> np.ndarray:
    if spec.kind == "none":
        return np.asarray(x, dtype=np.float64)
    if spec.kind == "positional":
        return positional_encode(x, spec)
    raise ValueError(f"unknown encoding {spec.kind!r}")


def activate(spec: ActivationSpec, z):
    k = spec.kind
    if k == "relu":
        return np.maximum(z, 0.0)
    if k == "sine":
        return np.sin(spec.omega * z)
    if k == "gauss":
        return np.exp(-(spec.spread * z) ** 2)
    if k == "variable_periodic":
        return np.sin(spec.omega * (np.abs(z) + 1.0) * z)
    if k == "gabor_real":
        return np.cos(spec.omega * z) * np.exp(-(spec.spread * z) ** 2)
    return np.asarray(z) * 1.0


def activate_deriv(spec: ActivationSpec, z):
    k = spec.kind
    z = np.asarray(z, dtype=np.float64)
    if k == "relu":
        return (z > 0).astype(np.float64)
    if k == "sine":
        return spec.omega * np.cos(spec.omega * z)
    if k == "gauss":
        s2 = spec.spread ** 2
        return -2.0 * s2 * z * np.exp(-s2 * z * z)
    if k == "variable_periodic":
        w = spec.omega
        # d/dz [(|z|+1) z] = 2|z| + 1, using sign(0) = 0
        return w * (2.0 * np.sign(z) * z + 1.0) * np.cos(w * (np.abs(z) + 1.0) * z)
    if k == "gabor_real":
        w, s2 = spec.omega, spec.spread ** 2
        g = np.exp(-s2 * z * z)
        return (-w * np.sin(w * z) - 2.0 * s2 * z * np.cos(w * z)) * g
    return np.ones_like(z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class NetworkParams:
    """``layers[l][n] = (W, b)`` with ``W`` shaped (out, in); ``b`` is None for bias-free branches."""

    layers: list

    def arrays(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            for w, b in layer:
                out.append(w)
                if b is not None:
                    out.append(b)
        return out

    def copy(self) -> "NetworkParams":
        return NetworkParams([[(w.copy(), None if b is None else b.copy()) for w, b in layer] for layer in self.layers])

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams([[(np.zeros_like(w), None if b is None else np.zeros_like(b)) for w, b in layer]
                              for layer in self.layers])

    def size(self) -> int:
        return sum(a.size for a in self.arrays())

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def assign_flat(self, flat: np.ndarray) -> None:
        pos = 0
        for a in self.arrays():
            a[...] = flat[pos:pos + a.size].reshape(a.shape)
            pos += a.size


Gradients = NetworkParams


@dataclass
class LayerCache:
    inputs: np.ndarray
    branches: list  # affine outputs a_n
    pre: np.ndarray
    post: np.ndarray


@dataclass
class ForwardCache:
    encoded: np.ndarray
    layers: list


class NonFiniteError(FloatingPointError):
    pass


def init_network(spec: NetworkSpec, seed: int) -> NetworkParams:
    prng = Prng(seed)
    act = spec.activation
    siren = act.kind in _SIREN_LIKE
    layers = []
    for idx, ls in enumerate(spec.layers()):
        scheme = "lecun" if not siren else ("siren_first" if idx == 0 else "siren_hidden")
        branches = []
        for _ in range(ls.num_splits):
            w = init_weights(scheme, ls.in_width, act.omega, prng, fan_out=ls.out_width)
            if not ls.bias:
                b = None
            elif act.kind == "variable_periodic":
                b = prng.uniform_array(-1.0, 1.0, ls.out_width)
            else:
                b = np.zeros(ls.out_width)
            branches.append((w, b))
        layers.append(branches)
    return NetworkParams(layers)


def param_count(spec: NetworkSpec) -> int:
    total = 0
    for ls in spec.layers():
        total += ls.num_splits * (ls.in_width * ls.out_width + (ls.out_width if ls.bias else 0))
    return total


def hidden_weight_count(c: int, n: int) -> int:
    """Weights (no biases) of one hidden layer of backbone width ``c`` split ``n`` ways."""
    w = branch_width(c, n)
    return max(n, 1) * w * w


def _apply_layer_act(ls: LayerSpec, spec: NetworkSpec, pre):
    if ls.activation == "identity":
        return pre
    if ls.activation == "sigmoid":
        return _sigmoid(pre)
    return activate(spec.activation, pre)


def _layer_act_deriv(ls: LayerSpec, spec: NetworkSpec, pre, post):
    if ls.activation == "identity":
        return np.ones_like(pre)
    if ls.activation == "sigmoid":
        return post * (1.0 - post)
    return activate_deriv(spec.activation, pre)


def _check_params(spec: NetworkSpec, params: NetworkParams):
    lspecs = spec.layers()
    if len(lspecs) != len(params.layers):
        raise ShapeError(f"spec has {len(lspecs)} layers, params have {len(params.layers)}")
    for i, (ls, layer) in enumerate(zip(lspecs, params.layers)):
        if len(layer) != ls.num_splits:
            raise ShapeError(f"layer {i}: expected {ls.num_splits} branches, got {len(layer)}")
        for w, b in layer:
            if w.shape != (ls.out_width, ls.in_width):
                raise ShapeError(f"layer {i}: weight shape {w.shape} != {(ls.out_width, ls.in_width)}")
            if (b is None) == ls.bias:
                raise ShapeError(f"layer {i}: bias presence does not match spec")
    return lspecs


def forward(spec: NetworkSpec, params: NetworkParams, batch) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None] if spec.d_in == 1 else x[None, :]
    if x.shape[1] != spec.d_in:
        raise ShapeError(f"batch has {x.shape[1]} coordinate dims, network expects {spec.d_in}")
    lspecs = _check_params(spec, params)
    z = encode(x, spec.encoding)
    cache = ForwardCache(z, [])
    for i, (ls, layer) in enumerate(zip(lspecs, params.layers)):
        branches = []
        for w, b in layer:
            a = z @ w.T
            if b is not None:
                a = a + b
            branches.append(a)
        pre = branches[0]
        for a in branches[1:]:
            pre = pre * a
        post = _apply_layer_act(ls, spec, pre)
        if not np.all(np.isfinite(post)):
            raise NonFiniteError(f"non-finite activations in layer {i}")
        cache.layers.append(LayerCache(z, branches, pre, post))
        z = post
    return z, cache


def _product_except(branches: list, n: int):
    out = None
    for m, a in enumerate(branches):
        if m == n:
            continue
        out = a if out is None else out * a
    return out


def backward(spec: NetworkSpec, params: NetworkParams, cache: ForwardCache, d_outputs):
    """Accumulate parameter gradients over the batch and return ``(grads, d_inputs)``.

    ``d_inputs`` is the gradient with respect to the (encoded) network input.
    """
    lspecs = _check_params(spec, params)
    if len(cache.layers) != len(lspecs):
        raise ShapeError("cache does not match network spec")
    d = np.asarray(d_outputs, dtype=np.float64)
    if d.shape != cache.layers[-1].post.shape:
        raise ShapeError(f"d_outputs shape {d.shape} != outputs {cache.layers[-1].post.shape}")
    grads = []
    for ls, layer, lc in zip(reversed(lspecs), reversed(params.layers), reversed(cache.layers)):
        d_pre = d * _layer_act_deriv(ls, spec, lc.pre, lc.post)
        d_in = None
        lg = []
        for n, (w, b) in enumerate(layer):
            d_a = d_pre if len(layer) == 1 else d_pre * _product_except(lc.branches, n)
            lg.append((d_a.T @ lc.inputs, None if b is None else d_a.sum(axis=0)))
            if d_in is None:
                d_in = d_a @ w
            else:
                d_in += d_a @ w
        grads.append(lg)
        d = d_in
    grads.reverse()
    return NetworkParams(grads), d


def evaluate(spec: NetworkSpec, params: NetworkParams, coords, chunk: int = 65536) -> np.ndarray:
    """Forward pass without keeping the cache, in chunks to bound memory."""
    coords = np.asarray(coords, dtype=np.float64)
    outs = [forward(spec, params, coords[i:i + chunk])[0] for i in range(0, len(coords), chunk)]
    return np.concatenate(outs, axis=0)


def with_splits(spec: NetworkSpec, n: int) -> NetworkSpec:
    return replace(spec, num_splits=n, split_input=spec.split_input and n >= 2)
