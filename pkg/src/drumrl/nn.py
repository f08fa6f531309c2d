"""Small numpy feedforward network: forward, backprop, Adam and a portable file format.

Weights are stored as ``(n_in, n_out)`` matrices so a layer computes
``x @ W + b`` on row batches.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_MAGIC = b"DRUMMLP\x00"
FORMAT_VERSION = 1
HIDDEN_ACTIVATIONS = ("tanh", "relu")
OUTPUT_ACTIVATIONS = ("identity",)


class TrainingError(RuntimeError):
    """Non-finite loss or gradient encountered during optimisation."""


class ModelFormatError(ValueError):
    """Model file is unreadable, truncated or from an unsupported version."""


@dataclass
class Mlp:
    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "tanh"
    output_activation: str = "identity"

    def __post_init__(self):
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("one weight matrix and bias vector per layer transition")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_sizes[i], self.layer_sizes[i + 1])
            if w.shape != shape or b.shape != (shape[1],):
                raise ValueError(f"layer {i}: expected weight {shape}, got {w.shape}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")

    @property
    def params(self) -> list[np.ndarray]:
        """Parameter arrays in the canonical order ``W0, b0, W1, b1, ...``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def n_params(self) -> int:
        return count_params(self.layer_sizes)

    def copy(self) -> "Mlp":
        return Mlp(list(self.layer_sizes), [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases], self.hidden_activation,
                   self.output_activation)


def count_params(layer_sizes) -> int:
    return sum(a * b + b for a, b in zip(layer_sizes[:-1], layer_sizes[1:]))


def init_mlp(layer_sizes, activation: str = "tanh", seed: int = 0) -> Mlp:
    """Fan-in scaled uniform init (Xavier for tanh, He for relu), zero biases."""
    sizes = [int(n) for n in layer_sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise ValueError(f"need at least two positive layer sizes, got {layer_sizes}")
    if activation not in HIDDEN_ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        if activation == "tanh":
            limit = np.sqrt(6.0 / (n_in + n_out))
        else:
            limit = np.sqrt(6.0 / n_in)
        weights.append(rng.uniform(-limit, limit, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return Mlp(sizes, weights, biases, activation)


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _act_grad(name, a):
    # derivative written in terms of the activation output
    if name == "tanh":
        return 1.0 - a * a
    return (a > 0).astype(a.dtype)


def forward(mlp: Mlp, x, return_cache: bool = False):
    """Evaluate the network on a batch ``x`` of shape ``(n, layer_sizes[0])``.

    With ``return_cache`` the list of layer inputs is returned as well, for
    use by :func:`backward`.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != mlp.layer_sizes[0]:
        raise ValueError(f"input width {x.shape[1]} != {mlp.layer_sizes[0]}")
    acts = [x]
    h = x
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        h = h @ w + b
        if i < last:
            h = _act(mlp.hidden_activation, h)
            acts.append(h)
    out = h[0] if squeeze else h
    if return_cache:
        return out, acts
    return out


def backward(mlp: Mlp, grad_out, cache) -> list[np.ndarray]:
    """Reverse-mode gradients given dLoss/dOutput and the forward cache.

    Returns gradients in the same order as :attr:`Mlp.params`.
    """
    g = np.asarray(grad_out, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if len(cache) != len(mlp.weights) or g.shape != (cache[0].shape[0], mlp.layer_sizes[-1]):
        raise ValueError("output gradient does not match the cached forward pass")
    grads: list[np.ndarray] = [None] * (2 * len(mlp.weights))
    for i in range(len(mlp.weights) - 1, -1, -1):
        a_in = cache[i]
        grads[2 * i] = a_in.T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        if i > 0:
            g = (g @ mlp.weights[i].T) * _act_grad(mlp.hidden_activation, a_in)
    return grads


def global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_grad_norm(grads, max_norm: float):
    """Rescale ``grads`` so their global L2 norm is at most ``max_norm``.

    Returns ``(grads, norm_before_clipping)``.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        grads = [g * scale for g in grads]
    return grads, norm


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, learning_rate=1e-3, **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params],
                   0, learning_rate, **kw)


def adam_step(params, grads, state: AdamState) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(grads) != len(state.m):
        raise ValueError("parameter, gradient and moment lists differ in length")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingError("non-finite gradient")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.t
    corr2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    return state


# -- persistence ---------------------------------------------------------------

def save_mlp(path, mlp: Mlp, metadata: dict | None = None) -> None:
    """Write the binary model file and, if given, a JSON metadata sidecar.

    Layout: magic, ``uint32`` header length, UTF-8 JSON header, then every
    parameter array flattened row-major as little-endian float64.
    """
    path = Path(path)
    header = json.dumps({
        "format_version": FORMAT_VERSION,
        "layer_sizes": mlp.layer_sizes,
        "hidden_activation": mlp.hidden_activation,
        "output_activation": mlp.output_activation,
        "dtype": "<f8",
    }, sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in mlp.params)
    path.write_bytes(FORMAT_MAGIC + struct.pack("<I", len(header)) + header + body)
    if metadata is not None:
        sidecar_path(path).write_text(json.dumps(metadata, indent=2, sort_keys=True) + "\n")


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def load_mlp(path) -> Mlp:
    raw = Path(path).read_bytes()
    n_magic = len(FORMAT_MAGIC)
    if raw[:n_magic] != FORMAT_MAGIC or len(raw) < n_magic + 4:
        raise ModelFormatError(f"{path}: not a model file")
    (hlen,) = struct.unpack("<I", raw[n_magic:n_magic + 4])
    start = n_magic + 4
    try:
        header = json.loads(raw[start:start + hlen].decode())
        sizes = [int(n) for n in header["layer_sizes"]]
        version = header["format_version"]
        hidden = header["hidden_activation"]
        output = header["output_activation"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: corrupted header ({exc})") from None
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if len(sizes) < 2 or min(sizes) < 1:
        raise ModelFormatError(f"{path}: invalid layer sizes {sizes}")
    body = raw[start + hlen:]
    if len(body) != 8 * count_params(sizes):
        raise ModelFormatError(f"{path}: expected {count_params(sizes)} parameters, "
                               f"found {len(body) / 8:g}")
    flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
    weights, biases, off = [], [], 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        weights.append(flat[off:off + n_in * n_out].reshape(n_in, n_out).copy())
        off += n_in * n_out
        biases.append(flat[off:off + n_out].copy())
        off += n_out
    try:
        return Mlp(sizes, weights, biases, hidden, output)
    except ValueError as exc:
        raise ModelFormatError(f"{path}: {exc}") from None


def load_metadata(path) -> dict:
    side = sidecar_path(path)
    if not side.exists():
        return {}
    try:
        return json.loads(side.read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{side}: unreadable metadata ({exc})") from None
