"""Small float64 MLP with hand-written backprop and Adam.

Parameters are a flat list ``[W1, b1, W2, b2, ...]`` with ``W`` shaped
``(out, in)``. Hidden layers use SiLU; the output layer is linear.
"""
import hashlib
import json
import math
import struct
from dataclasses import dataclass

import numpy as np

_MAGIC = b"YDGW1\n"


class Diverged(FloatingPointError):
    pass


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu(x):
    return x * _sigmoid(x)


def silu_grad(x):
    s = _sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


@dataclass(eq=False)
class MLP:
    sizes: tuple
    params: list

    @property
    def n_layers(self):
        return len(self.sizes) - 1

    def layer(self, i):
        return self.params[2 * i], self.params[2 * i + 1]

    def copy(self):
        return MLP(tuple(self.sizes), [p.copy() for p in self.params])


def mlp_init(sizes, rng):
    """Uniform fan-in init ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))`` for weights and biases."""
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        params.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        params.append(rng.uniform(-bound, bound, size=fan_out))
    return MLP(tuple(int(s) for s in sizes), params)


def mlp_forward(net, x):
    """Forward pass on a vector or a ``(batch, in)`` array; returns ``(out, cache)``."""
    h = np.asarray(x, dtype=float)
    if h.shape[-1] != net.sizes[0]:
        raise ValueError(f"input width {h.shape[-1]} != {net.sizes[0]}")
    inputs, pre = [], []
    for i in range(net.n_layers):
        W, b = net.layer(i)
        inputs.append(h)
        a = h @ W.T + b
        if i < net.n_layers - 1:
            pre.append(a)
            h = silu(a)
        else:
            h = a
    return h, (inputs, pre)


def mlp_backward(net, cache, grad_out):
    """Gradients of ``sum(out * grad_out)``; returns ``(param_grads, grad_input)``."""
    inputs, pre = cache
    g = np.asarray(grad_out, dtype=float)
    grads = [None] * len(net.params)
    for i in reversed(range(net.n_layers)):
        W, _ = net.layer(i)
        if i < net.n_layers - 1:
            g = g * silu_grad(pre[i])
        h = inputs[i]
        if g.ndim == 1:
            grads[2 * i] = np.outer(g, h)
            grads[2 * i + 1] = g.copy()
        else:
            grads[2 * i] = g.T @ h
            grads[2 * i + 1] = g.sum(axis=0)
        g = g @ W
    return grads, g


@dataclass
class AdamState:
    m: list
    v: list
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8

    @classmethod
    def for_params(cls, params, **hyper):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params],
                   **hyper)


def adam_step(params, grads, state):
    """In-place bias-corrected Adam update of ``params`` and ``state``."""
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise Diverged("diverged: non-finite gradient")
    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step_count
    c2 = 1.0 - b2 ** state.step_count
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps_hat)
    return params, state


def time_embed(t, dim, max_period=10_000.0):
    """Sinusoidal embedding ``[sin(t f_k), cos(t f_k)]`` with geometric ``f_k``.

    ``t`` may be an integer or an integer array; output has a trailing axis of ``dim``.
    """
    if dim % 2:
        raise ValueError("embedding width must be even")
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    ang = np.asarray(t, dtype=float)[..., None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


def _block(net):
    return b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in net.params)


def save_weights(path, net, header=None):
    """Write magic, a one-line JSON header, then the raw little-endian float64 block."""
    block = _block(net)
    head = dict(header or {})
    head["sizes"] = list(net.sizes)
    head["shapes"] = [list(p.shape) for p in net.params]
    head["n_params"] = len(block) // 8
    head["sha256"] = hashlib.sha256(block).hexdigest()
    text = json.dumps(head, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<Q", len(text)))
        f.write(text)
        f.write(block)


def load_weights(path):
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(_MAGIC):
        raise ValueError(f"{path}: not a weights file")
    off = len(_MAGIC)
    if len(raw) < off + 8:
        raise ValueError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<Q", raw[off:off + 8])
    off += 8
    try:
        head = json.loads(raw[off:off + hlen])
    except ValueError as e:
        raise ValueError(f"{path}: corrupt header") from e
    block = raw[off + hlen:]
    shapes = [tuple(s) for s in head["shapes"]]
    if len(block) != 8 * sum(math.prod(s) for s in shapes) or len(block) // 8 != head["n_params"]:
        raise ValueError(f"{path}: parameter block does not match declared shapes")
    if hashlib.sha256(block).hexdigest() != head["sha256"]:
        raise ValueError(f"{path}: parameter checksum mismatch")
    flat = np.frombuffer(block, dtype="<f8").astype(float)
    params, i = [], 0
    for s in shapes:
        n = math.prod(s)
        params.append(flat[i:i + n].reshape(s).copy())
        i += n
    return MLP(tuple(head["sizes"]), params), head
