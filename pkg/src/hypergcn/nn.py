"""Minimal layer toolkit with explicit backward passes.

Feature maps use the ``(batch, channels, frames, joints)`` layout.  Every
layer caches what its backward pass needs during ``forward`` and accumulates
parameter gradients into ``self.grads`` during ``backward``.
"""
from __future__ import annotations

import numpy as np

from .errors import ShapeMismatch


def he_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, shape)


class Module:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.children: dict[str, Module] = {}
        self.no_decay: set[str] = set()
        self.training = True

    def add_param(self, name, value, decay=True):
        self.params[name] = np.asarray(value, dtype=np.float64)
        self.grads[name] = np.zeros_like(self.params[name])
        if not decay:
            self.no_decay.add(name)
        return self.params[name]

    def add_child(self, name, module):
        self.children[name] = module
        return module

    def named_modules(self, prefix=""):
        yield prefix, self
        for name, child in self.children.items():
            yield from child.named_modules(f"{prefix}{name}.")

    def named_parameters(self):
        """Yield ``(full_name, module, local_name)`` in deterministic order."""
        for prefix, mod in self.named_modules():
            for name in mod.params:
                yield prefix + name, mod, name

    def parameters(self) -> dict[str, np.ndarray]:
        return {full: mod.params[name] for full, mod, name in self.named_parameters()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {full: mod.grads[name] for full, mod, name in self.named_parameters()}

    def decay_mask(self) -> dict[str, bool]:
        return {full: name not in mod.no_decay for full, mod, name in self.named_parameters()}

    def zero_grad(self):
        for _, mod in self.named_modules():
            for name, p in mod.params.items():
                mod.grads[name] = np.zeros_like(p)

    def train(self, mode=True):
        for _, mod in self.named_modules():
            mod.training = mode
        return self

    def eval(self):
        return self.train(False)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, mod in self.named_modules():
            for name, p in mod.params.items():
                out[prefix + name] = p
            for name, b in mod.buffers.items():
                out[prefix + name] = b
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = self.state_dict()
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)}, unexpected={sorted(unexpected)}")
        for prefix, mod in self.named_modules():
            for store in (mod.params, mod.buffers):
                for name in store:
                    value = np.asarray(state[prefix + name], dtype=np.float64)
                    if value.shape != store[name].shape:
                        raise ShapeMismatch(f"{prefix + name}: expected {store[name].shape}, got {value.shape}")
                    store[name] = value.copy()


class Conv1x1(Module):
    """Pointwise channel map, optionally subsampling frames by ``stride``."""

    def __init__(self, cin, cout, stride=1, bias=True, rng=None):
        super().__init__()
        rng = np.random.default_rng() if rng is None else rng
        self.cin, self.cout, self.stride = cin, cout, stride
        self.add_param("weight", he_uniform(rng, (cin, cout), cin))
        self.has_bias = bias
        if bias:
            self.add_param("bias", np.zeros(cout))

    def forward(self, x):
        if x.shape[1] != self.cin:
            raise ShapeMismatch(f"expected {self.cin} channels, got {x.shape[1]}")
        xs = x[:, :, ::self.stride]
        B, C, T, V = xs.shape
        flat = xs.reshape(B, C, T * V)
        y = self.params["weight"].T @ flat
        if self.has_bias:
            y = y + self.params["bias"][:, None]
        self._cache = (x.shape, flat, (T, V))
        return y.reshape(B, self.cout, T, V)

    def backward(self, dy):
        xshape, flat, (T, V) = self._cache
        B = dy.shape[0]
        dflat = dy.reshape(B, self.cout, T * V)
        self.grads["weight"] += np.einsum("bct,bot->co", flat, dflat)
        if self.has_bias:
            self.grads["bias"] += dflat.sum(axis=(0, 2))
        dxs = (self.params["weight"] @ dflat).reshape(B, self.cin, T, V)
        if self.stride == 1:
            return dxs
        dx = np.zeros(xshape)
        dx[:, :, ::self.stride] = dxs
        return dx

    def flops(self, T_in, V):
        T = -(-T_in // self.stride)
        return 2 * self.cin * self.cout * T * V


class BatchNorm(Module):
    """Batch normalization over (batch, frames, joints) per channel."""

    def __init__(self, C, eps=1e-5, momentum=0.1):
        super().__init__()
        self.eps, self.momentum = eps, momentum
        self.add_param("gain", np.ones(C), decay=False)
        self.add_param("bias", np.zeros(C), decay=False)
        self.buffers["running_mean"] = np.zeros(C)
        self.buffers["running_var"] = np.ones(C)

    def forward(self, x):
        g = self.params["gain"][None, :, None, None]
        b = self.params["bias"][None, :, None, None]
        if self.training:
            mu = x.mean(axis=(0, 2, 3))
            xc = x - mu[None, :, None, None]
            var = (xc * xc).mean(axis=(0, 2, 3))
            n = x.size // x.shape[1]
            m = self.momentum
            self.buffers["running_mean"] = (1 - m) * self.buffers["running_mean"] + m * mu
            unbiased = var * n / max(n - 1, 1)
            self.buffers["running_var"] = (1 - m) * self.buffers["running_var"] + m * unbiased
        else:
            mu, var = self.buffers["running_mean"], self.buffers["running_var"]
            xc = x - mu[None, :, None, None]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * inv_std[None, :, None, None]
        self._cache = (xhat, inv_std, self.training)
        return g * xhat + b

    def backward(self, dy):
        xhat, inv_std, training = self._cache
        self.grads["gain"] += np.sum(dy * xhat, axis=(0, 2, 3))
        self.grads["bias"] += dy.sum(axis=(0, 2, 3))
        dxhat = dy * self.params["gain"][None, :, None, None]
        s = inv_std[None, :, None, None]
        if not training:
            return dxhat * s
        mean_d = dxhat.mean(axis=(0, 2, 3), keepdims=True)
        mean_dx = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
        return s * (dxhat - mean_d - xhat * mean_dx)


class ReLU(Module):
    def __init__(self, enabled=True):
        super().__init__()
        self.enabled = enabled

    def forward(self, x):
        if not self.enabled:
            return x
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dy):
        if not self.enabled:
            return dy
        return dy * self._mask


def _out_len(T, stride):
    return -(-T // stride)


class TemporalConv(Module):
    """Per-joint dilated convolution along frames with length-preserving zero padding."""

    def __init__(self, C, kernel=5, dilation=1, stride=1, rng=None):
        super().__init__()
        rng = np.random.default_rng() if rng is None else rng
        if (kernel - 1) * dilation % 2:
            raise ValueError("kernel span must be odd for symmetric padding")
        self.C, self.k, self.d, self.stride = C, kernel, dilation, stride
        self.pad = (kernel - 1) * dilation // 2
        self.add_param("weight", he_uniform(rng, (C, C, kernel), C * kernel))
        self.add_param("bias", np.zeros(C))

    def _taps(self, T):
        To = _out_len(T, self.stride)
        return To, [slice(j * self.d, j * self.d + self.stride * (To - 1) + 1, self.stride)
                    for j in range(self.k)]

    def forward(self, x):
        B, C, T, V = x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (self.pad, self.pad), (0, 0)))
        To, taps = self._taps(T)
        W = self.params["weight"]
        y = np.zeros((B, C, To * V))
        cols = []
        for j, sl in enumerate(taps):
            col = xp[:, :, sl].reshape(B, C, To * V)
            cols.append(col)
            y += W[:, :, j] @ col
        y += self.params["bias"][:, None]
        self._cache = (x.shape, xp.shape, cols, To)
        return y.reshape(B, C, To, V)

    def backward(self, dy):
        xshape, xpshape, cols, To = self._cache
        B, C, T, V = xshape
        W = self.params["weight"]
        dflat = dy.reshape(B, C, To * V)
        _, taps = self._taps(T)
        dxp = np.zeros(xpshape)
        for j, sl in enumerate(taps):
            self.grads["weight"][:, :, j] += np.einsum("bot,bct->oc", dflat, cols[j])
            dxp[:, :, sl] += (W[:, :, j].T @ dflat).reshape(B, C, To, V)
        self.grads["bias"] += dflat.sum(axis=(0, 2))
        return dxp[:, :, self.pad:self.pad + T]

    def flops(self, T_in, V):
        return 2 * self.C * self.C * self.k * _out_len(T_in, self.stride) * V


class TemporalMaxPool(Module):
    def __init__(self, window=3, stride=1):
        super().__init__()
        self.window, self.stride = window, stride
        self.pad = (window - 1) // 2

    def forward(self, x):
        B, C, T, V = x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (self.pad, self.pad), (0, 0)), constant_values=-np.inf)
        To = _out_len(T, self.stride)
        stack = np.stack([xp[:, :, j:j + self.stride * (To - 1) + 1:self.stride]
                          for j in range(self.window)], axis=2)
        arg = stack.argmax(axis=2)
        self._cache = (x.shape, xp.shape, arg, To)
        return np.take_along_axis(stack, arg[:, :, None], axis=2)[:, :, 0]

    def backward(self, dy):
        xshape, xpshape, arg, To = self._cache
        T = xshape[2]
        dxp = np.zeros(xpshape)
        for j in range(self.window):
            sl = slice(j, j + self.stride * (To - 1) + 1, self.stride)
            dxp[:, :, sl] += np.where(arg == j, dy, 0.0)
        return dxp[:, :, self.pad:self.pad + T]


class Linear(Module):
    def __init__(self, cin, cout, rng=None):
        super().__init__()
        rng = np.random.default_rng() if rng is None else rng
        bound = 1.0 / np.sqrt(cin)
        self.cin, self.cout = cin, cout
        self.add_param("weight", rng.uniform(-bound, bound, (cin, cout)))
        self.add_param("bias", np.zeros(cout))

    def forward(self, x):
        self._x = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, dy):
        self.grads["weight"] += self._x.T @ dy
        self.grads["bias"] += dy.sum(axis=0)
        return dy @ self.params["weight"].T

    def flops(self):
        return 2 * self.cin * self.cout
