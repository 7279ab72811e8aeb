"""Layers, parameter bookkeeping, and the Adam optimizer.

Modules register parameters under stable dotted names; checkpoint
serialization sorts by those names, so naming is part of the on-disk
contract and must stay deterministic.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError


class Module:
    """Parameter container with stable dotted naming."""

    def __init__(self):
        self._params = {}
        self._subs = {}

    def param(self, name, value):
        t = Tensor(np.ascontiguousarray(value), requires_grad=True)
        self._params[name] = t
        return t

    def sub(self, name, module):
        self._subs[name] = module
        return module

    def named_parameters(self, prefix=""):
        out = {}
        for name, t in self._params.items():
            out[prefix + name] = t
        for name, m in self._subs.items():
            out.update(m.named_parameters(prefix + name + "."))
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def state_arrays(self):
        return {k: v.data for k, v in self.named_parameters().items()}

    def load_state(self, arrays):
        params = self.named_parameters()
        missing = sorted(set(params) - set(arrays))
        if missing:
            raise ConfigurationError(f"checkpoint missing parameters: {missing[:4]}")
        for name, t in params.items():
            src = arrays[name]
            if src.shape != t.data.shape:
                raise ConfigurationError(
                    f"shape mismatch for {name}: {src.shape} vs {t.data.shape}"
                )
            t.data = np.ascontiguousarray(src.astype(t.data.dtype, copy=False))

    def astype(self, dtype):
        for t in self.named_parameters().values():
            t.data = t.data.astype(dtype)
        return self


def he_normal(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Linear(Module):
    def __init__(self, n_in, n_out, rng, dtype=np.float32, scale=None):
        super().__init__()
        std = scale if scale is not None else np.sqrt(1.0 / n_in)
        self.w = self.param("w", (rng.standard_normal((n_in, n_out)) * std).astype(dtype))
        self.b = self.param("b", np.zeros(n_out, dtype=dtype))

    def __call__(self, x):
        return ad.matmul(x, self.w) + self.b


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel, rng, stride=1, padding=None, dtype=np.float32):
        super().__init__()
        if padding is None:
            padding = kernel // 2
        self.stride = stride
        self.padding = padding
        fan_in = c_in * kernel * kernel
        self.w = self.param("w", he_normal(rng, (c_out, c_in, kernel, kernel), fan_in, dtype))
        self.b = self.param("b", np.zeros(c_out, dtype=dtype))

    def __call__(self, x):
        out = ad.conv2d(x, self.w, stride=self.stride, padding=self.padding)
        return out + ad.reshape(self.b, (1, -1, 1, 1))


class LayerNorm(Module):
    def __init__(self, dim, dtype=np.float32, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.g = self.param("g", np.ones(dim, dtype=dtype))
        self.b = self.param("b", np.zeros(dim, dtype=dtype))

    def __call__(self, x):
        mu = ad.mean(x, axis=-1, keepdims=True)
        xc = x - mu
        var = ad.mean(xc * xc, axis=-1, keepdims=True)
        return xc / ad.sqrt(var + self.eps) * self.g + self.b


class Embedding(Module):
    def __init__(self, n, dim, rng, dtype=np.float32, std=0.02):
        super().__init__()
        self.table = self.param("table", (rng.standard_normal((n, dim)) * std).astype(dtype))

    def __call__(self, idx):
        return ad.embedding(self.table, idx)


class ResBlock(Module):
    """Two 3x3 convolutions with a residual skip, silu activations."""

    def __init__(self, channels, rng, dtype=np.float32):
        super().__init__()
        self.c1 = self.sub("c1", Conv2d(channels, channels, 3, rng, dtype=dtype))
        self.c2 = self.sub("c2", Conv2d(channels, channels, 3, rng, dtype=dtype))

    def __call__(self, x):
        h = self.c2(ad.silu(self.c1(ad.silu(x))))
        return x + h


class Adam:
    """Adam with fixed defaults (lr 2e-4, betas 0.9/0.95)."""

    def __init__(self, params, lr=2e-4, beta1=0.9, beta2=0.95, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data = p.data - (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
