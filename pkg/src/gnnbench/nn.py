"""Parameter containers and the small building blocks every model shares."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ValidationError, VocabularyError
from .tensor import Tensor, apply_op, is_recording


class Module:
    """Minimal parameter container.

    Parameters are ``requires_grad`` tensors found (recursively) in instance
    attributes, including lists/tuples of sub-modules. Attribute insertion
    order fixes the parameter order, so construction order must be
    deterministic for seeded runs to be reproducible.
    """

    buffer_names = ()

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            yield from _walk_params(path, value)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_modules(self, prefix=""):
        yield prefix.rstrip("."), self
        for name, value in vars(self).items():
            yield from _walk_modules(f"{prefix}{name}", value)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        for mod_name, mod in self.named_modules():
            for buf in mod.buffer_names:
                key = f"{mod_name}.{buf}" if mod_name else buf
                state[key] = np.array(getattr(mod, buf), copy=True)
        return state

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        buffers = {}
        for mod_name, mod in self.named_modules():
            for buf in mod.buffer_names:
                key = f"{mod_name}.{buf}" if mod_name else buf
                buffers[key] = (mod, buf)
        for key, value in state.items():
            if key in params:
                params[key].data = np.array(value, dtype=np.float64, copy=True)
            elif key in buffers:
                mod, buf = buffers[key]
                setattr(mod, buf, np.array(value, dtype=np.float64, copy=True))
            else:
                raise ValidationError(f"unexpected state entry {key!r}")
        missing = set(params) - set(state)
        if missing:
            raise ValidationError(f"state dict is missing {sorted(missing)[:3]}...")


def _walk_params(path, value):
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield path, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=path + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk_params(f"{path}.{i}", item)


def _walk_modules(path, value):
    if isinstance(value, Module):
        yield from value.named_modules(prefix=path + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk_modules(f"{path}.{i}", item)


def uniform_init(rng, fan_in, shape):
    """Weights ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)); the package-wide rule."""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True):
        self.weight = T.parameter(uniform_init(rng, d_in, (d_in, d_out)))
        self.bias = T.parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x):
        out = T.matmul(x, self.weight)
        if self.bias is not None:
            out = T.add(out, self.bias)
        return out


class Embedding(Module):
    """Lookup table for categorical codes; rows act like a one-hot linear map."""

    def __init__(self, vocab_size, dim, rng):
        self.vocab_size = int(vocab_size)
        self.table = T.parameter(uniform_init(rng, vocab_size, (vocab_size, dim)))

    def __call__(self, codes):
        codes = np.asarray(codes, dtype=np.int64)
        if codes.size and (codes.min() < 0 or codes.max() >= self.vocab_size):
            raise VocabularyError(
                f"categorical code outside vocabulary of size {self.vocab_size}"
            )
        return T.gather_rows(self.table, codes)


class MLP(Module):
    """Linear stack with ReLU between layers and none after the last."""

    def __init__(self, dims, rng, bias=True):
        self.layers = [Linear(a, b, rng, bias=bias) for a, b in zip(dims[:-1], dims[1:])]

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i + 1 < len(self.layers):
                x = T.relu(x)
        return x


class BatchNorm(Module):
    """Per-feature batch normalization with running statistics.

    Training mode normalizes by batch moments and updates the running
    estimates (unbiased variance); inference mode is a fixed affine map.
    """

    buffer_names = ("running_mean", "running_var")

    def __init__(self, dim, momentum=0.1, eps=1e-5):
        self.gamma = T.parameter(np.ones(dim))
        self.beta = T.parameter(np.zeros(dim))
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x, training=None):
        return batchnorm(x, self, training=training)


def batchnorm(x, state, training=None):
    """Normalize rows of ``x`` (N x d) using ``state``; see BatchNorm."""
    x = T.as_tensor(x)
    if training is None:
        training = is_recording()
    n = x.shape[0]
    gamma, beta = state.gamma, state.beta

    if not training:
        inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x.data - state.running_mean) * inv_std
        out_data = gamma.data * xhat + beta.data

        def bw(g, needs):
            dx = g * (gamma.data * inv_std) if needs[0] else None
            dgamma = (g * xhat).sum(axis=0) if needs[1] else None
            dbeta = g.sum(axis=0) if needs[2] else None
            return dx, dgamma, dbeta

        return apply_op("batchnorm_eval", out_data, (x, gamma, beta), bw)

    if n == 0:
        raise ValidationError("batchnorm cannot run on an empty batch in training mode")
    mean = x.data.mean(axis=0)
    var = x.data.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mean) * inv_std
    out_data = gamma.data * xhat + beta.data

    m = state.momentum
    unbiased = var * n / (n - 1) if n > 1 else var
    state.running_mean = (1 - m) * state.running_mean + m * mean
    state.running_var = (1 - m) * state.running_var + m * unbiased

    def bw(g, needs):
        if needs[0]:
            dxhat = g * gamma.data
            dx = inv_std / n * (
                n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
            )
        else:
            dx = None
        dgamma = (g * xhat).sum(axis=0) if needs[1] else None
        dbeta = g.sum(axis=0) if needs[2] else None
        return dx, dgamma, dbeta

    return apply_op("batchnorm", out_data, (x, gamma, beta), bw)
