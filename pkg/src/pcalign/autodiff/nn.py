"""Layer-level ops: linear, relu, point max-pool, batchnorm, dropout, losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, _accum, _finish, as_tensor, default_dtype


def linear(x, w, b) -> Tensor:
    """Affine map over the last axis: x @ W + b."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if w.data.ndim != 2 or b.data.shape != (w.data.shape[1],):
        raise ValueError(f"bad parameter shapes W{w.data.shape} b{b.data.shape}")
    if x.data.shape[-1] != w.data.shape[0]:
        raise ValueError(f"inner dimensions disagree: {x.data.shape} vs {w.data.shape}")
    out = Tensor._raw(x.data @ w.data + b.data)
    fan_in, fan_out = w.data.shape

    def backward():
        g = out.grad
        if x._traced:
            _accum(x, g @ w.data.T)
        if w._traced:
            _accum(w, x.data.reshape(-1, fan_in).T @ g.reshape(-1, fan_out))
        if b._traced:
            _accum(b, g.reshape(-1, fan_out).sum(axis=0))

    return _finish("linear", out, (x, w, b), backward)


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor._raw(np.maximum(x.data, 0))

    def backward():
        if x._traced:
            # subgradient 0 at exactly 0
            _accum(x, out.grad * (x.data > 0))

    return _finish("relu", out, (x,), backward)


def maxpool_points(x) -> Tensor:
    """Per-feature max over the point axis: (B, N, C) -> (B, C).

    Gradient routes to exactly one winner per (batch, feature); ties go to
    the lowest point index so gradients are deterministic.
    """
    x = as_tensor(x)
    if x.data.ndim != 3:
        raise ValueError(f"expected (B, N, C), got shape {x.data.shape}")
    nb, npts, nc = x.data.shape
    if npts < 1:
        raise ValueError("maxpool over an empty point axis")
    winners = np.argmax(x.data, axis=1)  # first occurrence = lowest index
    rows = np.arange(nb)[:, None]
    cols = np.arange(nc)[None, :]
    out = Tensor._raw(x.data[rows, winners, cols])

    def backward():
        if x._traced:
            g = np.zeros_like(x.data)
            g[rows, winners, cols] = out.grad
            _accum(x, g)

    return _finish("maxpool_points", out, (x,), backward)


@dataclass
class BatchNormState:
    """Learnable scale/shift plus running statistics for one feature axis.

    momentum is the effective decay D of the running average; the training
    loop re-sets it per epoch from its schedule.
    """

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.5
    eps: float = 1e-5

    @classmethod
    def create(cls, num_features: int, dtype=None) -> "BatchNormState":
        dt = dtype or default_dtype()
        return cls(
            gamma=Tensor(np.ones(num_features), requires_grad=True, dtype=dt),
            beta=Tensor(np.zeros(num_features), requires_grad=True, dtype=dt),
            running_mean=np.zeros(num_features, dtype=dt),
            running_var=np.ones(num_features, dtype=dt),
        )


def batchnorm(x, state: BatchNormState, mode: str = "train") -> Tensor:
    """Normalize over every axis but the last.

    train: batch statistics (biased variance), running stats updated as
    running <- D*running + (1-D)*batch.  infer: running statistics only.
    """
    x = as_tensor(x)
    gamma, beta = state.gamma, state.beta
    if mode == "train":
        if x.data.shape[0] < 2:
            raise ValueError("batchnorm train mode needs batch >= 2")
        axes = tuple(range(x.data.ndim - 1))
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        d = state.momentum
        state.running_mean = d * state.running_mean + (1.0 - d) * mu.astype(state.running_mean.dtype)
        state.running_var = d * state.running_var + (1.0 - d) * var.astype(state.running_var.dtype)
        inv = 1.0 / np.sqrt(var + state.eps)
        xhat = (x.data - mu) * inv
        out = Tensor._raw(gamma.data * xhat + beta.data)

        def backward():
            g = out.grad
            if gamma._traced:
                _accum(gamma, (g * xhat).sum(axis=axes))
            if beta._traced:
                _accum(beta, g.sum(axis=axes))
            if x._traced:
                gx = g * gamma.data
                # gradient through the batch statistics as well
                dx = (gx - gx.mean(axis=axes) - xhat * (gx * xhat).mean(axis=axes)) * inv
                _accum(x, dx)

        return _finish("batchnorm", out, (x, gamma, beta), backward)

    if mode != "infer":
        raise ValueError(f"unknown batchnorm mode {mode!r}")
    inv = 1.0 / np.sqrt(state.running_var + state.eps)
    xhat = (x.data - state.running_mean) * inv
    out = Tensor._raw(gamma.data * xhat + beta.data)

    def backward():
        g = out.grad
        if gamma._traced:
            axes = tuple(range(g.ndim - 1))
            _accum(gamma, (g * xhat).sum(axis=axes))
        if beta._traced:
            axes = tuple(range(g.ndim - 1))
            _accum(beta, g.sum(axis=axes))
        if x._traced:
            _accum(x, g * (gamma.data * inv))

    return _finish("batchnorm", out, (x, gamma, beta), backward)


def dropout(x, rate: float, mode: str, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero with probability rate, scale survivors."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if mode == "infer" or rate == 0.0:
        return x
    if mode != "train":
        raise ValueError(f"unknown dropout mode {mode!r}")
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype)
    scale = 1.0 / (1.0 - rate)
    out = Tensor._raw(x.data * keep * scale)

    def backward():
        if x._traced:
            _accum(x, out.grad * keep * scale)

    return _finish("dropout", out, (x,), backward)


def softmax_cross_entropy(logits, targets: np.ndarray) -> Tensor:
    """Per-row -log softmax(logits)[target], max-subtraction stabilized.

    Returns one loss per row; reduce with mean() as needed.
    """
    logits = as_tensor(logits)
    if logits.data.ndim != 2 or logits.data.shape[1] < 2:
        raise ValueError(f"expected (B, K) logits with K >= 2, got {logits.data.shape}")
    t = np.asarray(targets)
    nb, nk = logits.data.shape
    if t.shape != (nb,) or t.min() < 0 or t.max() >= nk:
        raise ValueError("targets must be valid class indices, one per row")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    sez = ez.sum(axis=1)
    rows = np.arange(nb)
    out = Tensor._raw(np.log(sez) - z[rows, t])

    def backward():
        if logits._traced:
            p = ez / sez[:, None]
            p[rows, t] -= 1.0
            _accum(logits, p * out.grad[:, None])

    return _finish("softmax_cross_entropy", out, (logits,), backward)


def huber(x, delta: float) -> Tensor:
    """Elementwise Huber: quadratic within delta, linear beyond."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    x = as_tensor(x)
    adata = np.abs(x.data)
    quad = adata <= delta
    out = Tensor._raw(np.where(quad, 0.5 * x.data * x.data, delta * adata - 0.5 * delta * delta))

    def backward():
        if x._traced:
            _accum(x, out.grad * np.clip(x.data, -delta, delta))

    return _finish("huber", out, (x,), backward)
