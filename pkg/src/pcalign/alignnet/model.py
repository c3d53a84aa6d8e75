"""Siamese canonicalization network and relative-pose head.

One branch normalizes a cloud toward a canonical pose in four steps:
centroid shift, predicted coarse center shift, predicted fine center
shift, rotation by the negated predicted orientation.  The composed
normalization N is a ground transform, so the relative pose of a pair
factors as invert(N2) . T_f . N1 with T_f decoded from one dense head
on both branch embeddings.

Only the xy coordinates are ever shifted: the height channel carries
absolute above-ground information, and a ground transform could not
represent a z shift anyway.

All predicted quantities stay in the autodiff graph (the rotation uses
the residual of the argmax bin, which is locally constant almost
everywhere), so the staged loss differentiates through the whole
pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..autodiff import (
    BatchNormState,
    Tensor,
    batchnorm,
    concat,
    cos,
    default_dtype,
    dropout,
    linear,
    load_checkpoint,
    maxpool_points,
    relu,
    reshape,
    save_checkpoint,
    sin,
)
from ..geom import GroundTransform, compose, invert
from .angles import decode_angle


@dataclass(frozen=True)
class ModelConfig:
    bins: int = 50
    coarse_point_widths: tuple = (64, 128, 256)
    fine_point_widths: tuple = (64, 128, 512)
    embed_point_widths: tuple = (64, 128, 1024)
    head_widths: tuple = (512, 256)
    dropout_rate: float = 0.7

    def __post_init__(self):
        if self.bins < 2:
            raise ValueError(f"need at least 2 angle bins, got {self.bins}")
        for name in ("coarse_point_widths", "fine_point_widths",
                     "embed_point_widths", "head_widths"):
            widths = getattr(self, name)
            if len(widths) == 0 or any(int(w) < 1 for w in widths):
                raise ValueError(f"{name} must be nonempty positive ints, got {widths}")
            object.__setattr__(self, name, tuple(int(w) for w in widths))
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def pose_head_width(self) -> int:
        """Output width of a head predicting a translation and an angle."""
        return 2 + 2 * self.bins

    def to_dict(self) -> dict:
        return {
            "bins": self.bins,
            "coarse_point_widths": list(self.coarse_point_widths),
            "fine_point_widths": list(self.fine_point_widths),
            "embed_point_widths": list(self.embed_point_widths),
            "head_widths": list(self.head_widths),
            "dropout_rate": self.dropout_rate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            bins=int(d["bins"]),
            coarse_point_widths=tuple(d["coarse_point_widths"]),
            fine_point_widths=tuple(d["fine_point_widths"]),
            embed_point_widths=tuple(d["embed_point_widths"]),
            head_widths=tuple(d["head_widths"]),
            dropout_rate=float(d["dropout_rate"]),
        )


def _uniform(rng, bound, shape, dtype):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class _Stack:
    """linear -> batchnorm -> relu hidden layers; shared across points when
    the input carries a point axis."""

    def __init__(self, name, in_dim, widths, rng, dtype):
        self.name = name
        self.layers = []
        fan = in_dim
        for k, width in enumerate(widths):
            bound = 1.0 / math.sqrt(fan)
            w = Tensor(_uniform(rng, bound, (fan, width), dtype),
                       requires_grad=True, name=f"{name}.{k}.w", dtype=dtype)
            b = Tensor(_uniform(rng, bound, (width,), dtype),
                       requires_grad=True, name=f"{name}.{k}.b", dtype=dtype)
            bn = BatchNormState.create(width, dtype=dtype)
            bn.gamma.name = f"{name}.{k}.gamma"
            bn.beta.name = f"{name}.{k}.beta"
            self.layers.append((w, b, bn))
            fan = width

    @property
    def out_dim(self):
        return self.layers[-1][0].shape[1]

    def forward(self, x, mode):
        for w, b, bn in self.layers:
            x = relu(batchnorm(linear(x, w, b), bn, mode))
        return x

    def parameters(self):
        out = {}
        for w, b, bn in self.layers:
            for t in (w, b, bn.gamma, bn.beta):
                out[t.name] = t
        return out

    def bn_states(self):
        return [bn for _, _, bn in self.layers]

    def state_arrays(self):
        out = {}
        for k, (w, b, bn) in enumerate(self.layers):
            out[w.name] = w.data
            out[b.name] = b.data
            out[bn.gamma.name] = bn.gamma.data
            out[bn.beta.name] = bn.beta.data
            out[f"{self.name}.{k}.running_mean"] = bn.running_mean
            out[f"{self.name}.{k}.running_var"] = bn.running_var
        return out

    def load_arrays(self, arrays):
        for k, (w, b, bn) in enumerate(self.layers):
            w.data = np.ascontiguousarray(arrays[w.name], dtype=w.data.dtype)
            b.data = np.ascontiguousarray(arrays[b.name], dtype=b.data.dtype)
            bn.gamma.data = np.ascontiguousarray(arrays[bn.gamma.name],
                                                 dtype=bn.gamma.data.dtype)
            bn.beta.data = np.ascontiguousarray(arrays[bn.beta.name],
                                                dtype=bn.beta.data.dtype)
            bn.running_mean = np.ascontiguousarray(
                arrays[f"{self.name}.{k}.running_mean"], dtype=bn.running_mean.dtype)
            bn.running_var = np.ascontiguousarray(
                arrays[f"{self.name}.{k}.running_var"], dtype=bn.running_var.dtype)


class _Head:
    """Dense head: hidden stack, dropout after the last hidden activation,
    then a plain linear output layer."""

    def __init__(self, name, in_dim, widths, out_dim, dropout_rate, rng, dtype):
        self.stack = _Stack(name, in_dim, widths, rng, dtype)
        self.dropout_rate = dropout_rate
        bound = 1.0 / math.sqrt(widths[-1])
        self.w_out = Tensor(_uniform(rng, bound, (widths[-1], out_dim), dtype),
                            requires_grad=True, name=f"{name}.out.w", dtype=dtype)
        self.b_out = Tensor(_uniform(rng, bound, (out_dim,), dtype),
                            requires_grad=True, name=f"{name}.out.b", dtype=dtype)

    def forward(self, x, mode, rng):
        x = self.stack.forward(x, mode)
        x = dropout(x, self.dropout_rate, mode, rng)
        return linear(x, self.w_out, self.b_out)

    def parameters(self):
        out = self.stack.parameters()
        out[self.w_out.name] = self.w_out
        out[self.b_out.name] = self.b_out
        return out

    def bn_states(self):
        return self.stack.bn_states()

    def state_arrays(self):
        out = self.stack.state_arrays()
        out[self.w_out.name] = self.w_out.data
        out[self.b_out.name] = self.b_out.data
        return out

    def load_arrays(self, arrays):
        self.stack.load_arrays(arrays)
        self.w_out.data = np.ascontiguousarray(arrays[self.w_out.name],
                                               dtype=self.w_out.data.dtype)
        self.b_out.data = np.ascontiguousarray(arrays[self.b_out.name],
                                               dtype=self.b_out.data.dtype)


class AlignNetParams:
    """All learnable state of the aligner, one shared set for both branches."""

    def __init__(self, config: Optional[ModelConfig] = None,
                 rng: Optional[np.random.Generator] = None, dtype=None):
        self.config = config or ModelConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        dt = dtype or default_dtype()
        cfg = self.config
        out = cfg.pose_head_width
        self.coarse_pn = _Stack("coarse.pn", 3, cfg.coarse_point_widths, rng, dt)
        self.coarse_head = _Head("coarse.head", self.coarse_pn.out_dim,
                                 cfg.head_widths, 2, cfg.dropout_rate, rng, dt)
        self.fine_pn = _Stack("fine.pn", 3, cfg.fine_point_widths, rng, dt)
        self.fine_head = _Head("fine.head", self.fine_pn.out_dim,
                               cfg.head_widths, out, cfg.dropout_rate, rng, dt)
        self.embed_pn = _Stack("embed.pn", 3, cfg.embed_point_widths, rng, dt)
        self.final_head = _Head("final.head", 2 * self.embed_pn.out_dim,
                                cfg.head_widths, out, cfg.dropout_rate, rng, dt)

    def _parts(self):
        return (self.coarse_pn, self.coarse_head, self.fine_pn,
                self.fine_head, self.embed_pn, self.final_head)

    def parameters(self) -> dict:
        out = {}
        for part in self._parts():
            out.update(part.parameters())
        return out

    def bn_states(self):
        out = []
        for part in self._parts():
            out.extend(part.bn_states())
        return out

    def set_bn_momentum(self, momentum: float) -> None:
        for bn in self.bn_states():
            bn.momentum = momentum

    def state_dict(self) -> dict:
        out = {}
        for part in self._parts():
            out.update(part.state_arrays())
        return out

    def load_state_dict(self, arrays: dict) -> None:
        for part in self._parts():
            part.load_arrays(arrays)

    def save(self, path, extra_config: Optional[dict] = None) -> None:
        config = {"model": self.config.to_dict()}
        if extra_config:
            config.update(extra_config)
        save_checkpoint(path, self.state_dict(), config=config)

    @classmethod
    def load(cls, path, dtype=None):
        """Returns (params, config dict from the checkpoint header)."""
        arrays, config = load_checkpoint(path)
        params = cls(ModelConfig.from_dict(config["model"]), dtype=dtype)
        params.load_state_dict(arrays)
        return params, config


@dataclass
class BranchOutput:
    """Everything one canonicalization branch produces for a batch."""

    centroid: np.ndarray            # (B, 2) data-level xy centroid
    coarse_center: Tensor           # (B, 2)
    fine_center: Tensor             # (B, 2)
    angle_logits: Tensor            # (B, bins)
    angle_residuals: Tensor         # (B, bins)
    alpha: Tensor                   # (B,) decoded orientation, in-graph
    embedding: Tensor               # (B, embed_dim)
    canonical_transforms: tuple     # B GroundTransforms, scan -> canonical


@dataclass
class PairOutput:
    branch1: BranchOutput
    branch2: BranchOutput
    translation: Tensor             # (B, 2) final-head translation
    angle_logits: Tensor            # (B, bins)
    angle_residuals: Tensor         # (B, bins)
    final_transforms: tuple         # B decoded T_f GroundTransforms
    align_transforms: tuple         # B invert(N2) . T_f . N1


def _as_batch(cloud, dtype):
    arr = np.asarray(cloud, dtype=dtype)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[1] < 1:
        raise ValueError(f"expected (B, n, 3) or (n, 3) points, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("point cloud contains non-finite values")
    # canonical point order and layout.  Pooling is value-invariant, but
    # BLAS row results and pairwise sums shift by ulps with row position
    # and memory order, so true bit-for-bit permutation invariance needs
    # one fixed order per point set on a C-contiguous block.
    out = np.empty(arr.shape, dtype=arr.dtype)
    for i in range(arr.shape[0]):
        order = np.lexsort((arr[i, :, 2], arr[i, :, 1], arr[i, :, 0]))
        out[i] = arr[i, order]
    return out


def _sorted_centroid_xy(points):
    """Per-cloud xy means, summed in sorted order so any permutation of the
    points produces bit-identical results."""
    n = points.shape[1]
    sx = np.sort(points[:, :, 0], axis=1).sum(axis=1)
    sy = np.sort(points[:, :, 1], axis=1).sum(axis=1)
    return np.stack([sx, sy], axis=1) / n


def _shift_xy(x, center):
    """Subtract an in-graph (B, 2) center from the xy channels of (B, n, 3)."""
    nb = center.shape[0]
    zeros = Tensor(np.zeros((nb, 1), dtype=center.data.dtype))
    return x - reshape(concat([center, zeros], axis=1), (nb, 1, 3))


def _decoded_alpha(logits, residuals, bins):
    """In-graph angle decode: the argmax bin index is data, the residual
    keeps its gradient."""
    nb = logits.shape[0]
    width = 2.0 * math.pi / bins
    idx = np.argmax(logits.data, axis=1)
    picked = residuals[np.arange(nb), idx]
    # Tensor on the left so the graph op, not ndarray broadcasting, handles +.
    # (idx / bins) * 2pi rounds once, matching decode_angle bit for bit.
    return picked * (width / 2.0) + (idx / bins) * (2.0 * math.pi), idx


def canonical_forward(params: AlignNetParams, cloud, mode: str = "infer",
                      rng: Optional[np.random.Generator] = None) -> BranchOutput:
    """Run one branch: normalize toward canonical pose and embed.

    cloud: (B, n, 3) or (n, 3).  In train mode an rng is required for
    dropout and batch statistics are updated.
    """
    cfg = params.config
    pts = _as_batch(cloud, default_dtype())
    if mode == "train" and rng is None:
        raise ValueError("train mode needs an rng for dropout")
    nb = pts.shape[0]

    centroid = _sorted_centroid_xy(pts)
    shift0 = np.concatenate([centroid, np.zeros((nb, 1), pts.dtype)], axis=1)
    x1 = Tensor(pts - shift0[:, None, :])

    g = maxpool_points(params.coarse_pn.forward(x1, mode))
    coarse = params.coarse_head.forward(g, mode, rng)

    x2 = _shift_xy(x1, coarse)
    g = maxpool_points(params.fine_pn.forward(x2, mode))
    fine_out = params.fine_head.forward(g, mode, rng)
    fine = fine_out[:, 0:2]
    logits = fine_out[:, 2:2 + cfg.bins]
    residuals = fine_out[:, 2 + cfg.bins:2 + 2 * cfg.bins]

    alpha, _ = _decoded_alpha(logits, residuals, cfg.bins)

    x3 = _shift_xy(x2, fine)
    xs = x3[:, :, 0]
    ys = x3[:, :, 1]
    zs = x3[:, :, 2]
    ca = reshape(cos(alpha), (nb, 1))
    sa = reshape(sin(alpha), (nb, 1))
    # rotation by -alpha: R(-a) = [[cos a, sin a], [-sin a, cos a]]
    xr = ca * xs + sa * ys
    yr = ca * ys - sa * xs
    npts = pts.shape[1]
    x4 = concat([reshape(xr, (nb, npts, 1)), reshape(yr, (nb, npts, 1)),
                 reshape(zs, (nb, npts, 1))], axis=2)

    embedding = maxpool_points(params.embed_pn.forward(x4, mode))

    shift_total = centroid + coarse.data.astype(np.float64) + fine.data.astype(np.float64)
    transforms = tuple(
        compose(GroundTransform(tx=0.0, ty=0.0, yaw=-float(alpha.data[i])),
                GroundTransform(tx=-float(shift_total[i, 0]),
                                ty=-float(shift_total[i, 1]), yaw=0.0))
        for i in range(nb))

    return BranchOutput(centroid=centroid, coarse_center=coarse, fine_center=fine,
                        angle_logits=logits, angle_residuals=residuals, alpha=alpha,
                        embedding=embedding, canonical_transforms=transforms)


def _slice_branch(out: BranchOutput, lo: int, hi: int) -> BranchOutput:
    sl = slice(lo, hi)
    return BranchOutput(
        centroid=out.centroid[sl],
        coarse_center=out.coarse_center[sl],
        fine_center=out.fine_center[sl],
        angle_logits=out.angle_logits[sl],
        angle_residuals=out.angle_residuals[sl],
        alpha=out.alpha[sl],
        embedding=out.embedding[sl],
        canonical_transforms=out.canonical_transforms[lo:hi],
    )


def forward_pair(params: AlignNetParams, cloud1, cloud2, mode: str = "infer",
                 rng: Optional[np.random.Generator] = None) -> PairOutput:
    """Both branches plus the final head.

    The two clouds run through the shared branch as one concatenated
    batch, so train mode performs exactly one batchnorm update per layer
    per step and both branches see identical batch statistics.
    """
    cfg = params.config
    dt = default_dtype()
    c1 = _as_batch(cloud1, dt)
    c2 = _as_batch(cloud2, dt)
    if c1.shape != c2.shape:
        raise ValueError(f"pair clouds must share a shape, got {c1.shape} vs {c2.shape}")
    nb = c1.shape[0]

    both = canonical_forward(params, np.concatenate([c1, c2], axis=0), mode, rng)
    b1 = _slice_branch(both, 0, nb)
    b2 = _slice_branch(both, nb, 2 * nb)

    feat = concat([b1.embedding, b2.embedding], axis=1)
    out = params.final_head.forward(feat, mode, rng)
    translation = out[:, 0:2]
    logits = out[:, 2:2 + cfg.bins]
    residuals = out[:, 2 + cfg.bins:2 + 2 * cfg.bins]

    t_data = translation.data.astype(np.float64)
    finals = tuple(
        GroundTransform(tx=float(t_data[i, 0]), ty=float(t_data[i, 1]),
                        yaw=decode_angle(logits.data[i], residuals.data[i]))
        for i in range(nb))
    aligns = tuple(
        compose(invert(b2.canonical_transforms[i]),
                compose(finals[i], b1.canonical_transforms[i]))
        for i in range(nb))

    return PairOutput(branch1=b1, branch2=b2, translation=translation,
                      angle_logits=logits, angle_residuals=residuals,
                      final_transforms=finals, align_transforms=aligns)


def align(params: AlignNetParams, cloud1, cloud2):
    """Relative ground transforms mapping cloud-1 points onto cloud-2's
    frame, one per batch row.  Pure inference: batch statistics frozen,
    dropout off."""
    return forward_pair(params, cloud1, cloud2, mode="infer").align_transforms
