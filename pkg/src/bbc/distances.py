"""Distances between a clean input and its adversary.

All functions accept either a single sample or a batch whose leading axis
indexes samples, and they work on tracked ``Tensor`` values so that chains
can differentiate through them.  A single sample returns a 0-d tensor, a
batch returns shape ``(B,)``.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .numcore import LayerSpec, ParameterSet, Tensor, as_tensor, concat, mlp_trace

KINDS = ("euclidean_sq", "perceptual", "motion_manifold")


def _pair(x, x_adv) -> tuple[Tensor, Tensor]:
    x, x_adv = as_tensor(x), as_tensor(x_adv)
    if x.shape != x_adv.shape:
        raise DimensionError(f"distance operands differ in shape: {x.shape} vs {x_adv.shape}")
    return x, x_adv


def euclidean_sq(x, x_adv) -> Tensor:
    """Sum of squared coordinate differences."""
    x, x_adv = _pair(x, x_adv)
    diff = (x - x_adv).square()
    if x.ndim <= 1:
        return diff.sum()
    return diff.reshape(x.shape[0], -1).sum(axis=1)


# -- perceptual --------------------------------------------------------------

@dataclass
class FeatureExtractor:
    """Frozen feature network with tapped layers.

    ``layer_dims[i]`` is the ``(W, H, C)`` layout of tapped layer
    ``tap_layers[i]``; an MLP layer of width C is ``(1, 1, C)``.
    """
    params: ParameterSet
    spec: Sequence[LayerSpec]
    tap_layers: Sequence[int]
    layer_weights: Sequence[float] | None = None
    layer_dims: Sequence[tuple[int, int, int]] | None = None

    def __post_init__(self):
        if not self.tap_layers:
            raise ConfigError("feature extractor needs at least one tapped layer")
        L = len(self.tap_layers)
        if self.layer_weights is None:
            self.layer_weights = [1.0 / L] * L
        if self.layer_dims is None:
            self.layer_dims = [(1, 1, self.spec[i].out_dim) for i in self.tap_layers]
        if len(self.layer_weights) != L or len(self.layer_dims) != L:
            raise ConfigError("layer_weights and layer_dims must match tap_layers")
        if any(w < 0 for w in self.layer_weights):
            raise ConfigError("layer weights must be non-negative")
        for i, (W, H, C) in zip(self.tap_layers, self.layer_dims):
            if W * H * C != self.spec[i].out_dim:
                raise ConfigError(f"layer {i} has width {self.spec[i].out_dim}, not {W}x{H}x{C}")
        self.params = [np.array(p, dtype=np.float64) for p in self.params]
        for p in self.params:
            p.setflags(write=False)

    def taps(self, x: Tensor) -> list[Tensor]:
        trace = mlp_trace(self.params, x, self.spec)
        return [trace[i] for i in self.tap_layers]


def _channel_normalized(a: Tensor, dims: tuple[int, int, int]) -> Tensor:
    W, H, C = dims
    a = a.reshape(a.shape[0], W * H, C)
    # sqrt(s + 1e-24) keeps the norm >= 1e-12 and differentiable at zero
    norm = ((a.square()).sum(axis=2, keepdims=True) + 1e-24).sqrt()
    return a / norm * (1.0 / np.sqrt(W * H))


def perceptual(x, x_adv, fe: FeatureExtractor | None) -> Tensor:
    """Weighted squared distance between channel-normalized feature stacks."""
    if fe is None:
        raise ConfigError("perceptual distance needs a feature extractor")
    x, x_adv = _pair(x, x_adv)
    single = x.ndim == 1
    if single:
        x, x_adv = x.reshape(1, -1), x_adv.reshape(1, -1)
    total = None
    for w, dims, a, b in zip(fe.layer_weights, fe.layer_dims, fe.taps(x), fe.taps(x_adv)):
        term = (_channel_normalized(a, dims) - _channel_normalized(b, dims)).square().sum(axis=(1, 2)) * w
        total = term if total is None else total + term
    return total.reshape(()) if single else total


# -- motion manifold -----------------------------------------------------------

@dataclass
class SkeletonTopology:
    num_joints: int
    bones: list[tuple[int, int]]
    num_frames: int
    derivative_orders: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        self.bones = [tuple(int(j) for j in b) for b in self.bones]
        if self.num_joints < 1 or self.num_frames < 1:
            raise ConfigError("skeleton needs positive joint and frame counts")
        for p, c in self.bones:
            if not (0 <= p < self.num_joints and 0 <= c < self.num_joints):
                raise ConfigError(f"bone ({p}, {c}) references a missing joint")
        if any(k not in (0, 1, 2) for k in self.derivative_orders):
            raise ConfigError("derivative orders must lie in {0, 1, 2}")

    @property
    def sample_size(self) -> int:
        return self.num_frames * 3 * self.num_joints

    @classmethod
    def load(cls, path: str | Path) -> "SkeletonTopology":
        """Read an INI file with a [skeleton] section: joints, frames, bones = 0-1, 1-2."""
        cp = configparser.ConfigParser()
        if not cp.read(path):
            raise ConfigError(f"cannot read skeleton file {path}")
        try:
            sec = cp["skeleton"]
            bones = [tuple(int(v) for v in tok.strip().split("-")) for tok in sec["bones"].split(",") if tok.strip()]
            orders = tuple(int(v) for v in sec.get("derivative_orders", "0,1,2").split(","))
            return cls(sec.getint("joints"), bones, sec.getint("frames"), orders)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"malformed skeleton file {path}: {exc}") from exc

    def dump(self, path: str | Path) -> None:
        cp = configparser.ConfigParser()
        cp["skeleton"] = {
            "joints": str(self.num_joints),
            "frames": str(self.num_frames),
            "bones": ", ".join(f"{p}-{c}" for p, c in self.bones),
            "derivative_orders": ",".join(str(k) for k in self.derivative_orders),
        }
        with open(path, "w") as fh:
            cp.write(fh)


def _as_motion(x: Tensor, sk: SkeletonTopology) -> tuple[Tensor, bool]:
    M, J = sk.num_frames, sk.num_joints
    if x.data.size % sk.sample_size:
        raise DimensionError(f"motion tensor of shape {x.shape} does not fit {M} frames x {J} joints")
    single = x.data.size == sk.sample_size and x.ndim in (1, 2) and (x.ndim == 1 or x.shape == (M, 3 * J))
    return x.reshape(-1, M, J, 3), single


def forward_difference(q: Tensor) -> Tensor:
    """Frame-axis forward difference with the last frame's value repeated."""
    if q.shape[1] == 1:
        return q * 0.0
    d = q[:, 1:] - q[:, :-1]
    return concat([d, d[:, -1:]], axis=1)


def bone_lengths(q: Tensor, sk: SkeletonTopology) -> Tensor:
    """(B, M, n_bones) bone lengths."""
    parents = [p for p, _ in sk.bones]
    children = [c for _, c in sk.bones]
    seg = q[:, :, parents] - q[:, :, children]
    return (seg.square().sum(axis=3) + 1e-24).sqrt()


def motion_terms(x, x_adv, sk: SkeletonTopology) -> dict[str, Tensor]:
    """Per-sample bone term and per-order dynamics terms, each shape (B,)."""
    x, x_adv = _pair(x, x_adv)
    q, _ = _as_motion(x, sk)
    qa, _ = _as_motion(x_adv, sk)
    M, J, B = sk.num_frames, sk.num_joints, len(sk.bones)
    terms = {}
    if B:
        diff = (bone_lengths(q, sk) - bone_lengths(qa, sk)).square()
        terms["bone"] = diff.sum(axis=(1, 2)) * (1.0 / (M * B))
    else:
        terms["bone"] = (q * 0.0).sum(axis=(1, 2, 3))
    dq, dqa = q, qa
    for k in range(max(sk.derivative_orders) + 1):
        if k:
            dq, dqa = forward_difference(dq), forward_difference(dqa)
        if k in sk.derivative_orders:
            terms[f"order{k}"] = (dq - dqa).square().sum(axis=(1, 2, 3)) * (1.0 / (M * J))
    return terms


def motion_manifold(x, x_adv, sk: SkeletonTopology | None) -> Tensor:
    """Bone-length discrepancy plus position/velocity/acceleration discrepancy."""
    if sk is None:
        raise ConfigError("motion-manifold distance needs a skeleton topology")
    _, single = _as_motion(as_tensor(x), sk)
    terms = motion_terms(x, x_adv, sk)
    total = None
    for t in terms.values():
        total = t if total is None else total + t
    return total.reshape(()) if single else total


@dataclass
class DistanceFn:
    kind: str = "euclidean_sq"
    extractor: FeatureExtractor | None = None
    skeleton: SkeletonTopology | None = field(default=None)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown distance kind {self.kind!r}")
        if self.kind == "perceptual" and self.extractor is None:
            raise ConfigError("perceptual distance requires an extractor")
        if self.kind == "motion_manifold" and self.skeleton is None:
            raise ConfigError("motion_manifold distance requires a skeleton")

    def __call__(self, x, x_adv) -> Tensor:
        if self.kind == "euclidean_sq":
            return euclidean_sq(x, x_adv)
        if self.kind == "perceptual":
            return perceptual(x, x_adv, self.extractor)
        if self.kind == "motion_manifold":
            return motion_manifold(x, x_adv, self.skeleton)
        raise ContractError(self.kind)
