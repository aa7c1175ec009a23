"""Toy datasets standing in for the image and skeleton benchmarks.

Every generator is deterministic in its seed.  Samples are flattened to
``(n, dim)`` rows; ``box`` is the valid per-coordinate range.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.datasets import make_blobs, make_moons

from .distances import SkeletonTopology
from .errors import ConfigError

KINDS = ("moons2d", "blobs2d", "tinygrid", "motion_proc")


@dataclass
class Dataset:
    kind: str
    x: np.ndarray
    y: np.ndarray
    num_classes: int
    box: tuple[float, float] = (0.0, 1.0)
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or len(self.x) != len(self.y):
            raise ConfigError("dataset needs (n, dim) samples and (n,) labels")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise ConfigError("labels out of range")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def data_range(self) -> float:
        return self.box[1] - self.box[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.kind, self.x[idx], self.y[idx], self.num_classes, self.box, self.seed, dict(self.meta))

    # -- CSV persistence ---------------------------------------------------
    def to_csv(self, path: str | Path) -> None:
        buf = io.StringIO()
        meta = " ".join(f"{k}={v}" for k, v in sorted(self.meta.items()))
        buf.write(f"# kind={self.kind} classes={self.num_classes} box={self.box[0]!r},{self.box[1]!r} seed={self.seed} {meta}\n".rstrip() + "\n")
        buf.write(",".join([f"x{i}" for i in range(self.dim)] + ["label"]) + "\n")
        for row, label in zip(self.x, self.y):
            buf.write(",".join(repr(float(v)) for v in row) + f",{int(label)}\n")
        Path(path).write_text(buf.getvalue())

    @classmethod
    def from_csv(cls, path: str | Path) -> "Dataset":
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"dataset file {p} does not exist")
        lines = p.read_text().splitlines()
        if not lines or not lines[0].startswith("#"):
            raise ConfigError(f"{p} lacks the dataset header line")
        head = dict(tok.split("=", 1) for tok in lines[0][1:].split())
        arr = np.loadtxt(lines[2:], delimiter=",", ndmin=2) if len(lines) > 2 else np.zeros((0, len(lines[1].split(","))))
        lo, hi = (float(v) for v in head.pop("box").split(","))
        kind, classes, seed = head.pop("kind"), int(head.pop("classes")), int(head.pop("seed"))
        return cls(kind, arr[:, :-1], arr[:, -1].astype(np.int64), classes, (lo, hi), seed, head)


def _to_unit_box(x: np.ndarray, margin: float = 0.05) -> np.ndarray:
    lo, hi = x.min(axis=0), x.max(axis=0)
    return margin + (1 - 2 * margin) * (x - lo) / (hi - lo)


def moons2d(n: int = 500, noise: float = 0.1, seed: int = 1) -> Dataset:
    x, y = make_moons(n_samples=n, noise=noise, random_state=seed)
    return Dataset("moons2d", _to_unit_box(x), y, 2, (0.0, 1.0), seed, {"noise": noise})


def blobs2d(n: int = 200, centers: int = 2, std: float = 1.0, seed: int = 7) -> Dataset:
    x, y = make_blobs(n_samples=n, centers=centers, cluster_std=std, random_state=seed)
    return Dataset("blobs2d", _to_unit_box(x), y, centers, (0.0, 1.0), seed, {"centers": centers})


def _glyph(label: int, rng: np.random.Generator) -> np.ndarray:
    img = np.zeros((8, 8))
    pos = rng.integers(1, 7)
    if label == 0:      # horizontal bar
        img[pos, 1:7] = 1.0
    elif label == 1:    # vertical bar
        img[1:7, pos] = 1.0
    elif label == 2:    # main diagonal
        off = rng.integers(-1, 2)
        for i in range(8):
            if 0 <= i + off < 8:
                img[i, i + off] = 1.0
    else:               # hollow square
        a = rng.integers(0, 3)
        b = a + rng.integers(3, 5)
        img[a, a:b + 1] = img[b, a:b + 1] = 1.0
        img[a:b + 1, a] = img[a:b + 1, b] = 1.0
    return img


def tinygrid(n: int = 400, classes: int = 4, noise: float = 0.1, seed: int = 3) -> Dataset:
    """8x8 synthetic glyphs (bars, diagonal, square) with pixel noise, in [0, 1]."""
    if not 2 <= classes <= 4:
        raise ConfigError("tinygrid supports 2 to 4 classes")
    rng = np.random.default_rng(seed)
    y = rng.integers(classes, size=n)
    x = np.stack([_glyph(int(c), rng) for c in y]).reshape(n, 64)
    x = np.clip(x + noise * rng.standard_normal(x.shape), 0.0, 1.0)
    return Dataset("tinygrid", x, y, classes, (0.0, 1.0), seed, {"noise": noise})


# Five-joint planar-ish figure: hip(0) -> chest(1) -> head(2); chest -> left hand(3), right hand(4)
MOTION_BONES = [(0, 1), (1, 2), (1, 3), (1, 4)]
MOTION_REST = np.array([0.25, 0.1, 0.2, 0.2])


def motion_skeleton(frames: int = 16) -> SkeletonTopology:
    return SkeletonTopology(5, list(MOTION_BONES), frames)


def motion_sequence(label: int, frames: int, rng: np.random.Generator) -> np.ndarray:
    """One (frames, 15) sequence; bone lengths are constant by construction."""
    t = np.linspace(0, 2 * np.pi, frames, endpoint=False)
    phase = rng.uniform(0, 2 * np.pi)
    amp = rng.uniform(0.4, 0.8)
    freq = 1.0 if label == 0 else 2.0
    root = np.stack([0.5 + 0.05 * rng.standard_normal() + 0.02 * np.sin(t), np.full(frames, 0.3),
                     np.full(frames, 0.5)], axis=1)
    lean = 0.1 * np.sin(freq * t + phase)
    arm_l = np.pi / 2 + amp * np.sin(freq * t + phase)
    arm_r = np.pi / 2 - amp * np.sin(freq * t + phase + (0 if label == 0 else np.pi))
    unit_up = np.stack([np.sin(lean), np.cos(lean), np.zeros(frames)], axis=1)
    chest = root + MOTION_REST[0] * unit_up
    head = chest + MOTION_REST[1] * unit_up
    hand_l = chest + MOTION_REST[2] * np.stack([-np.sin(arm_l), -np.cos(arm_l), np.zeros(frames)], axis=1)
    hand_r = chest + MOTION_REST[3] * np.stack([np.sin(arm_r), -np.cos(arm_r), np.zeros(frames)], axis=1)
    return np.stack([root, chest, head, hand_l, hand_r], axis=1).reshape(frames, 15)


def motion_proc(n: int = 200, frames: int = 16, seed: int = 5) -> Dataset:
    """Procedural two-class arm-swing motions: in-phase vs alternating."""
    rng = np.random.default_rng(seed)
    y = rng.integers(2, size=n)
    x = np.stack([motion_sequence(int(c), frames, rng).reshape(-1) for c in y])
    return Dataset("motion_proc", x, y, 2, (-1.0, 2.0), seed, {"frames": frames})


def gen_data(kind: str, seed: int, **params) -> Dataset:
    try:
        if kind == "moons2d":
            return moons2d(seed=seed, **params)
        if kind == "blobs2d":
            return blobs2d(seed=seed, **params)
        if kind == "tinygrid":
            return tinygrid(seed=seed, **params)
        if kind == "motion_proc":
            return motion_proc(seed=seed, **params)
    except TypeError as exc:
        raise ConfigError(f"invalid parameters for {kind}: {exc}") from exc
    raise ConfigError(f"unknown dataset kind {kind!r}")
