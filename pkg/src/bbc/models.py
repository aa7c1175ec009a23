"""Victim classifiers: MLPs trained by plain SGD, optionally with an
energy-based (JEM-style) term, then frozen for black-box use."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint
from .data import Dataset
from .errors import ConfigError, ContractError, EnergyDivergence
from .numcore import (GradTape, LayerSpec, Tensor, as_tensor, backward, cross_entropy, init_params,
                      logsumexp, mlp_trace, softmax)
from .samplers import PcdBuffer, SgldConfig, run_sgld_chain

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6


def mlp_arch(input_dim: int, num_classes: int, hidden: Sequence[int] = (32, 32),
             activation: str = "relu") -> list[LayerSpec]:
    widths = [input_dim, *hidden, num_classes]
    return [LayerSpec(a, b, activation if i < len(hidden) else "identity")
            for i, (a, b) in enumerate(zip(widths[:-1], widths[1:]))]


@dataclass
class VictimClassifier:
    params: list[np.ndarray]
    arch: list[LayerSpec]
    frozen: bool = False
    checksum: int | None = None

    @property
    def num_classes(self) -> int:
        return self.arch[-1].out_dim

    @property
    def input_dim(self) -> int:
        return self.arch[0].in_dim

    @property
    def feature_dim(self) -> int:
        return self.arch[-1].in_dim

    def logits(self, x) -> Tensor:
        return mlp_trace(self.params, x, self.arch)[-1]

    def features(self, x) -> Tensor:
        """Penultimate activations (the latent representation)."""
        if len(self.arch) < 2:
            return as_tensor(x)
        return mlp_trace(self.params, x, self.arch)[-2]

    __call__ = logits

    def member_logits(self, x) -> list[Tensor]:
        return [self.logits(x)]

    def predict_proba(self, x) -> np.ndarray:
        return softmax(self.logits(np.asarray(x, dtype=np.float64)).data)

    def predict(self, x) -> np.ndarray:
        return self.predict_proba(x).argmax(axis=-1)

    def accuracy(self, data: Dataset) -> float:
        return float(np.mean(self.predict(data.x) == data.y))

    def current_checksum(self) -> int:
        return checkpoint.checksum(self.params)

    def verify_frozen(self) -> bool:
        return self.frozen and self.checksum == self.current_checksum()

    # -- persistence -------------------------------------------------------
    def descriptor(self) -> dict:
        return {"type": "victim", "frozen": self.frozen,
                "arch": [[l.in_dim, l.out_dim, l.activation] for l in self.arch]}

    def save(self, path: str | Path) -> None:
        checkpoint.save(path, self.descriptor(), self.params)

    @classmethod
    def from_blob(cls, desc: dict, tensors: list[np.ndarray]) -> "VictimClassifier":
        arch = [LayerSpec(*l) for l in desc["arch"]]
        model = cls([t.copy() for t in tensors[:2 * len(arch)]], arch)
        return freeze(model) if desc.get("frozen") else model

    @classmethod
    def load(cls, path: str | Path) -> "VictimClassifier":
        desc, tensors = checkpoint.load(path)
        if desc.get("type") != "victim":
            raise ConfigError(f"{path} holds a {desc.get('type')!r} checkpoint, not a victim")
        return cls.from_blob(desc, tensors)


def freeze(model: VictimClassifier) -> VictimClassifier:
    """Mark parameters read-only and record their checksum.  Idempotent."""
    if model.frozen:
        return model
    for p in model.params:
        p.setflags(write=False)
    model.frozen = True
    model.checksum = model.current_checksum()
    return model


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 32
    learning_rate: float = 0.1
    seed: int = 0
    mode: str = "standard"
    hidden: tuple[int, ...] = (32, 32)
    activation: str = "relu"
    # energy_joint mode only
    energy_weight: float = 1.0
    energy_u: str = "mean"
    buffer_capacity: int = 2000
    reinit_prob: float = 0.05
    loss_history: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.mode not in ("standard", "energy_joint"):
            raise ConfigError(f"unknown training mode {self.mode!r}")
        if self.energy_u not in ("mean", "logsumexp"):
            raise ConfigError(f"unknown energy reduction {self.energy_u!r}")


def logit_energy_score(z: Tensor, kind: str = "mean") -> Tensor:
    """U(z) per sample: mean of the logits, or their logsumexp."""
    return z.mean(axis=-1) if kind == "mean" else logsumexp(z, axis=-1)


def energy_term(params, arch, pos: np.ndarray, neg: np.ndarray, kind: str = "mean") -> Tensor:
    """mean U(g(pos)) - mean U(g(neg)) on the given (possibly tracked) params."""
    up = logit_energy_score(mlp_trace(params, pos, arch)[-1], kind).mean()
    un = logit_energy_score(mlp_trace(params, neg, arch)[-1], kind).mean()
    return up - un


def _check_data(data: Dataset) -> None:
    if len(data) == 0:
        raise ContractError("cannot train on an empty dataset")


def full_loss(model: VictimClassifier, data: Dataset) -> float:
    return float(cross_entropy(model.logits(data.x), data.y).data.mean())


def train_standard(data: Dataset, cfg: TrainConfig) -> VictimClassifier:
    """Minibatch SGD on mean cross-entropy at a constant learning rate."""
    _check_data(data)
    rng = np.random.default_rng(cfg.seed)
    arch = mlp_arch(data.dim, data.num_classes, cfg.hidden, cfg.activation)
    model = VictimClassifier(init_params(arch, rng), arch)
    cfg.loss_history = [full_loss(model, data)]
    n = len(data)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            tape = GradTape()
            params = [tape.watch(p) for p in model.params]
            loss = cross_entropy(mlp_trace(params, data.x[idx], arch)[-1], data.y[idx]).mean()
            grads = backward(tape, loss)
            model.params = [p.data - cfg.learning_rate * grads[p] for p in params]
        cfg.loss_history.append(full_loss(model, data))
    return model


def pretrain_energy_joint(data: Dataset, cfg: TrainConfig, sampler: SgldConfig) -> VictimClassifier:
    """SGD on cross-entropy minus the contrastive energy term.

    Negatives come from a persistent buffer refined by ``sampler.steps``
    Langevin steps on U(g(x)).
    """
    _check_data(data)
    if sampler.steps < 1:
        raise ContractError("energy pretraining needs a sampler chain length >= 1")
    rng = np.random.default_rng(cfg.seed)
    chain_rng = np.random.default_rng([cfg.seed, 1])
    arch = mlp_arch(data.dim, data.num_classes, cfg.hidden, cfg.activation)
    model = VictimClassifier(init_params(arch, rng), arch)
    buf = PcdBuffer((data.dim,), cfg.buffer_capacity, cfg.reinit_prob, box=data.box)
    if sampler.clip is None:
        sampler = SgldConfig(sampler.step_size, sampler.steps, sampler.noise_scale, data.box, sampler.seed)
    cfg.loss_history = [full_loss(model, data)]
    n = len(data)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            frozen_params = [p.copy() for p in model.params]

            def logp(x: Tensor) -> Tensor:
                return logit_energy_score(mlp_trace(frozen_params, x, arch)[-1], cfg.energy_u)

            x0, _ = buf.draw(len(idx), chain_rng)
            neg = run_sgld_chain(x0, logp, sampler, chain_rng)
            buf.store(neg, chain_rng)
            tape = GradTape()
            params = [tape.watch(p) for p in model.params]
            ce = cross_entropy(mlp_trace(params, data.x[idx], arch)[-1], data.y[idx]).mean()
            e = energy_term(params, arch, data.x[idx], neg, cfg.energy_u)
            if abs(float(e.data)) > DIVERGENCE_LIMIT:
                raise EnergyDivergence(f"energy gap {float(e.data):.3g} at epoch {epoch}")
            grads = backward(tape, ce - cfg.energy_weight * e)
            model.params = [p.data - cfg.learning_rate * grads[p] for p in params]
        cfg.loss_history.append(full_loss(model, data))
    return model


def train_victim(data: Dataset, cfg: TrainConfig, sampler: SgldConfig | None = None) -> VictimClassifier:
    if cfg.mode == "energy_joint":
        return pretrain_energy_joint(data, cfg, sampler or SgldConfig(step_size=0.05, steps=20))
    return train_standard(data, cfg)
