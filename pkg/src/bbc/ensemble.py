"""The defended model: a frozen victim plus N small heads on a skip connection.

Head ``i`` produces ``f_i(phi(x)) + g(x)`` where ``g`` is the victim's logits
and ``phi`` is either those logits (black-box mode) or the victim's latent
features.  Prediction averages the per-head softmax outputs.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import checkpoint
from .data import Dataset
from .distances import DistanceFn
from .energy import EnergyView
from .errors import ConfigError, ContractError, SamplerError
from .models import VictimClassifier, logit_energy_score
from .numcore import (GradTape, LayerSpec, Tensor, as_tensor, backward, cross_entropy, forward_mlp,
                      mlp_trace, softmax)
from .samplers import AdaHmcState, PcdBuffer, SgldConfig, adahmc_step, run_adv_chain, run_sgld_chain

log = logging.getLogger(__name__)

SKIP_INPUTS = ("victim_logits", "latent_features")


@dataclass
class AppendedHead:
    """Two affine layers, hidden width = number of classes."""
    params: list[np.ndarray]
    activation: str = "relu"

    @property
    def in_dim(self) -> int:
        return self.params[0].shape[0]

    @property
    def width(self) -> int:
        return self.params[2].shape[1]

    @property
    def spec(self) -> list[LayerSpec]:
        k = self.width
        return [LayerSpec(self.in_dim, k, self.activation), LayerSpec(k, k, "identity")]


def init_head(in_dim: int, num_classes: int, rng: np.random.Generator, std: float = 0.01,
              activation: str = "relu") -> AppendedHead:
    """Small random first layer; zero final layer so the head starts as the identity map."""
    k = num_classes
    return AppendedHead([rng.normal(0.0, std, size=(in_dim, k)), np.zeros(k),
                         np.zeros((k, k)), np.zeros(k)], activation)


@dataclass
class BbcEnsemble:
    victim: VictimClassifier
    heads: list[AppendedHead]
    skip_input: str = "victim_logits"
    energy_u: str = "mean"

    def __post_init__(self):
        if not self.victim.frozen:
            raise ContractError("the victim must be frozen before wrapping")
        if not self.heads:
            raise ContractError("an ensemble needs at least one head")
        if self.skip_input not in SKIP_INPUTS:
            raise ConfigError(f"unknown skip input {self.skip_input!r}")
        want = self.head_in_dim
        for h in self.heads:
            if h.in_dim != want or h.width != self.num_classes:
                raise ContractError(f"head shape ({h.in_dim}->{h.width}) does not fit this victim")

    @classmethod
    def create(cls, victim: VictimClassifier, n_heads: int = 5, seed: int = 0,
               skip_input: str = "victim_logits", activation: str = "relu", init_std: float = 0.01,
               energy_u: str = "mean") -> "BbcEnsemble":
        in_dim = victim.num_classes if skip_input == "victim_logits" else victim.feature_dim
        heads = [init_head(in_dim, victim.num_classes, np.random.default_rng([seed, i]), init_std, activation)
                 for i in range(n_heads)]
        return cls(victim, heads, skip_input, energy_u)

    @property
    def num_classes(self) -> int:
        return self.victim.num_classes

    @property
    def n_heads(self) -> int:
        return len(self.heads)

    @property
    def head_in_dim(self) -> int:
        return self.num_classes if self.skip_input == "victim_logits" else self.victim.feature_dim

    # -- forward passes ----------------------------------------------------
    def victim_parts(self, x) -> tuple[Tensor, Tensor]:
        """(victim logits, head input) sharing one victim pass."""
        trace = mlp_trace(self.victim.params, x, self.victim.arch)
        z = trace[-1]
        if self.skip_input == "victim_logits":
            return z, z
        return z, trace[-2] if len(trace) > 1 else as_tensor(x)

    def head_logits(self, i: int, z: Tensor, phi: Tensor, params=None) -> Tensor:
        head = self.heads[i]
        return forward_mlp(head.params if params is None else params, phi, head.spec) + z

    def member_logits(self, x) -> list[Tensor]:
        z, phi = self.victim_parts(x)
        return [self.head_logits(i, z, phi) for i in range(self.n_heads)]

    def predict_proba(self, x) -> np.ndarray:
        return predict_bma(self, x)

    def predict(self, x) -> np.ndarray:
        return self.predict_proba(x).argmax(axis=-1)

    def accuracy(self, data: Dataset) -> float:
        return float(np.mean(self.predict(data.x) == data.y))

    def head_view(self, i: int, lam: float, distance: DistanceFn, params=None) -> EnergyView:
        return EnergyView(lambda x: wrapped_logits(self, i, x, params), lam, distance)

    # -- persistence -------------------------------------------------------
    def descriptor(self) -> dict:
        return {"type": "ensemble", "victim": self.victim.descriptor(), "victim_checksum": self.victim.checksum,
                "heads": self.n_heads, "head_activation": self.heads[0].activation,
                "skip_input": self.skip_input, "energy_u": self.energy_u}

    def tensors(self) -> list[np.ndarray]:
        return list(self.victim.params) + [p for h in self.heads for p in h.params]

    def save(self, path: str | Path) -> None:
        checkpoint.save(path, self.descriptor(), self.tensors())

    @classmethod
    def load(cls, path: str | Path) -> "BbcEnsemble":
        desc, tensors = checkpoint.load(path)
        if desc.get("type") != "ensemble":
            raise ConfigError(f"{path} holds a {desc.get('type')!r} checkpoint, not an ensemble")
        victim = VictimClassifier.from_blob(desc["victim"], tensors)
        if victim.checksum != desc["victim_checksum"]:
            raise ConfigError("victim checksum in ensemble checkpoint does not match its parameters")
        rest = tensors[len(victim.params):]
        heads = [AppendedHead([t.copy() for t in rest[4 * i:4 * i + 4]], desc["head_activation"])
                 for i in range(desc["heads"])]
        return cls(victim, heads, desc["skip_input"], desc["energy_u"])


def wrapped_logits(ens: BbcEnsemble, head_index: int, x, params=None) -> Tensor:
    """f(phi(x)) + g(x) for one head; ``params`` overrides the head's parameters."""
    if not 0 <= head_index < ens.n_heads:
        raise ContractError(f"head index {head_index} out of range for {ens.n_heads} heads")
    z, phi = ens.victim_parts(x)
    return ens.head_logits(head_index, z, phi, params)


def predict_bma(ens: BbcEnsemble, x) -> np.ndarray:
    """Average of the per-head class-probability vectors."""
    probs = [softmax(z.data, axis=-1) for z in ens.member_logits(np.asarray(x, dtype=np.float64))]
    # centred on the first member so identical members reproduce it bit for bit
    ref = probs[0]
    return ref + np.mean([p - ref for p in probs], axis=0)


def mean_member_ce(members: Sequence[Tensor], y) -> Tensor:
    """Per-sample cross-entropy averaged over ensemble members, shape (B,)."""
    total = None
    for z in members:
        ce = cross_entropy(z, y)
        total = ce if total is None else total + ce
    return total * (1.0 / len(members))


def loss_input_gradient(model, x: np.ndarray, y) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample (loss, d loss / d x) of the member-averaged cross-entropy.

    ``model`` is anything exposing ``member_logits``.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x.reshape(1, -1) if single else x
    yb = np.asarray(y, dtype=np.int64).reshape(-1)
    tape = GradTape()
    xt = tape.watch(xb)
    loss = mean_member_ce(model.member_logits(xt), yb)
    g = backward(tape, loss.sum())[xt]
    return (loss.data[0], g[0]) if single else (loss.data, g)


def expected_input_gradient(ens: BbcEnsemble, x, y) -> np.ndarray:
    return loss_input_gradient(ens, x, y)[1]


# -- gradient terms for the head parameters ------------------------------------

def _head_grad(ens: BbcEnsemble, i: int, objective: Callable[[list[Tensor]], Tensor]) -> list[np.ndarray]:
    tape = GradTape()
    params = [tape.watch(p) for p in ens.heads[i].params]
    grads = backward(tape, objective(params))
    return [grads[p] for p in params]


def grad_h1(ens: BbcEnsemble, i: int, x: np.ndarray, y) -> list[np.ndarray]:
    """d/d(theta') of the mean cross-entropy of head ``i`` on a labeled batch."""
    z, phi = ens.victim_parts(np.asarray(x, dtype=np.float64))
    return _head_grad(ens, i, lambda p: cross_entropy(ens.head_logits(i, z, phi, p), np.asarray(y).reshape(-1)).mean())


def grad_h2(ens: BbcEnsemble, i: int, pos: np.ndarray, neg: np.ndarray) -> list[np.ndarray]:
    """d/d(theta') of mean U(g(pos)) - mean U(g(neg))."""
    if len(pos) == 0 or len(neg) == 0:
        raise ContractError("positive and negative batches must be non-empty")
    zp, phip = ens.victim_parts(np.asarray(pos, dtype=np.float64))
    zn, phin = ens.victim_parts(np.asarray(neg, dtype=np.float64))

    def objective(p):
        up = logit_energy_score(ens.head_logits(i, zp, phip, p), ens.energy_u).mean()
        un = logit_energy_score(ens.head_logits(i, zn, phin, p), ens.energy_u).mean()
        return up - un

    return _head_grad(ens, i, objective)


def grad_h3(ens: BbcEnsemble, i: int, x: np.ndarray, x_adv: np.ndarray, y, lam: float,
            distance: DistanceFn) -> list[np.ndarray]:
    """d/d(theta') of the mean adversarial conditional log density."""
    x = np.asarray(x, dtype=np.float64)
    x_adv = np.asarray(x_adv, dtype=np.float64)
    return _head_grad(ens, i, lambda p: ens.head_view(i, lam, distance, p)
                      .adv_conditional_logdensity(x, x_adv, y).mean())


# -- training -------------------------------------------------------------------

@dataclass
class BbcTrainConfig:
    iterations: int = 300
    lam: float = 1.0
    batch_pos: int = 64
    batch_neg: int = 64
    sgld_x: SgldConfig = field(default_factory=lambda: SgldConfig(step_size=0.05, steps=20))
    sgld_adv: SgldConfig = field(default_factory=lambda: SgldConfig(step_size=0.05, steps=10))
    hmc: AdaHmcState = field(default_factory=AdaHmcState)
    distance: DistanceFn = field(default_factory=DistanceFn)
    init_radius: float = 0.05
    reinit_prob: float = 0.05
    buffer_capacity: int = 2000
    clip_to_box: bool = True
    term_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        if self.batch_pos < 1 or self.batch_neg < 1:
            raise ConfigError("batch sizes must be >= 1")
        if self.iterations < 0:
            raise ConfigError("iteration count must be non-negative")
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")


def _with_clip(cfg: SgldConfig, box) -> SgldConfig:
    return SgldConfig(cfg.step_size, cfg.steps, cfg.noise_scale, tuple(box), cfg.seed)


def train(ens: BbcEnsemble, data: Dataset, cfg: BbcTrainConfig,
          callback: Callable[[int, int, dict], None] | None = None) -> BbcEnsemble:
    """Alternate sampling of (x, x_adv) and head parameters, one head at a time.

    Per iteration and head: h1 from a labeled minibatch, h2 from persistent
    Langevin negatives, h3 from Langevin adversaries around the minibatch;
    the head then takes ``hmc.inner_steps`` SG-AdaHMC steps along the
    gradient of the negative log joint, h1 - h2 - h3.
    """
    if not ens.victim.frozen:
        raise ContractError("victim must be frozen before BBC training")
    start_sum = ens.victim.current_checksum()
    box = data.box
    sgld_x = _with_clip(cfg.sgld_x, box) if cfg.clip_to_box else cfg.sgld_x
    sgld_adv = _with_clip(cfg.sgld_adv, box) if cfg.clip_to_box else cfg.sgld_adv
    rngs = [np.random.default_rng([cfg.seed, i]) for i in range(ens.n_heads)]
    buffers = [PcdBuffer((data.dim,), cfg.buffer_capacity, cfg.reinit_prob, box=box) for _ in ens.heads]
    states = [cfg.hmc.copy().init_for(h.params) for h in ens.heads]
    w1, w2, w3 = cfg.term_weights
    n = len(data)
    log.info("BBC training: %d iterations, %d heads, U=%s", cfg.iterations, ens.n_heads, ens.energy_u)
    for it in range(cfg.iterations):
        for i, head in enumerate(ens.heads):
            rng = rngs[i]
            try:
                idx = rng.choice(n, size=min(cfg.batch_pos, n), replace=False)
                x, y = data.x[idx], data.y[idx]
                h1 = grad_h1(ens, i, x, y)

                snapshot = [p.copy() for p in head.params]

                def logp(xt: Tensor, _p=snapshot, _i=i) -> Tensor:
                    return logit_energy_score(wrapped_logits(ens, _i, xt, _p), ens.energy_u)

                x0, _ = buffers[i].draw(cfg.batch_neg, rng)
                neg = run_sgld_chain(x0, logp, sgld_x, rng)
                buffers[i].store(neg, rng)
                h2 = grad_h2(ens, i, x, neg)

                view = ens.head_view(i, cfg.lam, cfg.distance)
                x_adv = run_adv_chain(x, y, view, sgld_adv, rng, cfg.init_radius)
                h3 = grad_h3(ens, i, x, x_adv, y, cfg.lam, cfg.distance)
            except SamplerError as exc:
                raise SamplerError(f"iteration {it}, head {i}: {exc}") from exc

            h = [w1 * a - w2 * b - w3 * c for a, b, c in zip(h1, h2, h3)]
            params = head.params
            for _ in range(states[i].inner_steps):
                try:
                    params = adahmc_step(params, h, states[i], rng)
                except SamplerError as exc:
                    raise SamplerError(f"iteration {it}, head {i}: {exc}") from exc
            head.params = params
            if callback is not None:
                callback(it, i, {"x_adv": x_adv, "neg": neg})
    if ens.victim.current_checksum() != start_sum:
        raise ContractError("victim parameters changed during BBC training")
    return ens
