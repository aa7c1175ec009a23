"""Stochastic-gradient MCMC used by training.

* ``sgld_step`` / ``run_sgld_chain``: Langevin updates on inputs,
  ``x <- x + (eps^2 / 2) * grad log p(x) + eps * N(0, I)``.
* ``run_adv_chain``: the same update on adversaries, targeting
  ``g(x_adv)[y] - lam * d(x, x_adv)``.
* ``PcdBuffer``: replay buffer for persistent negative chains.
* ``adahmc_step``: adaptive-preconditioned stochastic-gradient HMC on head
  parameters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .energy import EnergyView
from .errors import ConfigError, ContractError, SamplerError
from .numcore import GradTape, Tensor, backward


@dataclass
class SgldConfig:
    step_size: float = 0.05
    steps: int = 20
    noise_scale: float | None = None  # None -> noise std equals step_size
    clip: tuple[float, float] | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.step_size > 0:
            raise ConfigError("SGLD step size must be positive")
        if self.steps < 0:
            raise ConfigError("SGLD step count must be non-negative")

    @property
    def noise_std(self) -> float:
        return self.step_size if self.noise_scale is None else self.noise_scale


def sgld_step(x: np.ndarray, grad_logp: np.ndarray, cfg: SgldConfig, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    grad_logp = np.asarray(grad_logp, dtype=np.float64)
    if x.shape != grad_logp.shape:
        raise ContractError(f"state {x.shape} and gradient {grad_logp.shape} differ")
    if not np.all(np.isfinite(grad_logp)):
        raise SamplerError("non-finite gradient in SGLD step")
    out = x + (0.5 * cfg.step_size ** 2) * grad_logp
    if cfg.noise_std:
        out = out + cfg.noise_std * rng.standard_normal(x.shape)
    if cfg.clip is not None:
        out = np.clip(out, cfg.clip[0], cfg.clip[1])
    if not np.all(np.isfinite(out)):
        raise SamplerError("SGLD state became non-finite")
    return out


def logp_gradient(logp_fn: Callable[[Tensor], Tensor], x: np.ndarray) -> np.ndarray:
    """Gradient of ``sum(logp_fn(x))``; per-sample gradients for independent rows."""
    tape = GradTape()
    xt = tape.watch(x)
    return backward(tape, logp_fn(xt).sum())[xt]


def run_sgld_chain(x0: np.ndarray, logp_fn: Callable[[Tensor], Tensor], cfg: SgldConfig,
                   rng: np.random.Generator, callback: Callable | None = None) -> np.ndarray:
    x = np.array(x0, dtype=np.float64)
    for t in range(cfg.steps):
        x = sgld_step(x, logp_gradient(logp_fn, x), cfg, rng)
        if callback is not None:
            callback(t, x)
    return x


def run_adv_chain(x_clean: np.ndarray, y, view: EnergyView, cfg: SgldConfig, rng: np.random.Generator,
                  init_radius: float = 0.05, callback: Callable | None = None) -> np.ndarray:
    """Sample adversaries around ``x_clean`` from the adversarial conditional."""
    x_clean = np.asarray(x_clean, dtype=np.float64)
    x = x_clean + rng.uniform(-init_radius, init_radius, size=x_clean.shape) if init_radius > 0 else x_clean.copy()
    if cfg.clip is not None:
        x = np.clip(x, cfg.clip[0], cfg.clip[1])
    clean = Tensor(x_clean)

    def logp(xt: Tensor) -> Tensor:
        return view.adv_conditional_logdensity(clean, xt, y)

    return run_sgld_chain(x, logp, cfg, rng, callback)


@dataclass
class PcdBuffer:
    """Persistent chain states with occasional fresh restarts."""
    sample_shape: tuple[int, ...]
    capacity: int = 10000
    reinit_prob: float = 0.05
    init_distribution: str = "uniform_box"
    box: tuple[float, float] = (0.0, 1.0)
    samples: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.reinit_prob <= 1.0:
            raise ConfigError("reinit probability must lie in [0, 1]")
        if self.init_distribution not in ("uniform_box", "gaussian"):
            raise ConfigError(f"unknown init distribution {self.init_distribution!r}")
        if self.capacity < 1:
            raise ConfigError("buffer capacity must be positive")
        self.sample_shape = tuple(self.sample_shape)

    def fresh(self, n: int, rng: np.random.Generator) -> np.ndarray:
        lo, hi = self.box
        shape = (n,) + self.sample_shape
        if self.init_distribution == "uniform_box":
            return rng.uniform(lo, hi, size=shape)
        return 0.5 * (lo + hi) + 0.25 * (hi - lo) * rng.standard_normal(shape)

    def draw(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(samples, fresh_mask)``."""
        fresh_mask = rng.random(n) < self.reinit_prob
        if not self.samples:
            fresh_mask[:] = True
        out = self.fresh(n, rng)
        stored = np.flatnonzero(~fresh_mask)
        if stored.size:
            picks = rng.integers(len(self.samples), size=stored.size)
            out[stored] = np.stack([self.samples[i] for i in picks])
        return out, fresh_mask

    def store(self, x: np.ndarray, rng: np.random.Generator) -> None:
        for row in np.asarray(x, dtype=np.float64).reshape((-1,) + self.sample_shape):
            if len(self.samples) < self.capacity:
                self.samples.append(row.copy())
            else:
                self.samples[rng.integers(self.capacity)] = row.copy()

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class AdaHmcState:
    """Step size, friction, per-parameter preconditioner and its averaging horizon."""
    sigma: float = 0.05
    friction: float = 1.0
    tau: float = 1000.0
    inner_steps: int = 1
    noise: bool = True
    C: list[np.ndarray] | None = None
    floor: float = 1e-8

    def __post_init__(self):
        if not self.sigma > 0 or not self.friction > 0:
            raise ConfigError("sigma and friction must be positive")
        if not self.tau >= 1:
            raise ConfigError("tau must be >= 1")
        if self.inner_steps < 0:
            raise ConfigError("inner step count must be non-negative")

    def init_for(self, theta: Sequence[np.ndarray]) -> "AdaHmcState":
        if self.C is None:
            self.C = [np.ones_like(p, dtype=np.float64) for p in theta]
        return self

    def copy(self) -> "AdaHmcState":
        return AdaHmcState(self.sigma, self.friction, self.tau, self.inner_steps, self.noise,
                           None if self.C is None else [c.copy() for c in self.C], self.floor)


def adahmc_step(theta: Sequence[np.ndarray], h: Sequence[np.ndarray], st: AdaHmcState,
                rng: np.random.Generator) -> list[np.ndarray]:
    """One update; ``h`` is the gradient of the quantity being minimized.

    theta <- theta - sigma^2 C^{-1/2} h + N(0, 2 F sigma^3 C^{-1} - sigma^4),
    then C <- (1 - 1/tau) C + h^2 / tau.  Negative noise variances clamp to 0.
    """
    st.init_for(theta)
    if len(h) != len(theta):
        raise ContractError("gradient and parameter lists differ in length")
    s2, s3, s4 = st.sigma ** 2, st.sigma ** 3, st.sigma ** 4
    out = []
    for p, g, C in zip(theta, h, st.C):
        if not np.all(np.isfinite(g)):
            raise SamplerError("non-finite parameter gradient in SG-AdaHMC step")
        new = p - s2 * g / np.sqrt(C)
        if st.noise:
            var = np.maximum(2.0 * st.friction * s3 / C - s4, 0.0)
            new = new + np.sqrt(var) * rng.standard_normal(p.shape)
        out.append(new)
    if math.isfinite(st.tau):
        a = 1.0 / st.tau
        st.C = [np.maximum((1.0 - a) * C + a * g * g, st.floor) for C, g in zip(st.C, h)]
    return out
