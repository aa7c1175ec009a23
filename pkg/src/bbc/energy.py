"""Energy-based reading of a classifier's logits.

``EnergyView`` wraps any function mapping an input tensor to logits and exposes
the data energy, the class posterior, and the clean/adversarial log densities
(unnormalized; the partition-function ratio is taken to be one).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .distances import DistanceFn
from .errors import ConfigError, ContractError, DimensionError
from .numcore import Tensor, as_tensor, log_softmax, logsumexp, softmax

LogitsFn = Callable[[Tensor], Tensor]


def _labels(y, batch: int | None, num_classes: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if np.any(y < 0) or np.any(y >= num_classes):
        raise ContractError(f"label out of range [0, {num_classes})")
    if batch is not None and y.shape not in ((), (batch,)):
        raise DimensionError(f"{y.shape} labels for a batch of {batch}")
    return y


def _batched(x) -> tuple[Tensor, bool]:
    x = as_tensor(x)
    if x.ndim == 1:
        return x.reshape(1, -1), True
    return x, False


@dataclass
class EnergyView:
    model: LogitsFn
    lam: float = 1.0
    distance: DistanceFn = field(default_factory=DistanceFn)

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")

    def logits(self, x) -> Tensor:
        return self.model(as_tensor(x))

    def data_energy(self, x) -> Tensor:
        """E(x) = -logsumexp(logits); one value per sample."""
        xb, single = _batched(x)
        e = -logsumexp(self.logits(xb), axis=-1)
        return e.reshape(()) if single else e

    def class_conditional(self, x) -> np.ndarray:
        xb, single = _batched(x)
        p = softmax(self.logits(xb).data, axis=-1)
        return p[0] if single else p

    def log_class_conditional(self, x) -> Tensor:
        xb, single = _batched(x)
        lp = log_softmax(self.logits(xb), axis=-1)
        return lp.reshape(-1) if single else lp

    def _logit_at(self, x: Tensor, y) -> Tensor:
        z = self.logits(x)
        y = _labels(y, x.shape[0], z.shape[-1])
        return z.pick(np.broadcast_to(y, (x.shape[0],)))

    def adv_conditional_logdensity(self, x, x_adv, y) -> Tensor:
        """log p(x_adv | x, y) up to a constant: g(x_adv)[y] - lam * d(x, x_adv)."""
        xb, single = _batched(x)
        xab, _ = _batched(x_adv)
        if xb.shape != xab.shape:
            raise DimensionError(f"clean {xb.shape} and adversarial {xab.shape} differ")
        out = self._logit_at(xab, y) - self.lam * self.distance(xb, xab)
        return out.reshape(()) if single else out

    def joint_logdensity_unnorm(self, x, x_adv, y) -> Tensor:
        """g(x)[y] + g(x_adv)[y] - lam * d(x, x_adv)."""
        xb, single = _batched(x)
        xab, _ = _batched(x_adv)
        out = self._logit_at(xb, y) + self.adv_conditional_logdensity(xb, xab, y)
        return out.reshape(()) if single else out
