"""White-box and score-based attacks on anything exposing ``member_logits``
and ``predict_proba`` (a victim or a BBC ensemble).

Gradient attacks differentiate the member-averaged cross-entropy, i.e. the
whole ensemble, never a single head.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .ensemble import loss_input_gradient
from .errors import ConfigError, ContractError


@dataclass
class ThreatModel:
    norm: str = "linf"
    epsilon: float = 0.15
    step: float | None = None       # None -> 2.5 * epsilon / iterations
    iterations: int = 20
    eot_samples: int = 1
    eot_noise_std: float = 0.0
    random_start: bool = False
    box: tuple[float, float] | None = (0.0, 1.0)
    query_budget: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.norm not in ("linf", "l2"):
            raise ConfigError(f"unknown norm {self.norm!r}")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be non-negative")
        if self.iterations < 1:
            raise ConfigError("attack needs at least one iteration")
        if self.eot_samples < 1:
            raise ConfigError("EoT needs at least one sample")
        if self.step is not None and self.step > self.epsilon:
            warnings.warn(f"attack step {self.step} exceeds epsilon {self.epsilon}", stacklevel=2)

    @property
    def alpha(self) -> float:
        return self.step if self.step is not None else 2.5 * self.epsilon / self.iterations


@dataclass
class AttackResult:
    x_adv: np.ndarray
    success: np.ndarray
    queries: np.ndarray
    loss: np.ndarray

    @property
    def success_rate(self) -> float:
        return float(np.mean(self.success))

    def robust_accuracy(self) -> float:
        return 1.0 - self.success_rate


def _prep(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if len(x) != len(y):
        raise ContractError(f"{len(x)} inputs but {len(y)} labels")
    return x, y


def clip_box(x: np.ndarray, tm: ThreatModel) -> np.ndarray:
    return x if tm.box is None else np.clip(x, tm.box[0], tm.box[1])


def project(x_adv: np.ndarray, x: np.ndarray, tm: ThreatModel) -> np.ndarray:
    """Nearest point of the epsilon ball around ``x``, then the data box."""
    eps = tm.epsilon
    if tm.norm == "linf":
        out = np.clip(x_adv, x - eps, x + eps)
    else:
        delta = x_adv - x
        norms = np.linalg.norm(delta, axis=1, keepdims=True)
        scale = np.where(norms > eps, eps / np.maximum(norms, 1e-300), 1.0)
        out = x + delta * scale
    return clip_box(out, tm)


def _ascent(g: np.ndarray, tm: ThreatModel) -> np.ndarray:
    if tm.norm == "linf":
        return np.sign(g)
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    return np.where(norms > 0, g / np.maximum(norms, 1e-300), 0.0)


def _finish(model, x_adv: np.ndarray, y: np.ndarray, queries) -> AttackResult:
    probs = model.predict_proba(x_adv)
    loss, _ = loss_input_gradient(model, x_adv, y)
    return AttackResult(x_adv, probs.argmax(axis=1) != y, np.broadcast_to(queries, y.shape).copy(), np.atleast_1d(loss))


def fgsm(model, x, y, tm: ThreatModel) -> AttackResult:
    """Single signed-gradient step of size epsilon."""
    if tm.norm != "linf":
        raise ContractError("FGSM is defined for the linf threat model")
    x, y = _prep(x, y)
    _, g = loss_input_gradient(model, x, y)
    return _finish(model, clip_box(x + tm.epsilon * np.sign(g), tm), y, 1)


def _eot_gradient(model, x_adv, y, tm: ThreatModel, rng: np.random.Generator) -> np.ndarray:
    total = None
    for _ in range(tm.eot_samples):
        xs = x_adv + tm.eot_noise_std * rng.standard_normal(x_adv.shape) if tm.eot_noise_std > 0 else x_adv
        _, g = loss_input_gradient(model, xs, y)
        total = g if total is None else total + g
    return total / tm.eot_samples


def eot_pgd(model, x, y, tm: ThreatModel) -> AttackResult:
    """PGD whose step direction uses the gradient averaged over K noisy copies."""
    x, y = _prep(x, y)
    rng = np.random.default_rng(tm.seed)
    x_adv = x.copy()
    if tm.random_start:
        if tm.norm == "linf":
            x_adv = x + rng.uniform(-tm.epsilon, tm.epsilon, size=x.shape)
        else:
            d = rng.standard_normal(x.shape)
            d *= tm.epsilon * rng.random((len(x), 1)) ** (1.0 / x.shape[1]) / np.linalg.norm(d, axis=1, keepdims=True)
            x_adv = x + d
        x_adv = project(x_adv, x, tm)
    for _ in range(tm.iterations):
        g = _eot_gradient(model, x_adv, y, tm, rng)
        x_adv = project(x_adv + tm.alpha * _ascent(g, tm), x, tm)
    return _finish(model, x_adv, y, tm.iterations * tm.eot_samples)


def pgd(model, x, y, tm: ThreatModel) -> AttackResult:
    """Projected gradient ascent on the ensemble loss for ``tm.iterations`` steps."""
    if tm.eot_samples != 1 or tm.eot_noise_std != 0:
        tm = ThreatModel(tm.norm, tm.epsilon, tm.alpha, tm.iterations, 1, 0.0, tm.random_start, tm.box,
                         tm.query_budget, tm.seed)
    return eot_pgd(model, x, y, tm)


def _prob_loss(probs: np.ndarray, y: np.ndarray) -> np.ndarray:
    return -np.log(np.maximum(probs[np.arange(len(y)), y], 1e-300))


def score_query_attack(model, x, y, tm: ThreatModel) -> AttackResult:
    """Random search over the epsilon ball using only output probabilities.

    Each round proposes, for every still-correct sample, a perturbation of a
    random coordinate subset (subset fraction shrinks over the budget) and
    keeps it when the probability loss of the true class increases.
    """
    x, y = _prep(x, y)
    budget = tm.query_budget
    n, dim = x.shape
    x_adv = x.copy()
    queries = np.zeros(n, dtype=np.int64)
    if budget <= 0:
        return AttackResult(x_adv, np.zeros(n, dtype=bool), queries, np.zeros(n))
    rng = np.random.default_rng(tm.seed)
    probs = model.predict_proba(x_adv)
    queries[:] = 1
    best = _prob_loss(probs, y)
    done = probs.argmax(axis=1) != y
    eps = tm.epsilon
    for q in range(1, budget):
        active = np.flatnonzero(~done)
        if active.size == 0:
            break
        frac = max(0.3 * (1.0 - q / budget), 1.0 / dim)
        mask = rng.random((active.size, dim)) < frac
        mask[np.arange(active.size), rng.integers(dim, size=active.size)] = True
        cand = x_adv[active].copy()
        if tm.norm == "linf":
            vals = x[active] + eps * rng.choice([-1.0, 1.0], size=(active.size, dim)) * rng.uniform(0.5, 1.0, size=(active.size, dim))
            cand[mask] = vals[mask]
        else:
            step = np.where(mask, rng.standard_normal((active.size, dim)), 0.0)
            step *= eps / np.maximum(np.linalg.norm(step, axis=1, keepdims=True), 1e-300)
            cand = cand + step
        cand = project(cand, x[active], tm)
        p = model.predict_proba(cand)
        queries[active] += 1
        loss = _prob_loss(p, y[active])
        better = loss > best[active]
        keep = active[better]
        x_adv[keep] = cand[better]
        best[keep] = loss[better]
        done[active] = done[active] | (better & (p.argmax(axis=1) != y[active]))
    probs = model.predict_proba(x_adv)
    return AttackResult(x_adv, probs.argmax(axis=1) != y, queries, _prob_loss(probs, y))


def budget_ok(res: AttackResult, x, tm: ThreatModel, tol: float = 1e-9) -> bool:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    delta = res.x_adv - x
    norms = np.abs(delta).max(axis=1) if tm.norm == "linf" else np.linalg.norm(delta, axis=1)
    in_box = True if tm.box is None else bool(np.all((res.x_adv >= tm.box[0] - tol) & (res.x_adv <= tm.box[1] + tol)))
    return bool(np.all(norms <= tm.epsilon + tol)) and in_box


ATTACKS = {"fgsm": fgsm, "pgd": pgd, "eot_pgd": eot_pgd, "score_query": score_query_attack}
