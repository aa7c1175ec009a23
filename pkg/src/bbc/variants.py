"""Noise-based add-ons: randomized input transformation and a
prediction-disagreement detector, plus ROC metrics for the detector."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import mannwhitneyu

from .ensemble import predict_bma
from .errors import ConfigError, ContractError


def randomized_defend(ens, x, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """BMA probabilities at ``x + N(0, sigma^2 I)``."""
    if sigma < 0:
        raise ContractError("sigma must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    if sigma == 0:
        return predict_bma(ens, x)
    return predict_bma(ens, x + sigma * rng.standard_normal(x.shape))


@dataclass
class DetectorConfig:
    noise_std: float = 0.03
    draws: int = 16
    threshold: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.draws < 1:
            raise ConfigError("detector needs at least one noise draw")
        if self.noise_std < 0:
            raise ConfigError("noise std must be non-negative")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("threshold must lie in [0, 1]")


def detect(ens, x, cfg: DetectorConfig, rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Fraction of noisy draws whose predicted class differs from the clean prediction.

    Returns ``(scores, flags)`` with ``flags = scores > threshold``.  With one
    draw and threshold 0 this is the single-draw disagreement rule.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    base = ens.predict_proba(x).argmax(axis=1)
    changed = np.zeros(len(x))
    if cfg.noise_std > 0:
        for _ in range(cfg.draws):
            noisy = x + cfg.noise_std * rng.standard_normal(x.shape)
            changed += ens.predict_proba(noisy).argmax(axis=1) != base
    scores = changed / cfg.draws
    return scores, scores > cfg.threshold


def roc_metrics(scores_clean, scores_adv, threshold: float) -> tuple[float, float, float]:
    """(TPR, FPR, AUROC) treating adversarial samples as positives.

    AUROC is the trapezoidal area over all thresholds, which equals the
    Mann-Whitney statistic with ties counted one half.
    """
    clean = np.asarray(scores_clean, dtype=np.float64).ravel()
    adv = np.asarray(scores_adv, dtype=np.float64).ravel()
    if clean.size == 0 or adv.size == 0:
        raise ContractError("both score pools must be non-empty")
    tpr = float(np.mean(adv > threshold))
    fpr = float(np.mean(clean > threshold))
    auroc = float(mannwhitneyu(adv, clean).statistic / (adv.size * clean.size))
    return tpr, fpr, auroc
