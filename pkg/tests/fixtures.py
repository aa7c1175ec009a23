"""Shared fixture builders: the 1-D grid EBM and the canonical two-moons run."""
from functools import lru_cache
from pathlib import Path

import numpy as np

from bbc.config import ExperimentSpec
from bbc.ensemble import AppendedHead, BbcEnsemble, grad_h2, train, wrapped_logits
from bbc.experiment import build_distance, prepare_data
from bbc.models import VictimClassifier, freeze, logit_energy_score, train_victim
from bbc.numcore import LayerSpec
from bbc.samplers import SgldConfig, run_sgld_chain

import oracles

ROOT = Path(__file__).resolve().parents[1]
CANONICAL = ROOT / "configs" / "two_moons.ini"

# -- grid EBM ------------------------------------------------------------------
# A 1-D victim whose mean logit is a smooth bump on [0, 1], plus one random tanh
# head.  The density exp(U(g(x))) puts < 0.1% of its mass in the outer 20% of
# the interval, so clipping chains to [0, 1] hardly matters.

GRID = np.linspace(0.0, 1.0, 201)
GRID_POS = np.array([[0.35], [0.6]])
CD_CHAINS, CD_STEPS, CD_EPS = 256, 400, 0.03


def grid_ensemble(k=8.0, c=6.0):
    W1, b1 = np.array([[k, k]]), np.array([-0.3 * k, -0.7 * k])
    W2, b2 = np.array([[c, 0.5 * c], [-c, -0.5 * c]]), np.zeros(2)
    victim = freeze(VictimClassifier([W1, b1, W2, b2], [LayerSpec(1, 2, "tanh"), LayerSpec(2, 2, "identity")]))
    rng = np.random.default_rng(0)
    head = AppendedHead([rng.normal(0, 0.5, (2, 2)), rng.normal(0, 0.5, 2),
                         rng.normal(0, 0.5, (2, 2)), rng.normal(0, 0.5, 2)], "tanh")
    return BbcEnsemble(victim, [head])


def grid_exact_gradient(ens):
    """d/dtheta' [mean U(x+) - log sum_grid exp U(x)] by loops and central differences."""
    vp = ens.victim.params

    def U(hp, x):
        z = oracles.loop_mlp(vp, ["tanh", "identity"], [x])
        f = oracles.loop_mlp(hp, ["tanh", "identity"], z)
        return sum(a + b for a, b in zip(z, f)) / len(z)

    def objective(hp):
        u = np.array([U(hp, x) for x in GRID])
        m = u.max()
        return np.mean([U(hp, x[0]) for x in GRID_POS]) - (m + np.log(np.exp(u - m).sum()))

    return oracles.fd_params(objective, [p.copy() for p in ens.heads[0].params])


def grid_cd_estimate(ens, seed=0, chains=CD_CHAINS, steps=CD_STEPS, eps=CD_EPS):
    """Contrastive estimate with negatives from the second half of every chain."""
    rng = np.random.default_rng(seed)
    keep = []

    def logp(xt):
        return logit_energy_score(wrapped_logits(ens, 0, xt), ens.energy_u)

    run_sgld_chain(rng.uniform(0, 1, (chains, 1)), logp, SgldConfig(eps, steps, clip=(0.0, 1.0)), rng,
                   callback=lambda t, s: keep.append(s.copy()) if t >= steps // 2 else None)
    return grad_h2(ens, 0, GRID_POS, np.concatenate(keep))


# -- canonical two-moons run -----------------------------------------------------

@lru_cache(maxsize=None)
def canonical():
    """(spec, train data, eval data, frozen victim, trained 5-head ensemble, victim checksum before)."""
    spec = ExperimentSpec.from_file(CANONICAL)
    data, eval_data = prepare_data(spec)
    victim = freeze(train_victim(data, spec.victim, spec.victim_sgld))
    before = victim.current_checksum()
    seed = spec.seeds()["bbc"]
    ens = BbcEnsemble.create(victim, spec.heads, seed=seed, skip_input=spec.skip_input,
                             activation=spec.head_activation, energy_u=spec.energy_u)
    spec.bbc.distance = build_distance(spec.distance_kind, data, seed)
    train(ens, data, spec.bbc)
    return spec, data, eval_data, victim, ens, before


def prefix(ens, n):
    """The first n heads of a trained ensemble; equals an n-head run with the same seed."""
    return BbcEnsemble(ens.victim, ens.heads[:n], ens.skip_input, ens.energy_u)
