"""Helpers shared by the ablation scripts."""
import csv
from pathlib import Path

from bbc.attacks import pgd
from bbc.config import ExperimentSpec
from bbc.ensemble import BbcEnsemble, train
from bbc.experiment import build_distance, prepare_data
from bbc.models import freeze, train_victim

ROOT = Path(__file__).resolve().parents[1]


def load(config, seed=None):
    spec = ExperimentSpec.from_file(config, seed=seed)
    data, ev = prepare_data(spec)
    victim = freeze(train_victim(data, spec.victim, spec.victim_sgld))
    return spec, data, ev, victim


def fit(spec, data, victim, heads=None, distance=None, skip_input=None):
    seed = spec.seeds()["bbc"]
    ens = BbcEnsemble.create(victim, heads or spec.heads, seed=seed, skip_input=skip_input or spec.skip_input,
                             activation=spec.head_activation, energy_u=spec.energy_u)
    spec.bbc.distance = build_distance(distance or spec.distance_kind, data, seed)
    train(ens, data, spec.bbc)
    return ens


def robust(model, ev, tm):
    return pgd(model, ev.x, ev.y, tm).robust_accuracy()


def write(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(" ".join(f"{k}={v}" for k, v in r.items()))
