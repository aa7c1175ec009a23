"""Command line entry point: ``bbc <subcommand>`` or ``python -m bbc``.

Exit codes: 0 success, 2 configuration or contract error, 3 numeric abort.
BBC_SEED overrides every root seed.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path


from .attacks import ATTACKS, ThreatModel
from .config import ExperimentSpec
from .data import KINDS as DATA_KINDS, Dataset, gen_data
from .distances import KINDS as DISTANCE_KINDS
from .ensemble import BbcEnsemble, BbcTrainConfig, train
from .errors import ConfigError, ContractError, DimensionError, NumericError
from .experiment import (ATTACK_FIELDS, DETECT_FIELDS, GRAD_PERCENTILES, attack_rows, build_distance,
                         gradient_stats, load_model, run_experiment, write_csv)
from .models import TrainConfig, freeze, train_victim
from .rng import derive_seed, root_seed, stream
from .samplers import AdaHmcState, SgldConfig
from .variants import DetectorConfig, detect, roc_metrics


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def cmd_gen_data(a) -> int:
    params = {k: v for k, v in (("n", a.n), ("noise", a.noise), ("classes", a.classes), ("frames", a.frames))
              if v is not None}
    data = gen_data(a.kind, root_seed(a.seed), **params)
    data.to_csv(a.out)
    print(f"wrote {len(data)} samples of {data.kind} to {a.out}")
    return 0


def cmd_train_victim(a) -> int:
    data = Dataset.from_csv(a.data)
    mode = "energy_joint" if a.mode == "jem" else "standard"
    seed = root_seed(a.seed)
    cfg = TrainConfig(epochs=a.epochs, batch_size=a.batch_size, learning_rate=a.learning_rate,
                      seed=derive_seed(seed, "victim"), mode=mode, hidden=_ints(a.hidden),
                      activation=a.activation, energy_u=a.energy_u)
    victim = freeze(train_victim(data, cfg, SgldConfig(a.sgld_epsilon, a.sgld_steps)))
    victim.save(a.out)
    print(f"victim accuracy {victim.accuracy(data):.4f} checksum {victim.current_checksum():016x}")
    return 0


def cmd_bbc_train(a) -> int:
    data = Dataset.from_csv(a.data)
    victim = freeze(load_model(a.victim))
    seed = derive_seed(root_seed(a.seed), "bbc")
    ens = BbcEnsemble.create(victim, a.heads, seed=seed, skip_input=a.skip_input,
                             activation=a.head_activation, energy_u=a.energy_u)
    cfg = BbcTrainConfig(iterations=a.iterations, lam=a.lam, batch_pos=a.batch_pos, batch_neg=a.batch_neg,
                         sgld_x=SgldConfig(a.x_epsilon, a.x_steps), sgld_adv=SgldConfig(a.adv_epsilon, a.adv_steps),
                         hmc=AdaHmcState(sigma=a.sigma, friction=a.friction, tau=a.tau),
                         distance=build_distance(a.distance, data, seed), reinit_prob=a.rho, seed=seed)
    before = victim.current_checksum()
    train(ens, data, cfg)
    ens.save(a.out)
    print(f"bbc accuracy {ens.accuracy(data):.4f} victim checksum {before:016x} -> {victim.current_checksum():016x}")
    return 0


def _threat(a, data: Dataset) -> ThreatModel:
    return ThreatModel(norm=a.norm, epsilon=a.epsilon, step=a.alpha, iterations=a.iterations,
                       eot_samples=a.eot_samples, eot_noise_std=a.eot_noise_std, random_start=a.random_start,
                       box=data.box, query_budget=a.query_budget, seed=derive_seed(root_seed(a.seed), "attack"))


def cmd_attack(a) -> int:
    data = Dataset.from_csv(a.data)
    model = load_model(a.model)
    tm = _threat(a, data)
    res = ATTACKS[a.kind](model, data.x, data.y, tm)
    if a.out:
        write_csv(a.out, ATTACK_FIELDS, attack_rows(a.kind, a.kind, res, data.x, tm))
    print(f"{a.kind} robust_accuracy {res.robust_accuracy():.4f} success_rate {res.success_rate:.4f}")
    return 0


def cmd_evaluate(a) -> int:
    data = Dataset.from_csv(a.data)
    print(f"clean_accuracy {load_model(a.model).accuracy(data):.4f}")
    return 0


def cmd_detect(a) -> int:
    data = Dataset.from_csv(a.data)
    ens = load_model(a.model)
    if not isinstance(ens, BbcEnsemble):
        raise ConfigError("detect needs an ensemble checkpoint")
    seed = root_seed(a.seed)
    res = ATTACKS[a.kind](ens, data.x, data.y, _threat(a, data))
    cfg = DetectorConfig(a.noise_std, a.draws, a.threshold, derive_seed(seed, "detect"))
    sc, fc = detect(ens, data.x, cfg, stream(seed, "detect", 0))
    sa, fa = detect(ens, res.x_adv, cfg, stream(seed, "detect", 1))
    tpr, fpr, auroc = roc_metrics(sc, sa, cfg.threshold)
    if a.out:
        n = len(data)
        rows = [{"sample_id": i, "is_adversarial_truth": False, "score": s, "flagged": f} for i, (s, f) in enumerate(zip(sc, fc))]
        rows += [{"sample_id": n + i, "is_adversarial_truth": True, "score": s, "flagged": f} for i, (s, f) in enumerate(zip(sa, fa))]
        write_csv(a.out, DETECT_FIELDS, rows)
    print(f"tpr {tpr:.4f} fpr {fpr:.4f} auroc {auroc:.4f}")
    return 0


def cmd_grad_stats(a) -> int:
    data = Dataset.from_csv(a.data)
    ens = load_model(a.model)
    if not isinstance(ens, BbcEnsemble):
        raise ConfigError("grad-stats needs an ensemble checkpoint")
    heads = _ints(a.heads) if a.heads else tuple(range(1, ens.n_heads + 1))
    rows = gradient_stats(ens, data.x[:a.samples], data.y[:a.samples], heads)
    fields = ["heads", "components"] + [f"p{q}" for q in GRAD_PERCENTILES] + ["frac_above_1e-10", "frac_below_1e-10"]
    if a.out:
        write_csv(a.out, fields, rows)
    for r in rows:
        print(f"heads={r['heads']} median={r['p50']:.3e}")
    return 0


def cmd_run(a) -> int:
    spec = ExperimentSpec.from_file(a.config, seed=a.seed)
    if a.output_dir:
        spec.output_dir = Path(a.output_dir)
    for name, path in run_experiment(spec).items():
        print(f"{name}: {path}")
    return 0


def _attack_flags(p) -> None:
    p.add_argument("--kind", choices=sorted(ATTACKS), default="pgd")
    p.add_argument("--norm", choices=["linf", "l2"], default="linf")
    p.add_argument("--epsilon", type=float, default=0.15)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--iterations", type=int, default=20)
    p.add_argument("--eot-samples", type=int, default=1)
    p.add_argument("--eot-noise-std", type=float, default=0.0)
    p.add_argument("--random-start", action="store_true")
    p.add_argument("--query-budget", type=int, default=1000)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bbc", description="Post-train black-box defense via appended Bayesian heads.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a toy dataset as CSV")
    p.add_argument("--kind", choices=DATA_KINDS, default="moons2d")
    p.add_argument("--n", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--classes", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train-victim", help="train and freeze the victim classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=["standard", "jem"], default="standard")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--hidden", default="32,32")
    p.add_argument("--activation", choices=["relu", "tanh"], default="relu")
    p.add_argument("--energy-u", choices=["mean", "logsumexp"], default="mean")
    p.add_argument("--sgld-epsilon", type=float, default=0.05)
    p.add_argument("--sgld-steps", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train_victim)

    p = sub.add_parser("bbc-train", help="train appended heads on a frozen victim")
    p.add_argument("--data", required=True)
    p.add_argument("--victim", required=True)
    p.add_argument("--heads", type=int, default=5)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--batch-pos", type=int, default=64)
    p.add_argument("--batch-neg", type=int, default=64)
    p.add_argument("--x-epsilon", type=float, default=0.05)
    p.add_argument("--x-steps", type=int, default=20)
    p.add_argument("--adv-epsilon", type=float, default=0.05)
    p.add_argument("--adv-steps", type=int, default=10)
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--friction", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=1000.0)
    p.add_argument("--rho", type=float, default=0.05)
    p.add_argument("--distance", choices=DISTANCE_KINDS, default="euclidean_sq")
    p.add_argument("--skip-input", choices=["victim_logits", "latent_features"], default="victim_logits")
    p.add_argument("--energy-u", choices=["mean", "logsumexp"], default="mean")
    p.add_argument("--head-activation", choices=["relu", "tanh"], default="relu")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_bbc_train)

    p = sub.add_parser("attack", help="attack a victim or ensemble checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    _attack_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("evaluate", help="clean accuracy of a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("detect", help="noise-disagreement detector on clean vs attacked pools")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    _attack_flags(p)
    p.add_argument("--noise-std", type=float, default=0.03)
    p.add_argument("--draws", type=int, default=16)
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_detect)

    p = sub.add_parser("grad-stats", help="expected input-gradient magnitudes per head count")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--heads", default="")
    p.add_argument("--samples", type=int, default=500)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_grad_stats)

    p = sub.add_parser("run", help="full pipeline from an INI experiment file")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_run)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, ContractError, DimensionError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
