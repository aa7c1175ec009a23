"""End-to-end pipeline: data -> victim -> BBC heads -> attacks -> reports.

``run_experiment`` writes into ``spec.output_dir``:

    metrics.csv     model, metric, value
    attacks.csv     one row per (attack, sample) on the defended model
    gradstats.csv   |expected input gradient| percentiles per head count
    detection.csv   when [detect] is configured
    manifest.json   config hash, seeds, energy choice, checksums, timestamp

CSV bodies are byte-identical across reruns of the same spec and seed in
single-threaded mode; timestamps live only in the manifest.
"""
from __future__ import annotations

import csv
import datetime as _dt
import json
import logging
from pathlib import Path

import numpy as np

from .attacks import ATTACKS, AttackResult
from .config import ExperimentSpec
from .data import Dataset, gen_data, motion_skeleton
from .distances import DistanceFn, FeatureExtractor
from .ensemble import BbcEnsemble, expected_input_gradient, train
from .errors import ConfigError, ContractError
from .models import TrainConfig, VictimClassifier, freeze, train_standard, train_victim
from .rng import stream
from .variants import detect, randomized_defend, roc_metrics

log = logging.getLogger(__name__)

ATTACK_FIELDS = ["sample_id", "attack", "norm", "epsilon", "iterations", "success", "queries", "l2_dist", "linf_dist"]
DETECT_FIELDS = ["sample_id", "is_adversarial_truth", "score", "flagged"]
GRAD_PERCENTILES = (1, 5, 25, 50, 75, 95, 99)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: str | Path, fields: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([_fmt(row[f]) for f in fields])


def load_model(path: str | Path):
    """Victim or ensemble, by checkpoint type."""
    from . import checkpoint
    desc, _ = checkpoint.load(path)
    if desc.get("type") == "ensemble":
        return BbcEnsemble.load(path)
    return VictimClassifier.load(path)


def attack_rows(name: str, attack_kind: str, res: AttackResult, x: np.ndarray, tm) -> list[dict]:
    delta = res.x_adv - x
    l2 = np.linalg.norm(delta, axis=1)
    linf = np.abs(delta).max(axis=1)
    iters = 1 if attack_kind == "fgsm" else (tm.query_budget if attack_kind == "score_query" else tm.iterations)
    return [{"sample_id": i, "attack": name, "norm": tm.norm, "epsilon": tm.epsilon, "iterations": iters,
             "success": bool(res.success[i]), "queries": int(res.queries[i]), "l2_dist": l2[i], "linf_dist": linf[i]}
            for i in range(len(x))]


def gradient_stats(ens: BbcEnsemble, x: np.ndarray, y: np.ndarray, head_counts) -> list[dict]:
    """Percentiles of |expected input-gradient components| using the first n heads."""
    rows = []
    for n in head_counts:
        if not 1 <= n <= ens.n_heads:
            raise ConfigError(f"gradstats head count {n} outside 1..{ens.n_heads}")
        sub = BbcEnsemble(ens.victim, ens.heads[:n], ens.skip_input, ens.energy_u)
        mag = np.abs(expected_input_gradient(sub, x, y)).ravel()
        row = {"heads": n, "components": mag.size}
        row.update({f"p{q}": float(np.percentile(mag, q)) for q in GRAD_PERCENTILES})
        row["frac_above_1e-10"] = float(np.mean(mag > 1e-10))
        row["frac_below_1e-10"] = float(np.mean(mag <= 1e-10))
        rows.append(row)
    return rows


def build_distance(kind: str, data: Dataset, seed: int) -> DistanceFn:
    if kind == "euclidean_sq":
        return DistanceFn()
    if kind == "motion_manifold":
        frames = int(data.meta.get("frames", data.dim // 15))
        return DistanceFn("motion_manifold", skeleton=motion_skeleton(frames))
    # a small feature network trained on the same data stands in for a pretrained perceptual net
    fnet = train_standard(data, TrainConfig(epochs=50, learning_rate=0.1, seed=seed, hidden=(32, 16)))
    return DistanceFn("perceptual", extractor=FeatureExtractor(fnet.params, fnet.arch, tap_layers=[0, 1]))


def prepare_data(spec: ExperimentSpec) -> tuple[Dataset, Dataset]:
    seeds = spec.seeds()
    if spec.data_file is not None:
        data = Dataset.from_csv(spec.data_file)
    else:
        data = gen_data(spec.data_kind, seeds["data"] % (2 ** 31), **spec.data_params)
    params = dict(spec.data_params)
    if "n" in params or spec.data_kind in ("moons2d", "blobs2d", "tinygrid", "motion_proc"):
        params["n"] = spec.eval_n
    eval_data = gen_data(data.kind, seeds["eval_data"] % (2 ** 31), **params)
    return data, eval_data


def run_experiment(spec: ExperimentSpec) -> dict[str, Path]:
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = spec.seeds()
    data, eval_data = prepare_data(spec)

    if spec.victim_checkpoint is not None:
        if not spec.victim_checkpoint.exists():
            raise ConfigError(f"victim checkpoint {spec.victim_checkpoint} does not exist")
        victim = freeze(VictimClassifier.load(spec.victim_checkpoint))
    else:
        victim = freeze(train_victim(data, spec.victim, spec.victim_sgld))
        victim.save(out / "victim.bbc")
    checksum_before = victim.current_checksum()

    if spec.ensemble_checkpoint is not None:
        if not spec.ensemble_checkpoint.exists():
            raise ConfigError(f"ensemble checkpoint {spec.ensemble_checkpoint} does not exist")
        ens = BbcEnsemble.load(spec.ensemble_checkpoint)
    else:
        ens = BbcEnsemble.create(victim, spec.heads, seed=seeds["bbc"], skip_input=spec.skip_input,
                                 activation=spec.head_activation, energy_u=spec.energy_u)
        spec.bbc.distance = build_distance(spec.distance_kind, data, seeds["bbc"])
        train(ens, data, spec.bbc)
        ens.save(out / "ensemble.bbc")
    checksum_after = ens.victim.current_checksum()
    if spec.ensemble_checkpoint is None and checksum_after != checksum_before:
        raise ContractError("victim checksum changed during the pipeline")

    x, y = eval_data.x, eval_data.y
    metrics = [{"model": "victim", "metric": "clean_accuracy", "value": victim.accuracy(eval_data)},
               {"model": "bbc", "metric": "clean_accuracy", "value": ens.accuracy(eval_data)}]
    attack_log, results = [], {}
    for a in spec.attacks:
        tm = a.threat
        if tm.box is not None:
            tm.box = data.box
        fn = ATTACKS[a.kind]
        res_v = fn(victim, x, y, tm)
        res_b = fn(ens, x, y, tm)
        results[a.name] = res_b
        metrics.append({"model": "victim", "metric": f"robust_accuracy:{a.name}", "value": res_v.robust_accuracy()})
        metrics.append({"model": "bbc", "metric": f"robust_accuracy:{a.name}", "value": res_b.robust_accuracy()})
        attack_log.extend(attack_rows(a.name, a.kind, res_b, x, tm))

    if spec.randomized_sigmas:
        res = results[spec.randomized_attack]
        for k, sigma in enumerate(spec.randomized_sigmas):
            rng = stream(spec.seed, "randomized", k)
            acc = float(np.mean(randomized_defend(ens, res.x_adv, sigma, rng).argmax(axis=1) == y))
            metrics.append({"model": "bbc", "metric": f"randomized_robust_accuracy:{spec.randomized_attack}:sigma={sigma!r}",
                            "value": acc})

    written = {}
    if spec.detector is not None:
        res = results[spec.detect_attack]
        clean_scores, clean_flags = detect(ens, x, spec.detector, stream(spec.seed, "detect", 0))
        adv_scores, adv_flags = detect(ens, res.x_adv, spec.detector, stream(spec.seed, "detect", 1))
        tpr, fpr, auroc = roc_metrics(clean_scores, adv_scores, spec.detector.threshold)
        metrics += [{"model": "bbc", "metric": f"detect_{k}:{spec.detect_attack}", "value": v}
                    for k, v in (("tpr", tpr), ("fpr", fpr), ("auroc", auroc))]
        rows = [{"sample_id": i, "is_adversarial_truth": False, "score": s, "flagged": bool(f)}
                for i, (s, f) in enumerate(zip(clean_scores, clean_flags))]
        rows += [{"sample_id": len(x) + i, "is_adversarial_truth": True, "score": s, "flagged": bool(f)}
                 for i, (s, f) in enumerate(zip(adv_scores, adv_flags))]
        write_csv(out / "detection.csv", DETECT_FIELDS, rows)
        written["detection"] = out / "detection.csv"

    write_csv(out / "metrics.csv", ["model", "metric", "value"], metrics)
    write_csv(out / "attacks.csv", ATTACK_FIELDS, attack_log)
    grad_rows = gradient_stats(ens, x[:spec.gradstats_samples], y[:spec.gradstats_samples], spec.gradstats_heads) \
        if spec.gradstats_heads else []
    grad_fields = ["heads", "components"] + [f"p{q}" for q in GRAD_PERCENTILES] + ["frac_above_1e-10", "frac_below_1e-10"]
    write_csv(out / "gradstats.csv", grad_fields, grad_rows)

    manifest = {
        "config_sha256": spec.config_hash,
        "root_seed": spec.seed,
        "seeds": seeds,
        "energy_u": ens.energy_u,
        "skip_input": ens.skip_input,
        "heads": ens.n_heads,
        "distance": spec.distance_kind,
        "victim_checksum_before": checksum_before,
        "victim_checksum_after": checksum_after,
        "single_threaded": True,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    written.update({"metrics": out / "metrics.csv", "attacks": out / "attacks.csv",
                    "gradstats": out / "gradstats.csv", "manifest": out / "manifest.json"})
    return written
