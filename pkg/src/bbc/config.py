"""INI experiment configuration.

Sections: [experiment], [data], [victim], [bbc], [attack.<name>] (any number),
[randomized], [detect], [gradstats].  Greek hyperparameters use ASCII names:
lambda, epsilon, sigma, friction, tau, rho.  See configs/two_moons.ini.
"""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .attacks import ATTACKS, ThreatModel
from .distances import KINDS as DISTANCE_KINDS
from .ensemble import BbcTrainConfig
from .errors import ConfigError
from .models import TrainConfig
from .rng import derive_seed, root_seed
from .samplers import AdaHmcState, SgldConfig
from .variants import DetectorConfig

ALLOWED = {
    "experiment": {"seed", "output_dir", "eval_n"},
    "data": {"kind", "file", "n", "noise", "centers", "classes", "frames", "std"},
    "victim": {"mode", "epochs", "batch_size", "learning_rate", "hidden", "activation", "checkpoint",
               "energy_u", "energy_weight", "sgld_epsilon", "sgld_steps", "rho"},
    "bbc": {"heads", "iterations", "lambda", "batch_pos", "batch_neg", "x_epsilon", "x_steps", "x_noise",
            "adv_epsilon", "adv_steps", "adv_noise", "sigma", "friction", "tau", "inner_steps", "init_radius",
            "rho", "buffer_capacity", "distance", "skip_input", "energy_u", "head_activation", "clip_to_box",
            "checkpoint"},
    "attack": {"kind", "norm", "epsilon", "alpha", "iterations", "eot_samples", "eot_noise_std",
               "random_start", "query_budget"},
    "randomized": {"sigma", "attack"},
    "detect": {"noise_std", "draws", "threshold", "attack"},
    "gradstats": {"heads", "samples"},
}


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(" ", "").split(",") if v)


def _opt_float(sec, key):
    v = sec.get(key)
    return None if v in (None, "", "none") else float(v)


@dataclass
class AttackSpec:
    name: str
    kind: str
    threat: ThreatModel


@dataclass
class ExperimentSpec:
    seed: int
    output_dir: Path
    data_kind: str
    data_params: dict
    data_file: Path | None
    eval_n: int
    victim: TrainConfig
    victim_sgld: SgldConfig
    victim_checkpoint: Path | None
    bbc: BbcTrainConfig
    distance_kind: str
    heads: int
    skip_input: str
    energy_u: str
    head_activation: str
    ensemble_checkpoint: Path | None
    attacks: list[AttackSpec] = field(default_factory=list)
    randomized_sigmas: tuple[float, ...] = ()
    randomized_attack: str | None = None
    detector: DetectorConfig | None = None
    detect_attack: str | None = None
    gradstats_heads: tuple[int, ...] = ()
    gradstats_samples: int = 500
    source_text: str = ""

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.source_text.encode()).hexdigest()

    def seeds(self) -> dict[str, int]:
        return {c: derive_seed(self.seed, c) for c in ("data", "eval_data", "victim", "bbc", "attack", "detect", "randomized")}

    @classmethod
    def from_file(cls, path: str | Path, seed: int | None = None) -> "ExperimentSpec":
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        return cls.from_text(p.read_text(), base_dir=p.parent, seed=seed)

    @classmethod
    def from_text(cls, text: str, base_dir: Path | None = None, seed: int | None = None) -> "ExperimentSpec":
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text)
            return cls._parse(cp, text, base_dir or Path("."), seed)
        except (configparser.Error, ValueError, KeyError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"config parse failure: {exc}") from exc

    @classmethod
    def _parse(cls, cp, text, base_dir: Path, seed_arg) -> "ExperimentSpec":
        for name in cp.sections():
            base = "attack" if name.startswith("attack.") else name
            if base not in ALLOWED:
                raise ConfigError(f"unknown config section [{name}]")
            unknown = set(cp[name]) - ALLOWED[base]
            if unknown:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")

        ex = cp["experiment"] if cp.has_section("experiment") else {}
        seed = root_seed(seed_arg if seed_arg is not None else int(ex.get("seed", 0)))
        seeds = {c: derive_seed(seed, c) for c in ("victim", "bbc", "attack", "detect")}

        def path_or_none(v):
            return None if v in (None, "") else (base_dir / v if not Path(v).is_absolute() else Path(v))

        d = cp["data"] if cp.has_section("data") else {}
        kind = d.get("kind", "moons2d")
        params = {}
        for key, conv in (("n", int), ("noise", float), ("centers", int), ("classes", int), ("frames", int), ("std", float)):
            if key in d:
                params[key] = conv(d[key])

        v = cp["victim"] if cp.has_section("victim") else {}
        mode = {"standard": "standard", "jem": "energy_joint", "energy_joint": "energy_joint"}.get(v.get("mode", "standard"))
        if mode is None:
            raise ConfigError(f"unknown victim mode {v.get('mode')!r}")
        victim = TrainConfig(epochs=int(v.get("epochs", 200)), batch_size=int(v.get("batch_size", 32)),
                             learning_rate=float(v.get("learning_rate", 0.1)), seed=seeds["victim"], mode=mode,
                             hidden=_ints(v.get("hidden", "32,32")), activation=v.get("activation", "relu"),
                             energy_weight=float(v.get("energy_weight", 1.0)), energy_u=v.get("energy_u", "mean"),
                             reinit_prob=float(v.get("rho", 0.05)))
        victim_sgld = SgldConfig(step_size=float(v.get("sgld_epsilon", 0.05)), steps=int(v.get("sgld_steps", 20)))

        b = cp["bbc"] if cp.has_section("bbc") else {}
        dist_kind = b.get("distance", "euclidean_sq")
        if dist_kind not in DISTANCE_KINDS:
            raise ConfigError(f"unknown distance {dist_kind!r}")
        bbc = BbcTrainConfig(
            iterations=int(b.get("iterations", 200)), lam=float(b.get("lambda", 1.0)),
            batch_pos=int(b.get("batch_pos", 64)), batch_neg=int(b.get("batch_neg", 64)),
            sgld_x=SgldConfig(float(b.get("x_epsilon", 0.05)), int(b.get("x_steps", 20)), _opt_float(b, "x_noise")),
            sgld_adv=SgldConfig(float(b.get("adv_epsilon", 0.05)), int(b.get("adv_steps", 10)), _opt_float(b, "adv_noise")),
            hmc=AdaHmcState(sigma=float(b.get("sigma", 0.05)), friction=float(b.get("friction", 1.0)),
                            tau=float(b.get("tau", 1000.0)), inner_steps=int(b.get("inner_steps", 1))),
            init_radius=float(b.get("init_radius", 0.05)), reinit_prob=float(b.get("rho", 0.05)),
            buffer_capacity=int(b.get("buffer_capacity", 2000)),
            clip_to_box=b.get("clip_to_box", "true").lower() in ("1", "true", "yes"), seed=seeds["bbc"])

        attacks = []
        for idx, name in enumerate(s for s in cp.sections() if s.startswith("attack.")):
            a = cp[name]
            akind = a.get("kind", "pgd")
            if akind not in ATTACKS:
                raise ConfigError(f"unknown attack kind {akind!r} in [{name}]")
            tm = ThreatModel(norm=a.get("norm", "linf"), epsilon=float(a.get("epsilon", 0.15)),
                             step=_opt_float(a, "alpha"), iterations=int(a.get("iterations", 20)),
                             eot_samples=int(a.get("eot_samples", 1)), eot_noise_std=float(a.get("eot_noise_std", 0.0)),
                             random_start=a.get("random_start", "false").lower() in ("1", "true", "yes"),
                             query_budget=int(a.get("query_budget", 1000)), seed=derive_seed(seed, "attack", idx))
            attacks.append(AttackSpec(name.split(".", 1)[1], akind, tm))
        names = {a.name for a in attacks}

        r = cp["randomized"] if cp.has_section("randomized") else None
        det = cp["detect"] if cp.has_section("detect") else None
        for sec, key in ((r, "attack"), (det, "attack")):
            if sec is not None and sec.get(key) not in names:
                raise ConfigError(f"[{sec.name}] refers to unknown attack {sec.get(key)!r}")
        detector = None if det is None else DetectorConfig(float(det.get("noise_std", 0.03)), int(det.get("draws", 16)),
                                                           float(det.get("threshold", 0.0)), seeds["detect"])
        g = cp["gradstats"] if cp.has_section("gradstats") else None
        return cls(
            seed=seed, output_dir=path_or_none(ex.get("output_dir", "out")), data_kind=kind, data_params=params,
            data_file=path_or_none(d.get("file")), eval_n=int(ex.get("eval_n", 500)),
            victim=victim, victim_sgld=victim_sgld, victim_checkpoint=path_or_none(v.get("checkpoint")),
            bbc=bbc, distance_kind=dist_kind, heads=int(b.get("heads", 5)), skip_input=b.get("skip_input", "victim_logits"),
            energy_u=b.get("energy_u", "mean"), head_activation=b.get("head_activation", "relu"),
            ensemble_checkpoint=path_or_none(b.get("checkpoint")), attacks=attacks,
            randomized_sigmas=_floats(r.get("sigma", "")) if r is not None else (),
            randomized_attack=r.get("attack") if r is not None else None,
            detector=detector, detect_attack=det.get("attack") if det is not None else None,
            gradstats_heads=_ints(g.get("heads", "")) if g is not None else (),
            gradstats_samples=int(g.get("samples", 500)) if g is not None else 500,
            source_text=text,
        )
