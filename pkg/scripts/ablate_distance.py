"""Distance used in the adversarial conditional: squared euclidean against the
perceptual distance on 8x8 glyphs and the motion-manifold distance on skeletons."""
import argparse
import configparser

from _common import ROOT, fit, load, robust, write

BASE = ROOT / "configs" / "two_moons.ini"
# (distances compared, victim overrides, linf budget as a fraction of the data range);
# plain SGD needs tanh to fit the skeleton data
SETUPS = {
    "tinygrid": (("euclidean_sq", "perceptual"), {}, 0.1),
    "motion_proc": (("euclidean_sq", "motion_manifold"),
                    {"activation": "tanh", "learning_rate": "0.02", "epochs": "600"}, 0.01),
}


def config_for(kind, victim, tmp):
    cp = configparser.ConfigParser()
    cp.read(BASE)
    cp["data"] = {"kind": kind, "n": "500"}
    cp["victim"].update(victim)
    path = tmp / f"{kind}.ini"
    with open(path, "w") as fh:
        cp.write(fh)
    return path


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(ROOT / "runs" / "ablate_distance.csv"))
    ap.add_argument("--iterations", type=int, default=100)
    a = ap.parse_args()
    tmp = ROOT / "runs" / "configs"
    tmp.mkdir(parents=True, exist_ok=True)
    rows = []
    for kind, (kinds, overrides, frac) in SETUPS.items():
        spec, data, ev, victim = load(config_for(kind, overrides, tmp))
        spec.bbc.iterations = a.iterations
        tm = spec.attacks[0].threat
        tm.epsilon = frac * data.data_range
        rows.append({"data": kind, "epsilon": tm.epsilon, "distance": "none (victim)", "clean": victim.accuracy(ev), "robust": robust(victim, ev, tm)})
        for dist in kinds:
            ens = fit(spec, data, victim, distance=dist)
            rows.append({"data": kind, "epsilon": tm.epsilon, "distance": dist, "clean": ens.accuracy(ev), "robust": robust(ens, ev, tm)})
    write(a.out, rows)


if __name__ == "__main__":
    main()
