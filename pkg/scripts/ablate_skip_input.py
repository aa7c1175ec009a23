"""Heads fed by victim logits versus the victim's last hidden layer."""
import argparse

from _common import ROOT, fit, load, robust, write


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(ROOT / "configs" / "two_moons.ini"))
    ap.add_argument("--out", default=str(ROOT / "runs" / "ablate_skip_input.csv"))
    a = ap.parse_args()
    spec, data, ev, victim = load(a.config)
    tm = spec.attacks[0].threat
    rows = [{"skip_input": "none (victim)", "clean": victim.accuracy(ev), "robust": robust(victim, ev, tm)}]
    for skip in ("victim_logits", "latent_features"):
        ens = fit(spec, data, victim, skip_input=skip)
        rows.append({"skip_input": skip, "clean": ens.accuracy(ev), "robust": robust(ens, ev, tm)})
    write(a.out, rows)


if __name__ == "__main__":
    main()
