"""Clean and PGD robust accuracy plus expected-gradient magnitude against the number of heads."""
import argparse

import numpy as np

from bbc.ensemble import BbcEnsemble, expected_input_gradient

from _common import ROOT, fit, load, robust, write


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(ROOT / "configs" / "two_moons.ini"))
    ap.add_argument("--max-heads", type=int, default=10)
    ap.add_argument("--out", default=str(ROOT / "runs" / "ablate_heads.csv"))
    a = ap.parse_args()
    spec, data, ev, victim = load(a.config)
    tm = spec.attacks[0].threat
    # head i only depends on (seed, i), so prefixes of one run are the smaller ensembles
    full = fit(spec, data, victim, heads=a.max_heads)
    rows = [{"heads": 0, "clean": victim.accuracy(ev), "robust": robust(victim, ev, tm), "median_abs_grad": ""}]
    for n in range(1, a.max_heads + 1):
        ens = BbcEnsemble(victim, full.heads[:n], full.skip_input, full.energy_u)
        g = np.median(np.abs(expected_input_gradient(ens, ev.x, ev.y)))
        rows.append({"heads": n, "clean": ens.accuracy(ev), "robust": robust(ens, ev, tm), "median_abs_grad": g})
    write(a.out, rows)


if __name__ == "__main__":
    main()
