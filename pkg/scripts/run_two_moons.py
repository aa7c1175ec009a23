"""Full canonical two-moons pipeline; writes the CSV reports and prints metrics.csv."""
import argparse
from pathlib import Path

from bbc.config import ExperimentSpec
from bbc.experiment import run_experiment

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(ROOT / "configs" / "two_moons.ini"))
    ap.add_argument("--output-dir", default=str(ROOT / "runs" / "two_moons"))
    ap.add_argument("--seed", type=int)
    a = ap.parse_args()
    spec = ExperimentSpec.from_file(a.config, seed=a.seed)
    spec.output_dir = Path(a.output_dir)
    out = run_experiment(spec)
    print(out["metrics"].read_text(), end="")
    print(f"reports in {spec.output_dir}")


if __name__ == "__main__":
    main()
