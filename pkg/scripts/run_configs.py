"""Run every experiment config in a directory and summarise the exit statuses.

The injected-violation config is expected to exit 1; everything else 0.
"""

import argparse
import logging
import time
from pathlib import Path

from atwflow.experiment import emit_plot_data, run_experiment
from atwflow.scene import ExperimentConfig

EXPECTED_FAIL = {"injected_violation"}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--configs", default=str(Path(__file__).resolve().parent.parent / "configs"))
    ap.add_argument("--out", default="runs")
    ap.add_argument("--only", nargs="*", help="config stems to run")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    rows = []
    for path in sorted(Path(args.configs).glob("*.json")):
        if args.only and path.stem not in args.only:
            continue
        config = ExperimentConfig.load(path)
        if path.stem == "tiny_oracle":
            continue  # exercised through `atwflow oracle`
        t0 = time.perf_counter()
        status, manifest = run_experiment(config, Path(args.out) / path.stem)
        emit_plot_data(manifest)
        expected = 1 if path.stem in EXPECTED_FAIL else 0
        rows.append((path.stem, status, expected, time.perf_counter() - t0))

    print(f"\n{'config':<22} {'exit':>4} {'expected':>8} {'seconds':>8}")
    for name, status, expected, secs in rows:
        flag = "" if status == expected else "  <-- unexpected"
        print(f"{name:<22} {status:>4} {expected:>8} {secs:8.1f}{flag}")


if __name__ == "__main__":
    main()
