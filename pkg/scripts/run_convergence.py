#!/usr/bin/env python3
"""Run the full error-vs-N convergence experiment with the shipped preset.

Usage: python scripts/run_convergence.py [OUT_DIR]

Writes errors.csv / rates.csv / diagnostics.csv / manifest.json into OUT_DIR
(default runs/convergence2d).  Expect roughly half an hour on a small box;
override keys on the ks CLI for quicker exploratory runs, e.g.

    ks experiment --config configs/convergence2d.toml --out runs/quick \
        --override "experiment.n_values=[125, 250, 500]" \
        --override experiment.replicas=5
"""

import sys
from pathlib import Path

from kslogistic.cli import main

if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "runs/convergence2d"
    cfg = Path(__file__).resolve().parent.parent / "configs" / "convergence2d.toml"
    sys.exit(main(["experiment", "--config", str(cfg), "--out", out]))
