#!/usr/bin/env python3
"""Suppression-vs-blow-up demonstration.

Runs the damped mass-30 preset (bounded transient, exit 0), then the same
datum with the damping removed (monitor fires, exit 3), and finally the
unit-mass suppression run.  Outputs land under runs/.
"""

import sys
from pathlib import Path

from kslogistic.cli import main

if __name__ == "__main__":
    base = Path(__file__).resolve().parent.parent
    blow = str(base / "configs" / "blowup2d.toml")
    supp = str(base / "configs" / "suppression2d.toml")
    rc_damped = main(["pde", "--config", blow, "--out", "runs/blowup2d-damped"])
    rc_undamped = main(["pde", "--config", blow, "--out", "runs/blowup2d-undamped",
                        "--override", "pde.mu=0"])
    rc_supp = main(["pde", "--config", supp, "--out", "runs/suppression2d"])
    print(f"damped: exit {rc_damped}; undamped: exit {rc_undamped} "
          f"(3 = blow-up detected); unit mass: exit {rc_supp}")
    sys.exit(0 if (rc_damped, rc_undamped, rc_supp) == (0, 3, 0) else 1)
