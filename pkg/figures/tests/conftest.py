"""Synthetic run-directory builders for figure tests."""

import json
from pathlib import Path

import numpy as np
import pytest


@pytest.fixture
def synthetic_run(tmp_path):
    """errors.csv/rates.csv pair with an exact power law err = 2 N^(-1/2)."""
    ns = [100, 200, 400, 800]
    ckpts = [0.0, 0.5, 1.0]
    rows = []
    for n in ns:
        for rep in range(3):
            for t in ckpts:
                err = 2.0 * n ** -0.5 * (1.0 - 0.05 * t)  # sup attained at t=0
                rows.append((n, rep, t, err / 2, err / 2, err, err / 3, err / 4))
    with open(tmp_path / "errors.csv", "w") as fh:
        fh.write("N,replica,t,err_l1,err_lr,err_l1lr,kr_mu_vs_u,kr_gap_mollif\n")
        for row in rows:
            fh.write(",".join(repr(v) for v in row) + "\n")
    with open(tmp_path / "rates.csv", "w") as fh:
        fh.write("t,slope,ci_lo,ci_hi,rho_theory,active_branch\n")
        fh.write("0.0,-0.493,-0.51,-0.48,0.041666666666666664,holder\n")
        fh.write("-1,-0.5,-0.52,-0.48,0.041666666666666664,holder\n")
    return tmp_path


@pytest.fixture
def synthetic_pde_run(tmp_path):
    ts = np.linspace(0.0, 2.0, 9)
    with open(tmp_path / "norms.csv", "w") as fh:
        fh.write("t,l1,lr,linf,kconv_linf,a_running\n")
        for t in ts:
            fh.write(f"{t},{np.exp(-0.1 * t)},{0.5 * np.exp(-0.2 * t)},"
                     f"{1.8 * np.exp(-0.3 * t)},{0.3},{2.1}\n")
    (tmp_path / "manifest.json").write_text(json.dumps({
        "status": "completed",
        "monitor": {"threshold": 1e4, "triggered_at": None},
    }))
    return tmp_path
