"""The three figure kinds: rate curves, norm traces, and run snapshots.

Figures are pure functions of their input files: fixed style, no timestamps,
so regenerating from the same inputs is byte-identical.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .io import MissingColumns, headline_slope, read_csv_columns, read_manifest

_STYLE = {
    "figure.figsize": (6.4, 4.4),
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def _save(fig, out_path):
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, metadata={"Software": "ks-figures"})
    plt.close(fig)


def plot_rates(errors_csv, rates_csv, out_path) -> dict:
    """Log-log error-vs-N scatter with median line, fitted slope annotation,
    and the dashed N^(-rho) theoretical guide.

    Returns the annotation metadata (slope rounded as rendered, rho, N range).
    """
    errors = read_csv_columns(errors_csv, ("N", "replica", "t", "err_l1lr"))
    rates = read_csv_columns(rates_csv, ("t", "slope", "ci_lo", "ci_hi",
                                         "rho_theory", "active_branch"))
    n_arr = np.asarray(errors["N"], dtype=float)
    rep_arr = np.asarray(errors["replica"], dtype=float)
    err_arr = np.asarray(errors["err_l1lr"], dtype=float)

    n_values = sorted(set(n_arr))
    if len(n_values) < 3:
        raise MissingColumns(f"need >= 3 distinct N values, got {len(n_values)}")

    # sup over checkpoints per (N, replica), then medians per N
    sups: dict[tuple, float] = {}
    for n, rep, err in zip(n_arr, rep_arr, err_arr):
        key = (n, rep)
        sups[key] = max(sups.get(key, 0.0), err)
    sup_n = np.asarray([k[0] for k in sups])
    sup_e = np.asarray(list(sups.values()))
    medians = [float(np.median(sup_e[sup_n == n])) for n in n_values]

    slope, rho = headline_slope(rates)

    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.scatter(sup_n, sup_e, s=12, alpha=0.45, color="#4878a8",
                   label="replica sup error", zorder=2)
        ax.plot(n_values, medians, "o-", color="#b13f3f", lw=1.8,
                label="median", zorder=3)
        guide = medians[0] * (np.asarray(n_values) / n_values[0]) ** (-rho)
        ax.plot(n_values, guide, "--", color="0.35",
                label=rf"$N^{{-{rho:.3f}}}$ (theory)", zorder=1)
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("initial particle count $N$")
        ax.set_ylabel(r"$\sup_t \, (\|u^N_t-u_t\|_{L^1}+\|u^N_t-u_t\|_{L^r})$")
        annotation = f"fitted slope = {slope:.3f}"
        ax.annotate(annotation, xy=(0.03, 0.06), xycoords="axes fraction",
                    fontsize=10, bbox=dict(boxstyle="round", fc="w", ec="0.6"))
        ax.legend(loc="upper right", fontsize=9)
        _save(fig, out_path)
    return {
        "slope_annotation": float(f"{slope:.3f}"),
        "rho_theory": rho,
        "n_values": [int(n) for n in n_values],
        "medians": medians,
    }


def plot_norms(run_dir, out_path) -> dict:
    """Norm traces over time from a solver run directory; marks the blow-up
    trigger with a vertical line when the manifest reports one."""
    run_dir = Path(run_dir)
    norms = read_csv_columns(run_dir / "norms.csv",
                             ("t", "l1", "lr", "linf"))
    manifest = read_manifest(run_dir)
    triggered = (manifest.get("monitor") or {}).get("triggered_at")

    t = np.asarray(norms["t"], dtype=float)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        style = {"marker": "o"} if len(t) == 1 else {}
        ax.plot(t, norms["l1"], label=r"$\|u_t\|_{L^1}$", color="#4878a8", **style)
        ax.plot(t, norms["linf"], label=r"$\|u_t\|_{L^\infty}$",
                color="#b13f3f", **style)
        ax.plot(t, norms["lr"], label=r"$\|u_t\|_{L^r}$", color="#6a9a48", **style)
        if triggered is not None:
            ax.axvline(triggered, color="k", ls=":", lw=1.5,
                       label=f"monitor fired at t={triggered:.3g}")
        ax.set_yscale("log")
        ax.set_xlabel("time $t$")
        ax.set_ylabel("norm")
        ax.legend(loc="best", fontsize=9)
        _save(fig, out_path)
    return {"triggered_at": triggered, "points": len(t)}


def plot_snapshot(run_dir, out_path) -> dict:
    """Particle cloud (positions.csv) or density heat map (snapshot npz)."""
    run_dir = Path(run_dir)
    positions = run_dir / "positions.csv"
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(5.2, 5.0))
        if positions.exists():
            data = read_csv_columns(positions, ("t", "label", "x_1", "x_2"))
            t = np.asarray(data["t"], dtype=float)
            last = t == t.max()
            ax.scatter(np.asarray(data["x_1"])[last],
                       np.asarray(data["x_2"])[last],
                       s=4, alpha=0.5, color="#4878a8")
            ax.set_title(f"particle cloud at t={t.max():.3g}")
            kind = "cloud"
        else:
            snaps = sorted(run_dir.glob("snapshot_*.npz"))
            if not snaps:
                raise MissingColumns(
                    f"{run_dir}: no positions.csv or snapshot_*.npz")
            data = np.load(snaps[-1])
            half = float(data["half_width"])
            ax.imshow(data["values"].T, origin="lower", cmap="viridis",
                      extent=(-half, half, -half, half))
            ax.set_title(f"density at t={float(data['t']):.3g}")
            kind = "density"
        ax.set_xlabel("$x_1$")
        ax.set_ylabel("$x_2$")
        _save(fig, out_path)
    return {"kind": kind}
