"""Readers for the run-directory file contract: errors.csv, rates.csv,
norms.csv, summary/positions CSVs and manifest.json.

The plotting layer never imports the simulation package; these files are the
entire interface.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path


class MissingColumns(Exception):
    """Input CSV lacks required columns (or is empty)."""


def read_csv_columns(path, required: tuple[str, ...]) -> dict[str, list]:
    """Load a CSV as {column: list-of-floats-or-strings}; enforce the schema."""
    path = Path(path)
    if not path.exists():
        raise MissingColumns(f"{path}: file not found")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumns(f"{path}: empty file, expected columns {required}")
        missing = [c for c in required if c not in header]
        if missing:
            raise MissingColumns(f"{path}: missing columns {missing} "
                                 f"(found {header})")
        idx = {c: header.index(c) for c in header}
        out: dict[str, list] = {c: [] for c in header}
        for row in reader:
            if not row:
                continue
            for c, i in idx.items():
                val = row[i]
                try:
                    out[c].append(float(val))
                except ValueError:
                    out[c].append(val)
    if not out[required[0]]:
        raise MissingColumns(f"{path}: no data rows")
    return out


def read_manifest(run_dir) -> dict:
    path = Path(run_dir) / "manifest.json"
    if not path.exists():
        return {}
    return json.loads(path.read_text())


SUP_ROW_T = -1.0


def headline_slope(rates: dict[str, list]) -> tuple[float, float]:
    """Fitted slope and theoretical rate; prefers the sup-over-checkpoints
    sentinel row (t = -1), falling back to the last per-time row."""
    ts = rates["t"]
    pick = len(ts) - 1
    for i, t in enumerate(ts):
        if t == SUP_ROW_T:
            pick = i
    return rates["slope"][pick], rates["rho_theory"][pick]
