"""Reading binned spectra from CSV files."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..measure import BinnedCounts, Grid

HEADER = ["bin_low", "bin_high", "count"]


class IngestError(ValueError):
    """Malformed spectrum file; the message names the offending line."""


def ingest_spectrum(path, contiguity_tol: float = 1e-9, width_tol: float = 1e-6):
    """Read ``bin_low,bin_high,count`` rows into an equal-width grid and counts."""
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: file is empty") from None
        if [h.strip().lower() for h in header] != HEADER:
            raise IngestError(f"{path}, line 1: header must be {','.join(HEADER)}")
        lows, highs, counts = [], [], []
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise IngestError(f"{path}, line {line}: expected 3 fields, got {len(row)}")
            try:
                lo, hi = float(row[0]), float(row[1])
                cnt = float(row[2])
            except ValueError:
                raise IngestError(f"{path}, line {line}: non-numeric field") from None
            if not (np.isfinite(lo) and np.isfinite(hi) and np.isfinite(cnt)):
                raise IngestError(f"{path}, line {line}: non-finite value")
            if cnt < 0 or cnt != int(cnt):
                raise IngestError(f"{path}, line {line}: count must be a nonnegative integer")
            if not hi > lo:
                raise IngestError(f"{path}, line {line}: bin_high must exceed bin_low")
            if lows and abs(lo - highs[-1]) > contiguity_tol * max(1.0, abs(lo)):
                raise IngestError(f"{path}, line {line}: bin does not start where the previous one ends")
            lows.append(lo)
            highs.append(hi)
            counts.append(int(cnt))
    if not counts:
        raise IngestError(f"{path}: no data rows")
    widths = np.array(highs) - np.array(lows)
    ref = widths.mean()
    bad = np.flatnonzero(np.abs(widths - ref) > width_tol * ref)
    if bad.size:
        raise IngestError(f"{path}, line {bad[0] + 2}: bin width differs from the others")
    grid = Grid(lows[0], highs[-1], len(counts))
    return grid, BinnedCounts(np.array(counts))


def write_spectrum(path, grid: Grid, counts) -> None:
    counts = counts.counts if isinstance(counts, BinnedCounts) else np.asarray(counts)
    e = grid.edges
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HEADER)
        for lo, hi, c in zip(e[:-1], e[1:], counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
