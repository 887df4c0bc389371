"""CSV ingestion in the ETT layout and prediction/metrics output."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from ..errors import IngestionError
from .dataset import SeriesDataset


def load_csv(path, date_column: bool = True, sampling: str = "hourly",
             train_frac: float = 0.7, val_frac: float = 0.1) -> SeriesDataset:
    """Read an ETT-style CSV: optional timestamp column, then one column per channel.

    Blank or non-numeric cells and ragged rows raise :class:`IngestionError`
    naming the file row (1-based, header is row 1) and column.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise IngestionError(f"{path} is empty")
    header = rows[0]
    first = 1 if date_column else 0
    names = tuple(h.strip() for h in header[first:])
    if not names:
        raise IngestionError("no channel columns found", row=1)
    data = np.empty((len(rows) - 1, len(names)))
    stamps = []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise IngestionError(
                f"expected {len(header)} cells, found {len(row)}", row=r
            )
        if date_column:
            stamps.append(row[0])
        for c, cell in enumerate(row[first:]):
            text = cell.strip()
            if not text:
                raise IngestionError("missing value", row=r, column=c + first)
            try:
                val = float(text)
            except ValueError:
                raise IngestionError(f"cannot parse {text!r}", row=r, column=c + first) from None
            if not math.isfinite(val):
                raise IngestionError(f"non-finite value {text!r}", row=r, column=c + first)
            data[r - 2, c] = val
    meta = {"source": str(path)}
    if stamps:
        meta["first_timestamp"] = stamps[0]
        meta["last_timestamp"] = stamps[-1]
    return SeriesDataset(data.T.copy(), names, sampling, train_frac, val_frac, meta)


def write_csv(path, ds: SeriesDataset, date_column: bool = True) -> None:
    """Write a dataset in the layout :func:`load_csv` reads (values via ``repr``)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((["date"] if date_column else []) + list(ds.channel_names))
        for t in range(ds.length):
            lead = [str(t)] if date_column else []
            w.writerow(lead + [repr(float(v)) for v in ds.values[:, t]])


def write_predictions(path, preds, starts, channel_names) -> None:
    """One row per (window, step); columns ``window, time, <channels...>``."""
    preds = np.asarray(preds)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window", "time"] + list(channel_names))
        for i, start in enumerate(starts):
            for step in range(preds.shape[-1]):
                w.writerow([i, int(start) + step] + [repr(float(v)) for v in preds[i, :, step]])


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
