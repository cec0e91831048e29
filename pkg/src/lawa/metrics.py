"""Per-epoch metrics records and their CSV serialization.

The CSV layout is fixed so runs produce byte-stable golden files:
floats are written with 9 significant digits, undefined averaged-model
cells stay empty. The wall_seconds column is the one field that varies
between otherwise identical runs; determinism checks mask it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import IO

from .errors import SchemaError

METRICS_HEADER = (
    "epoch",
    "step",
    "lr",
    "train_loss",
    "train_acc",
    "val_loss",
    "val_acc",
    "avg_val_loss",
    "avg_val_acc",
    "wall_seconds",
)


@dataclass(frozen=True)
class MetricsRecord:
    epoch: int
    step: int
    lr: float
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    avg_val_loss: float | None
    avg_val_acc: float | None
    wall_seconds: float


def _fmt(value: float | int | None) -> str:
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    return f"{value:.9g}"


def record_to_line(rec: MetricsRecord) -> str:
    return ",".join(
        (
            str(rec.epoch),
            str(rec.step),
            _fmt(rec.lr),
            _fmt(rec.train_loss),
            _fmt(rec.train_acc),
            _fmt(rec.val_loss),
            _fmt(rec.val_acc),
            _fmt(rec.avg_val_loss),
            _fmt(rec.avg_val_acc),
            _fmt(rec.wall_seconds),
        )
    )


class MetricsWriter:
    """Appends one CSV line per epoch, flushing so partial runs keep data."""

    def __init__(self, path):
        self._fh: IO[str] = open(path, "w", encoding="utf-8", newline="")
        self._fh.write(",".join(METRICS_HEADER) + "\n")
        self._fh.flush()

    def append(self, rec: MetricsRecord) -> None:
        self._fh.write(record_to_line(rec) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "MetricsWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_metrics(path) -> list[dict]:
    """Parse a metrics CSV back into dicts; empty cells become None."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: empty metrics file")
        rows = []
        for raw in reader:
            row: dict = {}
            for key, text in raw.items():
                if text is None or text == "":
                    row[key] = None
                elif key in ("epoch", "step"):
                    row[key] = int(text)
                else:
                    row[key] = float(text)
            rows.append(row)
    return rows
