"""CSV/JSON emission for training and ablation results.

Plot-ready text files only; plotting itself is left to the user's tooling.
All text is UTF-8 with newline-terminated rows.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import UsageError

TRAIT_COLUMNS = ("O", "C", "E", "A", "N")


@dataclass
class TrainReport:
    """Per-epoch histories plus the final evaluation snapshot."""

    epochs: list[int] = field(default_factory=list)
    train_mse: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    initial_val_mse: float = float("nan")
    final_train_mse: float = float("nan")
    final_val_mse: float = float("nan")
    per_trait_accuracy: tuple[float, ...] = ()
    mean_accuracy: float = float("nan")
    seed: int = 0
    epochs_run: int = 0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_mse", "val_mse", "lr"])
            for row in zip(self.epochs, self.train_mse, self.val_mse, self.lr):
                w.writerow([row[0], *(repr(float(x)) for x in row[1:])])

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "epochs_run": self.epochs_run,
            "initial_val_mse": self.initial_val_mse,
            "final_train_mse": self.final_train_mse,
            "final_val_mse": self.final_val_mse,
            "per_trait_accuracy": {
                c: float(a) for c, a in zip(TRAIT_COLUMNS, self.per_trait_accuracy)
            },
            "mean_accuracy": self.mean_accuracy,
        }


@dataclass
class AblationReport:
    """Outcome of one independently trained ablation configuration."""

    name: str
    disabled: tuple[str, ...]
    final_val_mse: float
    per_trait_accuracy: tuple[float, ...]
    mean_accuracy: float
    epochs_run: int
    seed: int
    train_report: TrainReport


def emit_reports(reports: Sequence[AblationReport], out_dir) -> dict[str, Path]:
    """Write ablation.csv, ablation.json and one loss history per configuration.

    The accuracy columns follow the O, C, E, A, N, Mean layout.
    """
    if not reports:
        raise UsageError("emit_reports needs at least one ablation report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {}

    csv_path = out / "ablation.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["config", "disabled", *TRAIT_COLUMNS, "Mean",
                    "val_mse", "epochs", "seed"])
        for r in reports:
            w.writerow([
                r.name,
                "+".join(r.disabled) if r.disabled else "",
                *(repr(float(a)) for a in r.per_trait_accuracy),
                repr(float(r.mean_accuracy)),
                repr(float(r.final_val_mse)),
                r.epochs_run,
                r.seed,
            ])
    written["csv"] = csv_path

    json_path = out / "ablation.json"
    json_path.write_text(json.dumps({
        "configurations": [
            {
                "name": r.name,
                "disabled": list(r.disabled),
                "per_trait_accuracy": {
                    c: float(a) for c, a in zip(TRAIT_COLUMNS, r.per_trait_accuracy)
                },
                "mean_accuracy": float(r.mean_accuracy),
                "final_val_mse": float(r.final_val_mse),
                "epochs_run": r.epochs_run,
                "seed": r.seed,
            }
            for r in reports
        ]
    }, indent=2) + "\n")
    written["json"] = json_path

    for r in reports:
        loss_path = out / f"loss_{r.name}.csv"
        r.train_report.write_csv(loss_path)
        written[f"loss_{r.name}"] = loss_path
    return written


def read_ablation_csv(path) -> list[dict]:
    """Parse ablation.csv back into typed rows (used by round-trip checks)."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append({
                "config": rec["config"],
                "disabled": tuple(d for d in rec["disabled"].split("+") if d),
                "per_trait_accuracy": tuple(float(rec[c]) for c in TRAIT_COLUMNS),
                "mean_accuracy": float(rec["Mean"]),
                "final_val_mse": float(rec["val_mse"]),
                "epochs_run": int(rec["epochs"]),
                "seed": int(rec["seed"]),
            })
    return rows
