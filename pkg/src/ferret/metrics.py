"""Online/test accuracy and memory-penalized accuracy gains."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

RESULT_FIELDS = ("setting", "method", "oacc", "tacc", "memory", "agm", "tagm", "seed")


class RecordError(ValueError):
    """Raised for malformed result records."""


@dataclass
class RunRecord:
    setting: str
    method: str
    seed: int
    oacc: float
    tacc: float
    memory: int
    correct: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not (0.0 <= self.oacc <= 100.0 and 0.0 <= self.tacc <= 100.0):
            raise RecordError("accuracies must lie in [0, 100]")
        if not self.memory > 0:
            raise RecordError("memory must be > 0")


def online_accuracy(log: Iterable[tuple[int | None, int]]) -> float:
    """Percent of items predicted correctly; a ``None`` prediction is a dropped item."""
    n = hits = 0
    for pred, label in log:
        n += 1
        hits += pred is not None and pred == label
    if n == 0:
        raise ValueError("online accuracy of an empty log")
    return 100.0 * hits / n


def accuracy_from_flags(correct: Sequence[bool] | np.ndarray) -> float:
    correct = np.asarray(correct, dtype=bool)
    if correct.size == 0:
        raise ValueError("accuracy of an empty log")
    return 100.0 * float(correct.mean())


def _check_memory(M_A: float, M_B: float) -> None:
    if not (M_A > 0 and M_B > 0):
        raise ValueError("memory footprints must be > 0")


def agm(oacc_A: float, M_A: float, oacc_B: float, M_B: float) -> float:
    """Online accuracy gain of A over B minus the log of their memory ratio."""
    _check_memory(M_A, M_B)
    return (oacc_A - oacc_B) - (math.log(M_A) - math.log(M_B))


def tagm(tacc_A: float, M_A: float, tacc_B: float, M_B: float) -> float:
    """Test accuracy gain of A over B minus the log of their memory ratio."""
    _check_memory(M_A, M_B)
    return (tacc_A - tacc_B) - (math.log(M_A) - math.log(M_B))


def mean_stderr(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("no values")
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def gain_table(records: Sequence[RunRecord], baseline: str) -> list[dict]:
    """agm/tagm of every record against the same-setting, same-seed baseline."""
    base = {(r.setting, r.seed): r for r in records if r.method == baseline}
    if not base:
        raise RecordError(f"no records for baseline method {baseline!r}")
    rows = []
    for r in records:
        b = base.get((r.setting, r.seed))
        if b is None:
            raise RecordError(f"baseline {baseline!r} missing for setting {r.setting!r} seed {r.seed}")
        rows.append({
            "setting": r.setting,
            "method": r.method,
            "oacc": r.oacc,
            "tacc": r.tacc,
            "memory": r.memory,
            "agm": agm(r.oacc, r.memory, b.oacc, b.memory),
            "tagm": tagm(r.tacc, r.memory, b.tacc, b.memory),
            "seed": r.seed,
        })
    return rows


def format_results(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULT_FIELDS)
    for row in rows:
        writer.writerow([_fmt(row.get(k, "")) for k in RESULT_FIELDS])
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_results(rows: Sequence[dict], path) -> None:
    Path(path).write_text(format_results(rows))


def read_results(path) -> list[RunRecord]:
    """Parse a results file back into records; agm/tagm columns are ignored."""
    path = Path(path)
    if not path.exists():
        raise RecordError(f"results file not found: {path}")
    lines = path.read_text().splitlines()
    if not lines:
        raise RecordError(f"{path}: empty results file")
    reader = csv.DictReader(lines)
    missing = {"setting", "method", "oacc", "tacc", "memory", "seed"} - set(reader.fieldnames or ())
    if missing:
        raise RecordError(f"{path}: missing columns {sorted(missing)}")
    out = []
    for rowno, row in enumerate(reader, start=2):
        try:
            out.append(RunRecord(
                setting=row["setting"],
                method=row["method"],
                seed=int(row["seed"]),
                oacc=float(row["oacc"]),
                tacc=float(row["tacc"]),
                memory=int(float(row["memory"])),
            ))
        except (TypeError, ValueError) as exc:
            raise RecordError(f"{path}: row {rowno}: {exc}") from None
    if not out:
        raise RecordError(f"{path}: no records")
    return out
