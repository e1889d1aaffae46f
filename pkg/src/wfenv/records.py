"""Path records, Monte Carlo estimates and deterministic file output."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DAGGER = -1  # cemetery state of the killed chains; also its CSV encoding


@dataclass(frozen=True)
class PathSample:
    """A piecewise-constant (or Euler-grid) path: ``values[i]`` holds on ``[times[i], times[i+1])``."""

    times: np.ndarray
    values: np.ndarray
    time_label: str = "t"
    value_label: str = "x"

    def __len__(self) -> int:
        return len(self.times)

    @property
    def final(self):
        return self.values[-1]

    def at(self, t: float):
        """Value at time ``t`` (right-continuous)."""
        idx = np.searchsorted(self.times, t, side="right") - 1
        if idx < 0:
            raise ValueError(f"time {t} precedes the path start")
        return self.values[idx]

    def to_csv(self) -> str:
        return csv_text([self.time_label, self.value_label],
                        zip(self.times.tolist(), self.values.tolist()))


@dataclass(frozen=True)
class MomentEstimate:
    value: float
    stderr: float
    replicates: int
    tag: str

    def to_dict(self) -> dict:
        return {"value": self.value, "stderr": self.stderr,
                "replicates": self.replicates, "tag": self.tag}


def estimate(samples, tag: str) -> MomentEstimate:
    """Sample mean with its standard error."""
    s = np.asarray(samples, dtype=float)
    n = s.size
    if n == 0:
        raise ValueError("estimate: no samples")
    se = float(s.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return MomentEstimate(float(s.mean()), se, int(n), tag)


def z_score(a: MomentEstimate, b: MomentEstimate) -> float:
    se = math.hypot(a.stderr, b.stderr)
    diff = a.value - b.value
    if se == 0.0:
        return 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
    return diff / se


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def json_text(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_text(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")
