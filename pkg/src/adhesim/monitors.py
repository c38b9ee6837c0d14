"""Time series of masses, extrema and operator norms along a run."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import astuple, dataclass, fields

import numpy as np

from .dynamics import ModelParams, State
from .geometry import GridGeometry

CSV_COLUMNS = (
    "t",
    "mass_u",
    "mass_v",
    "sup_u",
    "sup_v",
    "sup_K",
    "sup_S",
    "min_u",
    "min_v",
    "lyapunov",
    "clip_count",
)


@dataclass(frozen=True)
class MonitorRecord:
    t: float
    mass_u: float
    mass_v: float
    sup_u: float
    sup_v: float
    sup_K: float
    sup_S: float
    min_u: float
    min_v: float
    lyapunov: float  # NaN where the functional is undefined
    clip_count: int


class MonitorSeries:
    """Append-only list of :class:`MonitorRecord` with column access."""

    def __init__(self, records=None):
        self.records: list[MonitorRecord] = list(records or [])

    def append(self, rec: MonitorRecord) -> None:
        if self.records and not rec.t > self.records[-1].t:
            raise ValueError(f"monitor times must increase: {rec.t} after {self.records[-1].t}")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def column(self, name: str) -> np.ndarray:
        if name not in CSV_COLUMNS:
            raise KeyError(name)
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for rec in self.records:
            row = []
            for f, val in zip(fields(rec), astuple(rec)):
                row.append(str(val) if f.name == "clip_count" else "%.17g" % val)
            writer.writerow(row)
        return buf.getvalue()


def monitor_record(
    state: State,
    K: np.ndarray,
    S: np.ndarray,
    geom: GridGeometry,
    p: ModelParams,
    clip_count: int,
) -> MonitorRecord:
    from .analysis import lyapunov_value
    from .errors import DomainError

    vol = geom.cell_volume
    try:
        lyap = lyapunov_value(state, p, geom)
    except DomainError:
        lyap = math.nan
    return MonitorRecord(
        t=float(state.t),
        mass_u=float(np.sum(state.u) * vol),
        mass_v=float(np.sum(state.v) * vol),
        sup_u=float(np.max(state.u)),
        sup_v=float(np.max(state.v)),
        sup_K=float(np.max(np.linalg.norm(K, axis=1))),
        sup_S=float(np.max(np.linalg.norm(S, axis=1))),
        min_u=float(np.min(state.u)),
        min_v=float(np.min(state.v)),
        lyapunov=lyap,
        clip_count=int(clip_count),
    )
