"""Car-following trajectory data: ingestion, event extraction, kinematics, splits.

All series live on a uniform time grid (``dt`` seconds, 0.1 s by default).
Spacing is always read from the data, never re-derived from positions.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, SchemaError

log = logging.getLogger(__name__)

DEFAULT_DT = 0.1
DEFAULT_MIN_DURATION = 15.0
CSV_COLUMNS = ("event_id", "t", "lv_id", "v_lv", "v_fv", "spacing")

# Tolerance used when comparing timestamps and durations on the grid.
_TIME_TOL = 1e-9


@dataclass(frozen=True)
class TrajectoryPoint:
    t: float
    v_lv: float
    v_fv: float
    spacing: float

    @property
    def delta_v(self) -> float:
        return self.v_lv - self.v_fv


def _frozen(a: Sequence[float]) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TrajectoryEvent:
    """One car-following episode on a uniform grid.

    The series are stored column-wise as read-only float64 arrays; ``points``
    gives the row view.
    """

    event_id: str
    lv_id: str
    t: np.ndarray
    v_lv: np.ndarray
    v_fv: np.ndarray
    spacing: np.ndarray
    dt: float = DEFAULT_DT
    meta: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("t", "v_lv", "v_fv", "spacing"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        n = len(self.t)
        if n < 2:
            raise DataError(f"event {self.event_id}: needs at least 2 points, got {n}")
        if any(len(getattr(self, k)) != n for k in ("v_lv", "v_fv", "spacing")):
            raise DataError(f"event {self.event_id}: series lengths differ")
        if np.any(self.spacing <= 0):
            k = int(np.argmax(self.spacing <= 0))
            raise DataError(f"event {self.event_id}: non-positive spacing at index {k}")
        if np.any(self.v_lv < 0) or np.any(self.v_fv < 0):
            raise DataError(f"event {self.event_id}: negative speed")
        steps = np.diff(self.t)
        if np.any(np.abs(steps - self.dt) > 1e-6):
            raise DataError(f"event {self.event_id}: timestamps not on a {self.dt} s grid")

    def __len__(self) -> int:
        return len(self.t)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TrajectoryEvent):
            return NotImplemented
        return (
            self.event_id == other.event_id
            and self.lv_id == other.lv_id
            and self.dt == other.dt
            and all(
                np.array_equal(getattr(self, k), getattr(other, k))
                for k in ("t", "v_lv", "v_fv", "spacing")
            )
        )

    __hash__ = object.__hash__

    @property
    def duration(self) -> float:
        return (len(self.t) - 1) * self.dt

    @property
    def delta_v(self) -> np.ndarray:
        return self.v_lv - self.v_fv

    @property
    def points(self) -> tuple[TrajectoryPoint, ...]:
        return tuple(
            TrajectoryPoint(float(t), float(a), float(b), float(s))
            for t, a, b, s in zip(self.t, self.v_lv, self.v_fv, self.spacing)
        )


@dataclass(frozen=True)
class SplitAssignment:
    train: frozenset[str]
    val: frozenset[str]
    test: frozenset[str]

    def ids(self, which: str) -> frozenset[str]:
        if which not in ("train", "val", "test"):
            raise ValueError(f"unknown split '{which}' (expected train, val or test)")
        return getattr(self, which)

    def select(self, events: Iterable[TrajectoryEvent], which: str) -> list[TrajectoryEvent]:
        wanted = self.ids(which)
        return [e for e in events if e.event_id in wanted]


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------


def resample(t: np.ndarray, values: Sequence[np.ndarray], dt: float) -> tuple[np.ndarray, list[np.ndarray]]:
    """Linearly interpolate ``values`` onto the grid ``t[0] + k*dt``.

    Series already on the grid are returned unchanged.
    """
    t = np.asarray(t, dtype=np.float64)
    n = int(math.floor((t[-1] - t[0]) / dt + _TIME_TOL)) + 1
    if len(t) == n and np.all(np.abs(np.diff(t) - dt) <= _TIME_TOL):
        return t.copy(), [np.asarray(v, dtype=np.float64).copy() for v in values]
    grid = t[0] + dt * np.arange(n)
    return grid, [np.interp(grid, t, np.asarray(v, dtype=np.float64)) for v in values]


def _resolve_columns(header: Sequence[str], schema: Mapping[str, str] | None) -> dict[str, int]:
    mapping = {c: c for c in CSV_COLUMNS}
    if schema:
        mapping.update(schema)
    index = {}
    missing = []
    for canonical, column in mapping.items():
        if column in header:
            index[canonical] = header.index(column)
        else:
            missing.append(f"{canonical} (column '{column}')")
    if missing:
        raise SchemaError("missing required column(s): " + ", ".join(missing))
    return index


def load_events(
    path: str | Path,
    schema: Mapping[str, str] | None = None,
    dt: float = DEFAULT_DT,
) -> list[TrajectoryEvent]:
    """Read candidate segments from a CSV file.

    Rows are grouped by ``event_id`` and split wherever ``lv_id`` changes, so
    every returned segment follows a single leader. Each segment is resampled
    onto a uniform ``dt`` grid by linear interpolation. No duration filter is
    applied here; see :func:`extract_events`.

    Args:
        path: CSV file with a header row.
        schema: Optional mapping from canonical column names
            (``event_id, t, lv_id, v_lv, v_fv, spacing``) to the file's names.
        dt: Target sample interval in seconds.

    Returns:
        Candidate segments in file order. An empty file gives an empty list.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        header = [h.strip() for h in header]
        col = _resolve_columns(header, schema)

        segments: list[tuple[str, str, list[tuple[float, float, float, float]]]] = []
        current_key: tuple[str, str] | None = None
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                eid = row[col["event_id"]].strip()
                lv = row[col["lv_id"]].strip()
                t = float(row[col["t"]])
                v_lv = float(row[col["v_lv"]])
                v_fv = float(row[col["v_fv"]])
                s = float(row[col["spacing"]])
            except (IndexError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed row ({exc})") from None
            if s <= 0:
                raise DataError(f"{path}:{lineno}: non-positive spacing {s}")
            if v_lv < 0 or v_fv < 0:
                raise DataError(f"{path}:{lineno}: negative speed")
            if (eid, lv) != current_key:
                segments.append((eid, lv, []))
                current_key = (eid, lv)
            rows = segments[-1][2]
            if rows and t <= rows[-1][0]:
                raise DataError(f"{path}:{lineno}: timestamps not increasing within event {eid}")
            rows.append((t, v_lv, v_fv, s))

    per_event: dict[str, int] = {}
    for eid, _, _ in segments:
        per_event[eid] = per_event.get(eid, 0) + 1
    seen: dict[str, int] = {}
    events = []
    for eid, lv, rows in segments:
        if len(rows) < 2:
            log.debug("dropping single-row segment of event %s (leader %s)", eid, lv)
            continue
        k = seen.get(eid, 0)
        seen[eid] = k + 1
        seg_id = eid if per_event[eid] == 1 else f"{eid}_{k}"
        arr = np.array(rows, dtype=np.float64)
        grid, (v_lv, v_fv, s) = resample(arr[:, 0], [arr[:, 1], arr[:, 2], arr[:, 3]], dt)
        if len(grid) < 2:
            continue
        events.append(TrajectoryEvent(seg_id, lv, grid, v_lv, v_fv, s, dt))
    return events


def write_events(path: str | Path, events: Iterable[TrajectoryEvent]) -> None:
    """Write events in the canonical CSV schema (``repr`` floats round-trip exactly)."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for e in events:
            for t, a, b, s in zip(e.t, e.v_lv, e.v_fv, e.spacing):
                w.writerow((e.event_id, repr(float(t)), e.lv_id, repr(float(a)), repr(float(b)), repr(float(s))))


# ---------------------------------------------------------------------------
# Extraction, kinematics, split
# ---------------------------------------------------------------------------


def extract_events(
    raw: Iterable[TrajectoryEvent], min_duration: float = DEFAULT_MIN_DURATION
) -> list[TrajectoryEvent]:
    """Keep segments strictly longer than ``min_duration`` seconds."""
    if min_duration <= 0:
        raise ValueError(f"min_duration must be > 0, got {min_duration}")
    kept, rejected = [], 0
    for ev in raw:
        if ev.duration > min_duration + _TIME_TOL:
            kept.append(ev)
        else:
            rejected += 1
    log.info("extracted %d events, rejected %d segments (duration <= %g s)", len(kept), rejected, min_duration)
    return kept


def acceleration(v: Sequence[float], dt: float) -> np.ndarray:
    """Forward-difference acceleration, length ``len(v) - 1``."""
    v = np.asarray(v, dtype=np.float64)
    if len(v) < 2:
        raise DataError(f"acceleration needs a series of length >= 2, got {len(v)}")
    return np.diff(v) / dt


def jerk(v: Sequence[float], dt: float) -> np.ndarray:
    """Forward-difference jerk, length ``len(v) - 2``."""
    v = np.asarray(v, dtype=np.float64)
    if len(v) < 3:
        raise DataError(f"jerk needs a series of length >= 3, got {len(v)}")
    return np.diff(np.diff(v) / dt) / dt


def kinematics(event: TrajectoryEvent) -> tuple[np.ndarray, np.ndarray]:
    """FV acceleration and jerk series of an event."""
    if len(event) < 3:
        raise DataError(f"kinematics needs an event of length >= 3, got {len(event)}")
    return acceleration(event.v_fv, event.dt), jerk(event.v_fv, event.dt)


def split(events: Sequence[TrajectoryEvent], seed: int) -> SplitAssignment:
    """Event-level 70/15/15 split.

    Validation and test each get ``0.15 * n`` events rounded to nearest
    (halves up, at least one); the remainder goes to training. Rounding
    keeps every bucket within one event of its nominal share. Assignment depends only on the set of
    event ids and the seed, not on input order.
    """
    ids = sorted({e.event_id for e in events})
    n = len(ids)
    if n < 3:
        raise DataError(f"split needs at least 3 events, got {n}")
    n_val = n_test = max(1, int(math.floor(0.15 * n + 0.5)))
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]
    val = frozenset(shuffled[:n_val])
    test = frozenset(shuffled[n_val : n_val + n_test])
    train = frozenset(shuffled[n_val + n_test :])
    return SplitAssignment(train=train, val=val, test=test)
