"""Trajectory metrics, courtesy correlation and the psi-scaling experiment."""
from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .courtesy import CourtesyKind, discourtesy_values
from .errors import ConfigError, DataError
from .models import Model, ModelInput
from .rollout import simulate, time_gap
from .trajectory import SplitAssignment, TrajectoryEvent
from .training import WindowSet, event_labels, make_windows

log = logging.getLogger(__name__)

TABLE_COLUMNS = ("Spacing MSE", "Speed MSE", "Courtesy MSE", "Courtesy Metric Correlation")
METRIC_FIELDS = ("model", "n_events", "n_windows", "spacing_mse", "speed_mse", "courtesy_mse",
                 "courtesy_corr", "corr_defined", "collision_rate")
HIST_FIELDS = ("scale", "bin_lo", "bin_hi", "frequency")
SUMMARY_FIELDS = ("scale", "median_time_gap", "mean_time_gap", "mean_behaved_psi", "psi_corr", "corr_defined")
SCATTER_FIELDS = ("scale", "event_id", "start", "desired_psi", "behaved_psi")

# Time-gap histogram: 0.1 s bins over [0, 6) s; larger gaps land in the last bin.
HIST_EDGES = np.round(np.arange(0.0, 6.0 + 1e-9, 0.1), 10)


def pearson(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Pearson correlation, or ``None`` when either series has zero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        return None
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx <= 1e-24 * max(1.0, float(x @ x)) or syy <= 1e-24 * max(1.0, float(y @ y)):
        return None
    r = float(dx @ dy) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


@dataclass(frozen=True)
class EvalReport:
    spacing_mse: float
    speed_mse: float
    courtesy_mse: float
    courtesy_corr: float | None   # None when undefined (zero variance)
    n_events: int
    collision_rate: float
    n_windows: int = 0
    model: str = ""

    @property
    def corr_defined(self) -> bool:
        return self.courtesy_corr is not None

    def row(self) -> dict:
        return {
            "model": self.model, "n_events": self.n_events, "n_windows": self.n_windows,
            "spacing_mse": self.spacing_mse, "speed_mse": self.speed_mse,
            "courtesy_mse": self.courtesy_mse,
            "courtesy_corr": self.courtesy_corr if self.courtesy_corr is not None else "",
            "corr_defined": int(self.corr_defined), "collision_rate": self.collision_rate,
        }


@dataclass(frozen=True)
class ScaleSummary:
    scale: float
    median_time_gap: float
    mean_time_gap: float
    histogram: np.ndarray          # normalised frequencies over HIST_EDGES bins
    mean_behaved_psi: float
    psi_corr: float | None         # Pearson(desired psi, behaved psi)
    desired: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))
    behaved: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))


@dataclass(frozen=True)
class ControllabilityReport:
    psi_scales: tuple[float, ...]
    summaries: tuple[ScaleSummary, ...]
    event_ids: tuple[str, ...] = ()
    starts: tuple[int, ...] = ()
    model: str = ""

    def by_scale(self, scale: float) -> ScaleSummary:
        for s in self.summaries:
            if s.scale == scale:
                return s
        raise KeyError(scale)


@dataclass
class WindowRollouts:
    """Raw per-window outputs used by both evaluate and controllability."""

    speeds: np.ndarray     # [N, P]
    spacings: np.ndarray   # [N, P]
    collided: np.ndarray   # [N]
    behaved: np.ndarray    # [N]


# ---------------------------------------------------------------------------
# Rollouts
# ---------------------------------------------------------------------------


def _scaled(inputs: ModelInput, model: Model, scale: float) -> ModelInput:
    if scale == 1.0:
        return inputs
    psi = inputs.psi * scale
    hist = inputs.history.copy()
    st = model.stats
    psi_std = (psi - st.mean[4]) / st.std[4]
    hist[:, :, 4] = psi_std[:, None]
    return ModelInput(hist, inputs.lv, psi, inputs.v_fv0, inputs.spacing0, psi_std)


def run_windows(model: Model, windows: WindowSet, kind: CourtesyKind, scale: float = 1.0,
                batch_size: int = 256, workers: int = 1) -> WindowRollouts:
    """Closed-loop rollouts of every window, batched; order of results is fixed."""
    n = len(windows)
    inputs = _scaled(windows.inputs, model, scale)
    chunks = [np.arange(lo, min(n, lo + batch_size)) for lo in range(0, n, batch_size)]

    def one(idx: np.ndarray):
        x = inputs
        batch = ModelInput(x.history[idx], x.lv[idx], x.psi[idx], x.v_fv0[idx], x.spacing0[idx], x.psi_std[idx])
        with ad.no_tape():
            res = simulate(model, batch)
        return res.speeds.data, res.spacings.data, res.collided

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one, chunks))
    else:
        parts = [one(c) for c in chunks]
    speeds = np.concatenate([p[0] for p in parts])
    spacings = np.concatenate([p[1] for p in parts])
    collided = np.concatenate([p[2] for p in parts])
    behaved = discourtesy_values(speeds, model.config.dt, kind, strict=False)
    return WindowRollouts(speeds, spacings, collided, behaved)


def _windows_for(model: Model, events: Sequence[TrajectoryEvent], labels: Mapping[str, float] | None,
                 kind: CourtesyKind, stride: int | None) -> WindowSet:
    if not events:
        raise DataError("evaluation needs a non-empty set of events")
    cfg = model.config
    for ev in events:
        if abs(ev.dt - cfg.dt) > 1e-12:
            raise DataError(f"event {ev.event_id} has dt {ev.dt}, model expects {cfg.dt}")
    psi = event_labels(events, kind, labels)
    return make_windows(events, psi, model.stats, cfg, stride or max(1, cfg.horizon // 2))


def _select(events: Sequence[TrajectoryEvent], split: SplitAssignment | None, which: str) -> list[TrajectoryEvent]:
    if split is None:
        return list(events)
    chosen = split.select(events, which)
    if not chosen:
        raise DataError(f"the {which} split is empty")
    return chosen


def _report(model: Model, windows: WindowSet, roll: WindowRollouts) -> EvalReport:
    spacing_mse = float(np.mean(np.mean((roll.spacings - windows.s_true) ** 2, axis=1)))
    speed_mse = float(np.mean(np.mean((roll.speeds - windows.v_true) ** 2, axis=1)))
    label = windows.inputs.psi
    courtesy_mse = float(np.mean((roll.behaved - label) ** 2))
    corr = pearson(roll.behaved, label)
    if corr is None:
        log.warning("courtesy correlation undefined: zero variance in behaved or labelled discourtesy")
    return EvalReport(
        spacing_mse=spacing_mse, speed_mse=speed_mse, courtesy_mse=courtesy_mse, courtesy_corr=corr,
        n_events=len(set(windows.event_ids)), collision_rate=float(np.mean(roll.collided)),
        n_windows=len(windows), model=model.config.name)


def evaluate(
    model: Model,
    events: Sequence[TrajectoryEvent],
    split: SplitAssignment | None = None,
    kind: "str | CourtesyKind | None" = None,
    labels: Mapping[str, float] | None = None,
    which: str = "test",
    stride: int | None = None,
    workers: int = 1,
) -> EvalReport:
    """Spacing/speed/courtesy metrics over every window of the chosen events.

    MSEs are averaged over the steps of a window and then over windows. The
    courtesy correlation is Pearson's r between the discourtesy of each
    predicted window and its label.
    """
    kind = CourtesyKind.parse(kind or model.config.courtesy_kind)
    chosen = _select(events, split, which)
    windows = _windows_for(model, chosen, labels, kind, stride)
    return _report(model, windows, run_windows(model, windows, kind, workers=workers))


def controllability(
    model: Model,
    events: Sequence[TrajectoryEvent],
    scales: Sequence[float] = (0.5, 1.0, 1.5),
    split: SplitAssignment | None = None,
    kind: "str | CourtesyKind | None" = None,
    labels: Mapping[str, float] | None = None,
    which: str = "test",
    stride: int | None = None,
    workers: int = 1,
) -> ControllabilityReport:
    """Re-run every window with the commanded psi multiplied by each scale."""
    if not model.config.conditioned:
        raise ConfigError("controllability requires a psi-conditioned model")
    scales = tuple(float(s) for s in scales)
    if any(not np.isfinite(s) or s <= 0 for s in scales):
        raise ConfigError(f"psi scales must be positive, got {scales}")
    kind = CourtesyKind.parse(kind or model.config.courtesy_kind)
    chosen = _select(events, split, which)
    windows = _windows_for(model, chosen, labels, kind, stride)
    summaries = []
    for k in scales:
        roll = run_windows(model, windows, kind, scale=k, workers=workers)
        gaps = time_gap(roll.spacings, roll.speeds).ravel()
        counts, _ = np.histogram(np.clip(gaps, HIST_EDGES[0], HIST_EDGES[-1] - 1e-9), bins=HIST_EDGES)
        desired = windows.inputs.psi * k
        summaries.append(ScaleSummary(
            scale=k, median_time_gap=float(np.median(gaps)), mean_time_gap=float(np.mean(gaps)),
            histogram=counts / counts.sum(), mean_behaved_psi=float(np.mean(roll.behaved)),
            psi_corr=pearson(desired, roll.behaved), desired=desired, behaved=roll.behaved))
        log.info("scale %.2f: median time gap %.4f s, mean behaved psi %.6f",
                 k, summaries[-1].median_time_gap, summaries[-1].mean_behaved_psi)
    return ControllabilityReport(scales, tuple(summaries), tuple(windows.event_ids), tuple(windows.starts),
                                 model.config.name)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def _fmt(x: float | None, digits: int = 4) -> str:
    return "undefined" if x is None else f"{x:.{digits}f}"


def render_table(reports: Sequence[EvalReport]) -> str:
    """Aligned text table, one row per model."""
    header = ("Model",) + TABLE_COLUMNS
    rows = [(r.model or "-", _fmt(r.spacing_mse), _fmt(r.speed_mse), _fmt(r.courtesy_mse, 6), _fmt(r.courtesy_corr))
            for r in reports]
    widths = [max(len(str(c)) for c in col) for col in zip(header, *rows)]
    lines = ["  ".join(str(c).rjust(w) if i else str(c).ljust(w) for i, (c, w) in enumerate(zip(line, widths)))
             for line in [header, *rows]]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def render_controllability(report: ControllabilityReport) -> str:
    header = ("psi scale", "median time gap (s)", "mean time gap (s)", "mean behaved psi", "desired-behaved corr")
    rows = [(f"{s.scale:g}", _fmt(s.median_time_gap), _fmt(s.mean_time_gap), _fmt(s.mean_behaved_psi, 6),
             _fmt(s.psi_corr)) for s in report.summaries]
    widths = [max(len(c) for c in col) for col in zip(header, *rows)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(line, widths)) for line in [header, *rows]]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _csv(fields: Sequence[str], rows: Sequence[Mapping]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def metrics_csv(reports: Sequence[EvalReport]) -> str:
    return _csv(METRIC_FIELDS, [r.row() for r in reports])


def histogram_csv(report: ControllabilityReport) -> str:
    rows = []
    for s in report.summaries:
        for lo, hi, f in zip(HIST_EDGES[:-1], HIST_EDGES[1:], s.histogram):
            rows.append({"scale": s.scale, "bin_lo": float(lo), "bin_hi": float(hi), "frequency": float(f)})
    return _csv(HIST_FIELDS, rows)


def summary_csv(report: ControllabilityReport) -> str:
    rows = [{"scale": s.scale, "median_time_gap": s.median_time_gap, "mean_time_gap": s.mean_time_gap,
             "mean_behaved_psi": s.mean_behaved_psi,
             "psi_corr": s.psi_corr if s.psi_corr is not None else "", "corr_defined": int(s.psi_corr is not None)}
            for s in report.summaries]
    return _csv(SUMMARY_FIELDS, rows)


def scatter_csv(report: ControllabilityReport) -> str:
    rows = []
    for s in report.summaries:
        for eid, start, d, b in zip(report.event_ids, report.starts, s.desired, s.behaved):
            rows.append({"scale": s.scale, "event_id": eid, "start": int(start),
                         "desired_psi": float(d), "behaved_psi": float(b)})
    return _csv(SCATTER_FIELDS, rows)


def report_render(report: "EvalReport | ControllabilityReport | Sequence[EvalReport]") -> tuple[str, dict[str, str]]:
    """Text table plus ``file name -> CSV text`` for plotting."""
    if isinstance(report, ControllabilityReport):
        return render_controllability(report), {
            "timegap_histogram.csv": histogram_csv(report),
            "controllability_summary.csv": summary_csv(report),
            "psi_scatter.csv": scatter_csv(report),
        }
    reports = [report] if isinstance(report, EvalReport) else list(report)
    return render_table(reports), {"metrics.csv": metrics_csv(reports)}


def write_report(report, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table, files = report_render(report)
    written = [out / "report.txt"]
    written[0].write_text(table)
    for name, text in files.items():
        (out / name).write_text(text)
        written.append(out / name)
    return written


def _num(x: str) -> float | None:
    return None if x == "" else float(x)


def parse_metrics_csv(text: str) -> list[EvalReport]:
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        out.append(EvalReport(
            spacing_mse=float(row["spacing_mse"]), speed_mse=float(row["speed_mse"]),
            courtesy_mse=float(row["courtesy_mse"]), courtesy_corr=_num(row["courtesy_corr"]),
            n_events=int(row["n_events"]), collision_rate=float(row["collision_rate"]),
            n_windows=int(row["n_windows"]), model=row["model"]))
    return out


def parse_summary_csv(text: str) -> list[dict]:
    return [{k: (_num(v) if k != "corr_defined" else int(v)) for k, v in row.items()}
            for row in csv.DictReader(io.StringIO(text))]


def parse_histogram_csv(text: str) -> dict[float, np.ndarray]:
    out: dict[float, list[float]] = {}
    for row in csv.DictReader(io.StringIO(text)):
        out.setdefault(float(row["scale"]), []).append(float(row["frequency"]))
    return {k: np.array(v) for k, v in out.items()}
