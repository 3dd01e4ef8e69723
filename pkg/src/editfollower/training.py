"""Composite speed/spacing/courtesy loss and the training loop."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .courtesy import CourtesyKind, discourtesy_differentiable, label_event
from .errors import ConfigError, DataError, DivergenceError, NumericalError
from .models import Model, ModelConfig, ModelInput, Standardizer, build_input, build_model
from .rollout import BatchRollout, simulate, window_starts
from .trajectory import SplitAssignment, TrajectoryEvent

log = logging.getLogger(__name__)


@dataclass
class LossBreakdown:
    l_speed: ad.Tensor
    l_spacing: ad.Tensor
    l_courtesy: ad.Tensor
    l_total: ad.Tensor
    alpha: float

    def values(self) -> dict[str, float]:
        return {k: float(getattr(self, k).data) for k in ("l_speed", "l_spacing", "l_courtesy", "l_total")}

    def identity_error(self) -> float:
        v = self.values()
        return abs(v["l_total"] - (v["l_speed"] + v["l_spacing"] + self.alpha * v["l_courtesy"]))


def composite_loss(
    speeds: ad.Tensor,
    spacings: ad.Tensor,
    v_label: np.ndarray,
    s_label: np.ndarray,
    psi_label: np.ndarray | float,
    alpha: float,
    kind: "str | CourtesyKind",
    dt: float,
) -> LossBreakdown:
    """``l_speed + l_spacing + alpha * l_courtesy``, all mean squared errors.

    Inputs may be single windows (``[P]``) or batches (``[B, P]``). The
    behaved discourtesy is measured on the predicted speeds of each window
    and compared with that window's label.
    """
    if alpha < 0:
        raise ConfigError(f"alpha must be >= 0, got {alpha}")
    v_label = np.asarray(v_label, dtype=np.float64)
    s_label = np.asarray(s_label, dtype=np.float64)
    if speeds.shape != v_label.shape or spacings.shape != s_label.shape or speeds.shape != spacings.shape:
        raise DataError(
            f"length mismatch: speeds {speeds.shape}, spacings {spacings.shape}, "
            f"speed label {v_label.shape}, spacing label {s_label.shape}")
    dv = speeds - v_label
    ds = spacings - s_label
    l_speed = ad.mean(dv * dv)
    l_spacing = ad.mean(ds * ds)
    behaved = discourtesy_differentiable(speeds, dt, kind)
    psi_label = np.asarray(psi_label, dtype=np.float64)
    if psi_label.shape != behaved.shape:
        raise DataError(f"label shape {psi_label.shape} does not match behaved discourtesy shape {behaved.shape}")
    dc = behaved - psi_label
    l_courtesy = ad.mean(dc * dc)
    l_total = l_speed + l_spacing + l_courtesy * alpha
    return LossBreakdown(l_speed, l_spacing, l_courtesy, l_total, float(alpha))


# ---------------------------------------------------------------------------
# Optimisation
# ---------------------------------------------------------------------------


class Adam:
    def __init__(self, params: Sequence[ad.Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ConfigError(f"learning rate must be > 0, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(params: Sequence[ad.Tensor], max_norm: float) -> float:
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float((p.grad ** 2).sum()) for p in params if p.grad is not None)))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


# ---------------------------------------------------------------------------
# Windows
# ---------------------------------------------------------------------------


@dataclass
class WindowSet:
    """All windows of a list of events, as one stacked batch plus targets."""

    inputs: ModelInput
    v_true: np.ndarray        # [N, P]
    s_true: np.ndarray        # [N, P]
    event_ids: list[str]
    starts: list[int]

    def __len__(self) -> int:
        return len(self.starts)

    def take(self, idx: np.ndarray) -> tuple[ModelInput, np.ndarray, np.ndarray]:
        x = self.inputs
        sub = ModelInput(x.history[idx], x.lv[idx], x.psi[idx], x.v_fv0[idx], x.spacing0[idx], x.psi_std[idx])
        return sub, self.v_true[idx], self.s_true[idx]


def make_windows(
    events: Sequence[TrajectoryEvent],
    psi: Mapping[str, float],
    stats: Standardizer,
    config: ModelConfig,
    stride: int,
) -> WindowSet:
    H, P = config.history, config.horizon
    evs, starts = [], []
    for ev in events:
        for s in window_starts(len(ev), H, P, stride):
            evs.append(ev)
            starts.append(s)
    if not evs:
        raise DataError(f"no event is long enough for a window of {H + P} points")
    inputs = build_input(evs, starts, [psi[e.event_id] for e in evs], stats, config)
    v_true = np.stack([e.v_fv[s + H : s + H + P] for e, s in zip(evs, starts)])
    s_true = np.stack([e.spacing[s + H : s + H + P] for e, s in zip(evs, starts)])
    return WindowSet(inputs, v_true, s_true, [e.event_id for e in evs], starts)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    arch: str = "lstm_idm"
    courtesy: str | None = "speed"
    alpha: float = 1.0
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 30
    patience: int = 5
    seed: int = 0
    hidden: int = 64
    history: int = 50
    horizon: int = 50
    stride: int = 25
    clip_norm: float = 1.0
    d_model: int = 32
    heads: int = 4
    layers: int = 1
    eval_batch_size: int = 256

    def __post_init__(self) -> None:
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.courtesy is not None:
            CourtesyKind.parse(self.courtesy)

    @property
    def conditioned(self) -> bool:
        return self.courtesy is not None

    @property
    def label_kind(self) -> CourtesyKind:
        """Kind used for labels; unconditioned runs still monitor speed discourtesy."""
        return CourtesyKind.parse(self.courtesy or "speed")

    @property
    def effective_alpha(self) -> float:
        return self.alpha if self.conditioned else 0.0

    def model_config(self, dt: float) -> ModelConfig:
        return ModelConfig(
            arch=self.arch, conditioned=self.conditioned, hidden=self.hidden, history=self.history,
            horizon=self.horizon, dt=dt, d_model=self.d_model, heads=self.heads, layers=self.layers,
            courtesy_kind=self.label_kind.value)

    @classmethod
    def from_mapping(cls, data: Mapping) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown training keys: {', '.join(sorted(unknown))}")
        data = dict(data)
        if data.get("courtesy") in ("none", "", None):
            data["courtesy"] = None
        return cls(**data)

    def to_mapping(self) -> dict:
        d = asdict(self)
        d["courtesy"] = d["courtesy"] or "none"
        return d


@dataclass
class EpochRecord:
    epoch: int
    split: str
    l_speed: float
    l_spacing: float
    l_courtesy: float
    l_total: float


@dataclass
class TrainResult:
    model: Model
    history: list[EpochRecord]
    best_epoch: int
    identity_max_error: float
    steps: int
    config: TrainConfig
    step_losses: list[dict[str, float]] = field(default_factory=list)


def event_labels(events: Sequence[TrajectoryEvent], kind: "str | CourtesyKind",
                 labels: Mapping[str, float] | None = None) -> dict[str, float]:
    """Event-level labels, taken from ``labels`` when given, else computed."""
    out = {}
    for ev in events:
        if labels is not None and ev.event_id in labels:
            out[ev.event_id] = float(labels[ev.event_id])
        else:
            out[ev.event_id] = label_event(ev, kind).value
    return out


def evaluate_loss(model: Model, windows: WindowSet, alpha: float, kind: CourtesyKind,
                  batch_size: int = 256) -> dict[str, float]:
    """Window-averaged loss terms without recording a tape."""
    sums = dict.fromkeys(("l_speed", "l_spacing", "l_courtesy", "l_total"), 0.0)
    n = len(windows)
    with ad.no_tape():
        for lo in range(0, n, batch_size):
            idx = np.arange(lo, min(n, lo + batch_size))
            batch, v_true, s_true = windows.take(idx)
            res = simulate(model, batch)
            loss = composite_loss(res.speeds, res.spacings, v_true, s_true, batch.psi, alpha, kind, model.config.dt)
            for k, v in loss.values().items():
                sums[k] += v * len(idx)
    return {k: v / n for k, v in sums.items()}


def train(
    events: Sequence[TrajectoryEvent],
    split: SplitAssignment,
    config: TrainConfig,
    labels: Mapping[str, float] | None = None,
    record_steps: bool = False,
    init_params: Mapping[str, np.ndarray] | None = None,
) -> TrainResult:
    """Fit a model on the training split with early stopping on validation ``l_total``.

    Args:
        events: all events; the split decides which are used.
        split: event-level assignment.
        config: hyperparameters.
        labels: optional ``event_id -> psi`` for ``config.label_kind``;
            missing entries are computed from the events.
        record_steps: keep the per-step loss values in the result.
        init_params: optional starting parameters (must match the architecture).
    """
    train_ev = split.select(events, "train")
    val_ev = split.select(events, "val")
    if not train_ev or not val_ev:
        raise DataError("training needs non-empty train and val splits")
    dt = train_ev[0].dt
    kind = config.label_kind
    alpha = config.effective_alpha
    psi = event_labels(list(train_ev) + list(val_ev), kind, labels)
    stats = Standardizer.fit(train_ev, [psi[e.event_id] for e in train_ev])
    mcfg = config.model_config(dt)
    model = build_model(mcfg, params=dict(init_params) if init_params is not None else None,
                        stats=stats, seed=config.seed)
    tr = make_windows(train_ev, psi, stats, mcfg, config.stride)
    va = make_windows(val_ev, psi, stats, mcfg, config.stride)
    log.info("training %s: %d train windows, %d val windows, %d parameters",
             mcfg.name, len(tr), len(va), model.n_parameters())

    params = model.parameters()
    opt = Adam(params, lr=config.lr)
    rng = np.random.default_rng(config.seed)
    history: list[EpochRecord] = []
    best_val, best_epoch, best_state, stale = np.inf, 0, model.state_dict(), 0
    identity_max, steps = 0.0, 0
    step_losses: list[dict[str, float]] = []

    def record(epoch: int, split_name: str, vals: dict[str, float]) -> None:
        history.append(EpochRecord(epoch, split_name, vals["l_speed"], vals["l_spacing"],
                                   vals["l_courtesy"], vals["l_total"]))

    record(0, "train", evaluate_loss(model, tr, alpha, kind, config.eval_batch_size))
    val0 = evaluate_loss(model, va, alpha, kind, config.eval_batch_size)
    record(0, "val", val0)
    best_val = val0["l_total"]

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(tr))
        sums = dict.fromkeys(("l_speed", "l_spacing", "l_courtesy", "l_total"), 0.0)
        for bi, lo in enumerate(range(0, len(tr), config.batch_size)):
            idx = order[lo : lo + config.batch_size]
            batch, v_true, s_true = tr.take(idx)
            try:
                with ad.Tape():
                    res: BatchRollout = simulate(model, batch)
                    loss = composite_loss(res.speeds, res.spacings, v_true, s_true, batch.psi, alpha, kind, dt)
                    ad.backward(loss.l_total)
            except NumericalError as exc:
                raise DivergenceError(epoch, bi, str(exc)) from exc
            vals = loss.values()
            if not np.isfinite(vals["l_total"]):
                raise DivergenceError(epoch, bi, "non-finite loss")
            identity_max = max(identity_max, loss.identity_error())
            clip_grad_norm(params, config.clip_norm)
            opt.step()
            ad.zero_grad(params)
            steps += 1
            if record_steps:
                step_losses.append(vals)
            for k, v in vals.items():
                sums[k] += v * len(idx)
        record(epoch, "train", {k: v / len(tr) for k, v in sums.items()})
        val = evaluate_loss(model, va, alpha, kind, config.eval_batch_size)
        record(epoch, "val", val)
        log.info("epoch %d: train l_total %.4f, val l_total %.4f (speed %.4f, spacing %.4f, courtesy %.6f)",
                 epoch, history[-2].l_total, val["l_total"], val["l_speed"], val["l_spacing"], val["l_courtesy"])
        if val["l_total"] < best_val:
            best_val, best_epoch, best_state, stale = val["l_total"], epoch, model.state_dict(), 0
        else:
            stale += 1
            if stale >= config.patience:
                log.info("early stop after epoch %d (best epoch %d)", epoch, best_epoch)
                break

    model.load_state_dict(best_state)
    return TrainResult(model, history, best_epoch, identity_max, steps, config, step_losses)


def history_rows(history: Sequence[EpochRecord]) -> list[dict]:
    return [asdict(r) for r in history]


def with_overrides(config: TrainConfig, **overrides) -> TrainConfig:
    return replace(config, **{k: v for k, v in overrides.items() if v is not None})
