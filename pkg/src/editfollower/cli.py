"""``editfollower`` command line.

Every subcommand reads optional settings from a TOML file (``--config``):
top-level keys apply to all subcommands and a ``[<subcommand>]`` table
overrides them. Flags given on the command line override both. The resolved
settings are written as ``resolved_config.toml`` next to the outputs and can
be passed back with ``--config`` to repeat the run.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path
from typing import Any, Callable, Sequence

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .courtesy import CourtesyKind, discourtesy
from .errors import ConfigError, DataError, EditFollowerError
from .evaluation import controllability, evaluate, write_report
from .models import load_checkpoint, save_checkpoint
from .models.base import build_input
from .rollout import simulate, time_gap, window_starts
from .synthcorpus import ACCEPTANCE_SPEC, ScenarioSpec, generate, write_labels
from .trajectory import (
    DEFAULT_DT, DEFAULT_MIN_DURATION, extract_events, load_events, split, write_events,
)
from .training import TrainConfig, history_rows, train

log = logging.getLogger("editfollower")

SUBCOMMANDS = ("extract", "label", "synth", "train", "simulate", "evaluate", "controllability")
SNAPSHOT_NAME = "resolved_config.toml"
HISTORY_FIELDS = ("epoch", "l_speed", "l_spacing", "l_courtesy", "l_total", "split")
SIMULATE_FIELDS = ("event_id", "t", "v_fv_pred", "spacing_pred", "time_gap")


class UsageError(Exception):
    """Bad command line; exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# Settings resolution
# ---------------------------------------------------------------------------

# name -> (default, type); a default of ``...`` marks a required setting.
REQUIRED = ...

SETTINGS: dict[str, dict[str, tuple[Any, Callable]]] = {
    "extract": {
        "input": (REQUIRED, str), "out": (REQUIRED, str),
        "min_duration": (DEFAULT_MIN_DURATION, float), "dt": (DEFAULT_DT, float), "schema": ("", str),
    },
    "label": {
        "input": (REQUIRED, str), "out": (REQUIRED, str), "kind": ("all", str),
    },
    "synth": {
        "out": (REQUIRED, str), "n": (2000, int), "spec": ("", str), "preset": ("acceptance", str),
        "seed": (None, int),
    },
    "train": {
        "events": (REQUIRED, str), "out": (REQUIRED, str), "labels": ("", str),
        **{f.name: (f.default, type(f.default) if f.default is not None else str) for f in fields(TrainConfig)},
    },
    "simulate": {
        "model": (REQUIRED, str), "events": (REQUIRED, str), "out": (REQUIRED, str), "labels": ("", str),
        "split": ("all", str), "psi_scale": (1.0, float),
    },
    "evaluate": {
        "model": (REQUIRED, str), "events": (REQUIRED, str), "report": (REQUIRED, str), "labels": ("", str),
        "split": ("test", str), "stride": (0, int),
    },
    "controllability": {
        "model": (REQUIRED, str), "events": (REQUIRED, str), "report": (REQUIRED, str), "labels": ("", str),
        "split": ("test", str), "scales": ("0.5,1.0,1.5", str), "stride": (0, int),
    },
}
COMMON = {"threads": (1, int)}


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _read_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML ({exc})") from None


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then config file (top level, then ``[command]``), then flags."""
    spec = {**COMMON, **SETTINGS[command]}
    doc = _read_config(args.config)
    from_file = {k: v for k, v in doc.items() if not isinstance(v, dict) and k in spec}
    section = doc.get(command, {})
    if not isinstance(section, dict):
        raise ConfigError(f"config key '{command}' must be a table")
    unknown = set(section) - set(spec) - {"scenario"}
    if unknown:
        raise ConfigError(f"unknown [{command}] keys: {', '.join(sorted(unknown))}")
    from_file.update({k: v for k, v in section.items() if k != "scenario"})
    out: dict[str, Any] = {}
    for name, (default, cast) in spec.items():
        flag_value = getattr(args, name, None)
        if flag_value is not None:
            value = flag_value
        elif name in from_file:
            value = from_file[name]
        elif default is REQUIRED:
            raise UsageError(f"{command}: missing required option {_flag(name)}")
        else:
            value = default
        out[name] = value
    if command == "synth" and isinstance(section.get("scenario"), dict):
        out["scenario"] = section["scenario"]
    if out["threads"] < 1:
        raise UsageError(f"{command}: --threads must be >= 1")
    return out


def write_snapshot(command: str, settings: dict, directory: Path) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    clean = {k: v for k, v in settings.items() if v is not None}
    path = directory / SNAPSHOT_NAME
    with path.open("wb") as fh:
        tomli_w.dump({"editfollower_version": __version__, command: clean}, fh)
    return path


def _out_dir(path: str) -> Path:
    return Path(path).resolve().parent


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _load(path: str):
    if not Path(path).exists():
        raise DataError(f"events file not found: {path}")
    events = load_events(path)
    if not events:
        raise DataError(f"{path}: no events")
    return events


def _labels(path: str, kind: CourtesyKind) -> dict[str, float] | None:
    if not path:
        return None
    from .synthcorpus import read_labels

    if not Path(path).exists():
        raise DataError(f"labels file not found: {path}")
    return read_labels(path, kind)


def _checkpoint(path: str):
    if not Path(path).exists():
        raise DataError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def _split_for(model, events, which: str):
    if which == "all":
        return None
    if which not in ("train", "val", "test"):
        raise UsageError(f"--split must be train, val, test or all, got '{which}'")
    seed = int(getattr(model, "checkpoint_extra", {}).get("split_seed", 0))
    return split(events, seed)


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _scenario(settings: dict) -> ScenarioSpec:
    if settings["spec"]:
        base = ScenarioSpec.from_mapping(_read_config(settings["spec"]))
    elif "scenario" in settings:
        base = ScenarioSpec.from_mapping(settings["scenario"])
    elif settings["preset"] == "acceptance":
        base = ACCEPTANCE_SPEC
    elif settings["preset"] == "default":
        base = ScenarioSpec()
    else:
        raise UsageError(f"--preset must be 'acceptance' or 'default', got '{settings['preset']}'")
    if settings["seed"] is not None:
        base = ScenarioSpec.from_mapping({**base.to_mapping(), "seed": settings["seed"]})
    return base


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_extract(s: dict) -> int:
    schema = None
    if s["schema"]:
        try:
            schema = dict(item.split("=", 1) for item in s["schema"].split(","))
        except ValueError:
            raise UsageError("--schema expects canonical=column pairs separated by commas") from None
    if not Path(s["input"]).exists():
        raise DataError(f"input file not found: {s['input']}")
    kept = extract_events(load_events(s["input"], schema=schema, dt=s["dt"]), s["min_duration"])
    write_events(s["out"], kept)
    write_snapshot("extract", s, _out_dir(s["out"]))
    print(f"wrote {len(kept)} events to {s['out']}")
    return 0


def cmd_label(s: dict) -> int:
    events = _load(s["input"])
    kinds = list(CourtesyKind) if s["kind"] == "all" else [CourtesyKind.parse(s["kind"])]
    rows = []
    for ev in events:
        for k in kinds:
            rows.append((ev.event_id, k.value, repr(discourtesy(ev.v_fv, ev.dt, k).value)))
    _write_csv(Path(s["out"]), ("event_id", "kind", "psi"), rows)
    write_snapshot("label", s, _out_dir(s["out"]))
    print(f"labelled {len(events)} events ({', '.join(k.value for k in kinds)})")
    return 0


def cmd_synth(s: dict) -> int:
    spec = _scenario(s)
    s = {**s, "scenario": spec.to_mapping()}
    corpus = generate(spec, s["n"])
    out = Path(s["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_events(out, corpus.events)
    write_labels(labels_path(out), corpus.labels)
    write_snapshot("synth", s, _out_dir(s["out"]))
    print(f"wrote {len(corpus.events)} events to {out} and labels to {labels_path(out)}")
    return 0


def labels_path(corpus: Path) -> Path:
    return corpus.with_name(corpus.stem + ".labels.csv")


def cmd_train(s: dict) -> int:
    cfg = TrainConfig.from_mapping({f.name: s[f.name] for f in fields(TrainConfig)})
    events = _load(s["events"])
    labels = _labels(s["labels"], cfg.label_kind)
    assignment = split(events, cfg.seed)
    result = train(events, assignment, cfg, labels=labels)
    out = Path(s["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.model, out, extra={
        "split_seed": cfg.seed, "best_epoch": result.best_epoch, "train_config": cfg.to_mapping(),
    })
    rows = [[r["epoch"], repr(r["l_speed"]), repr(r["l_spacing"]), repr(r["l_courtesy"]), repr(r["l_total"]), r["split"]]
            for r in history_rows(result.history)]
    _write_csv(out.with_name(out.stem + ".history.csv"), HISTORY_FIELDS, rows)
    write_snapshot("train", {**s, "courtesy": cfg.to_mapping()["courtesy"]}, _out_dir(s["out"]))
    print(f"trained {result.model.config.name}: best epoch {result.best_epoch}, checkpoint {out}")
    return 0


def cmd_simulate(s: dict) -> int:
    model = _checkpoint(s["model"])
    events = _load(s["events"])
    assignment = _split_for(model, events, s["split"])
    chosen = events if assignment is None else assignment.select(events, s["split"])
    kind = CourtesyKind.parse(model.config.courtesy_kind)
    labels = _labels(s["labels"], kind)
    if s["psi_scale"] <= 0:
        raise UsageError("--psi-scale must be > 0")
    cfg = model.config
    H, P = cfg.history, cfg.horizon
    rows = []
    from . import autodiff as ad

    for ev in chosen:
        psi = labels[ev.event_id] if labels and ev.event_id in labels else discourtesy(ev.v_fv, ev.dt, kind).value
        starts = window_starts(len(ev), H, P, P)
        if not starts:
            log.warning("event %s too short for a window of %d points", ev.event_id, H + P)
            continue
        batch = build_input([ev] * len(starts), starts, [psi * s["psi_scale"]] * len(starts), model.stats, cfg)
        with ad.no_tape():
            res = simulate(model, batch)
        v, sp = res.speeds.data, res.spacings.data
        gaps = time_gap(sp, v)
        for b, start in enumerate(starts):
            for k in range(P):
                i = start + H + k
                rows.append((ev.event_id, repr(float(ev.t[i])), repr(float(v[b, k])), repr(float(sp[b, k])),
                             repr(float(gaps[b, k]))))
    _write_csv(Path(s["out"]), SIMULATE_FIELDS, rows)
    write_snapshot("simulate", s, _out_dir(s["out"]))
    print(f"simulated {len(chosen)} events to {s['out']}")
    return 0


def cmd_evaluate(s: dict) -> int:
    model = _checkpoint(s["model"])
    events = _load(s["events"])
    assignment = _split_for(model, events, s["split"])
    kind = CourtesyKind.parse(model.config.courtesy_kind)
    report = evaluate(model, events, assignment, kind=kind, labels=_labels(s["labels"], kind),
                      which=s["split"] if assignment else "test", stride=s["stride"] or None, workers=s["threads"])
    write_report(report, s["report"])
    write_snapshot("evaluate", s, Path(s["report"]))
    from .evaluation import render_table

    print(render_table([report]), end="")
    return 0


def cmd_controllability(s: dict) -> int:
    try:
        scales = [float(x) for x in str(s["scales"]).split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--scales expects comma-separated numbers, got '{s['scales']}'") from None
    model = _checkpoint(s["model"])
    events = _load(s["events"])
    assignment = _split_for(model, events, s["split"])
    kind = CourtesyKind.parse(model.config.courtesy_kind)
    report = controllability(model, events, scales, assignment, kind=kind, labels=_labels(s["labels"], kind),
                             which=s["split"] if assignment else "test", stride=s["stride"] or None,
                             workers=s["threads"])
    write_report(report, s["report"])
    write_snapshot("controllability", s, Path(s["report"]))
    from .evaluation import render_controllability

    print(render_controllability(report), end="")
    return 0


COMMANDS = {
    "extract": cmd_extract, "label": cmd_label, "synth": cmd_synth, "train": cmd_train,
    "simulate": cmd_simulate, "evaluate": cmd_evaluate, "controllability": cmd_controllability,
}

HELP = {
    "extract": "split raw rows into single-leader events longer than the minimum duration",
    "label": "compute discourtesy labels (event_id,kind,psi) for an events CSV",
    "synth": "generate a labelled synthetic corpus",
    "train": "train a model and write a checkpoint plus its loss history",
    "simulate": "closed-loop predictions for every window of the given events",
    "evaluate": "spacing/speed/courtesy metrics on a split",
    "controllability": "rerun evaluation with the commanded discourtesy scaled",
}

FLAG_HELP = {
    "input": "input CSV", "out": "output path", "events": "events CSV (trajectory schema)",
    "labels": "labels CSV (event_id,kind,psi); computed from the events when omitted",
    "model": "checkpoint written by 'train'", "report": "output directory for the report",
    "split": "train, val, test or all", "scales": "comma-separated psi multipliers",
    "courtesy": "speed, accel, jerk or none (unconditioned baseline)", "spec": "scenario TOML file",
    "preset": "built-in scenario when no --spec is given: acceptance or default",
    "schema": "column renames, e.g. t=time,spacing=gap", "kind": "speed, accel, jerk or all",
    "arch": "idm, lstm, lstm_idm or transformer", "seed": "root seed (split, initialisation, batches)",
    "n": "number of events", "psi_scale": "multiplier on the commanded discourtesy",
    "stride": "window stride in steps (default: half the horizon)",
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="editfollower", description="Courtesy-conditioned car-following models.",
                     epilog="Log level: set EDITFOLLOWER_LOG (DEBUG, INFO, WARNING, ...).")
    parser.add_argument("--version", action="version", version=f"editfollower {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}", parser_class=_Parser)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=HELP[name], description=HELP[name])
        p.add_argument("--config", help="TOML settings file; flags override its values")
        p.add_argument("--threads", type=int, help="maximum worker threads (default 1)")
        for key, (default, cast) in SETTINGS[name].items():
            kw: dict[str, Any] = {"dest": key, "default": None}
            if cast is bool:
                kw["type"] = lambda x: x.lower() in ("1", "true", "yes")
            else:
                kw["type"] = cast
            suffix = " (required)" if default is REQUIRED else ("" if default in (None, "") else f" (default {default})")
            kw["help"] = FLAG_HELP.get(key, key.replace("_", " ")) + suffix
            names = [_flag(key)] + (["--output"] if key == "out" else [])
            p.add_argument(*names, **kw)
    return parser


def configure_logging() -> None:
    level_name = os.environ.get("EDITFOLLOWER_LOG", "WARNING").upper()
    level = logging.getLevelName(level_name)
    known = isinstance(level, int)
    logging.basicConfig(level=level if known else logging.WARNING, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logging.getLogger("editfollower").setLevel(level if known else logging.WARNING)
    if not known:
        log.warning("unknown EDITFOLLOWER_LOG level '%s', using WARNING", level_name)


def main(argv: Sequence[str] | None = None) -> int:
    configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("editfollower: error: a subcommand is required")
        settings = resolve(args.command, args)
        return COMMANDS[args.command](settings)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except EditFollowerError as exc:
        print(f"editfollower: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"editfollower: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:   # --help / --version
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
