"""Run configuration: YAML grammar, validation, presets and dataset loading.

Top-level keys (all optional unless noted)::

    name: str                      # run label, used for the default output dir
    seed: int                      # master seed (default 0)
    threads: int                   # worker cap; 1 = deterministic serial mode
    output: str                    # output dir; relative paths sit under $SWAPLAB_OUT
    data: {...}                    # DataConfig fields
    model: {hidden: [int...], batchnorm: bool | [bool...], activation: relu|tanh}
    optimizer: {momentum, weight_decay, nesterov, decay_bn_params}
    phase_plan: {tau, max_epochs_phase1, epochs_phase2, B1, B2, W}
    schedules: {phase1: S, phase2: S, swa: S, sgd_small: S, sgd_large: S}
    swa: {variant, cycles, cycle_epochs, samples_per_cycle, large_batch,
          small_batch, lead_in}
    sgd_small: {batch_size, epochs, workers}
    sgd_large: {batch_size, epochs, workers}
    diagnostics: {trace_every}

A schedule ``S`` is one of::

    {kind: piecewise_linear, knots: [[epoch, lr], ...]}
    {kind: warmup_decay, peak, warmup_epochs, total_epochs, final}
    {kind: cyclic, cycle_length, lr_peak, lr_min, cycles}
    {kind: constant, lr}
"""

from __future__ import annotations

import dataclasses
import os
import types
import typing
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import yaml

from .data import (Dataset, generate_synthetic, load_csv, load_idx, standardize,
                   train_test_split)
from .errors import ConfigError, ContractError
from .nn import ACTIVATIONS, ModelSpec
from .optim import OptimizerConfig
from .schedules import CYCLIC, PIECEWISE, PhasePlan, ScheduleSpec
from .swa import VARIANTS, SwaPlan

MODES = ("sgd_small", "sgd_large", "swap", "swa")
OUT_ENV = "SWAPLAB_OUT"
PRESET_SUFFIXES = ("", ".toy", ".yaml")


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"  # synthetic | csv | idx
    kind: str = "gaussian_blobs"
    n: int = 8000
    d: int = 16
    classes: int = 6
    noise: float = 1.0
    spread: float = 1.0
    turns: float = 1.5
    seed: int | None = None  # defaults to the master seed
    path: str | None = None  # csv file, or idx image file
    labels_path: str | None = None  # idx label file
    test_path: str | None = None
    test_labels_path: str | None = None
    class_count: int | None = None
    test_fraction: float = 0.3
    standardize: bool = True

    def __post_init__(self):
        if self.source not in ("synthetic", "csv", "idx"):
            raise ContractError(f"unknown data source {self.source!r}")
        if self.source != "synthetic" and not self.path:
            raise ContractError(f"source {self.source!r} needs 'path'")
        if self.source == "idx" and not self.labels_path:
            raise ContractError("source 'idx' needs 'labels_path'")
        if not 0.0 < self.test_fraction < 1.0:
            raise ContractError("test_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class ModelConfig:
    hidden: tuple[int, ...] = (64, 64)
    batchnorm: bool | tuple[bool, ...] = True
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")


@dataclass(frozen=True)
class SwaConfig:
    variant: str = "lb_then_sb_swa"
    cycles: int = 8
    cycle_epochs: int = 10
    samples_per_cycle: int = 1
    large_batch: int | None = None  # default: phase_plan.B1
    small_batch: int | None = None  # default: phase_plan.B2
    lead_in: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractError(f"variant must be one of {VARIANTS}")


@dataclass(frozen=True)
class SgdConfig:
    batch_size: int = 512
    epochs: int = 100
    workers: int = 1


@dataclass(frozen=True)
class DiagnosticsConfig:
    trace_every: int = 0  # 0 disables the cosine trace


@dataclass(frozen=True)
class RunConfig:
    name: str = "run"
    seed: int = 0
    threads: int = 1
    output: str = "runs"
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    phase_plan: PhasePlan = field(default_factory=PhasePlan)
    schedules: dict[str, ScheduleSpec] = field(default_factory=dict)
    swa: SwaConfig = field(default_factory=SwaConfig)
    sgd_small: SgdConfig | None = None
    sgd_large: SgdConfig | None = None
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)

    # --- derived objects -------------------------------------------------

    def schedule(self, key: str) -> ScheduleSpec:
        try:
            return self.schedules[key]
        except KeyError:
            raise ConfigError(f"schedules.{key}", "required for this mode") from None

    def model_spec(self, input_dim: int, n_classes: int) -> ModelSpec:
        try:
            return ModelSpec((input_dim, *self.model.hidden, n_classes),
                             self.model.batchnorm, self.model.activation)
        except ContractError as err:
            raise ConfigError("model", str(err)) from err

    def swa_plan(self) -> SwaPlan:
        s = self.swa
        try:
            return SwaPlan(s.variant, s.cycles, s.cycle_epochs, s.samples_per_cycle,
                           s.large_batch or self.phase_plan.B1,
                           s.small_batch or self.phase_plan.B2)
        except ContractError as err:
            raise ConfigError("swa", str(err)) from err

    def data_seed(self) -> int:
        return self.seed if self.data.seed is None else self.data.seed

    def with_overrides(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})

    def validate_mode(self, mode: str) -> None:
        """Reject combinations that cannot run in ``mode`` before training starts."""
        if mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}, got {mode!r}")
        if mode == "swap":
            self.schedule("phase1")
            self.schedule("phase2")
        elif mode == "swa":
            self.schedule("swa")
            plan = self.swa_plan()
            if self.swa.lead_in and plan.variant != "small_batch_swa":
                self.schedule("phase1")
            sched = self.schedules["swa"]
            if sched.kind == CYCLIC and (sched.cycles != plan.cycles
                                         or sched.cycle_length != plan.cycle_epochs):
                raise ConfigError("schedules.swa",
                                  "cyclic cycles/cycle_length must match swa.cycles/cycle_epochs")
        else:
            sec = getattr(self, mode)
            if sec is None:
                raise ConfigError(mode, f"section required for mode {mode}")
            self.schedule(mode)
            if mode == "sgd_small" and sec.workers != 1:
                raise ConfigError("sgd_small.workers",
                                  f"small-batch SGD runs on a single worker, got {sec.workers}")
            if sec.batch_size % sec.workers:
                raise ConfigError(f"{mode}.batch_size",
                                  f"{sec.batch_size} not divisible by workers={sec.workers}")
        if self.threads < 1:
            raise ConfigError("threads", "must be >= 1")

    # --- (de)serialization ------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "schedules":
                v = {k: s.to_dict() for k, s in v.items()}
            elif dataclasses.is_dataclass(v):
                v = _plain(dataclasses.asdict(v))
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "RunConfig":
        if not isinstance(raw, Mapping):
            raise ConfigError("<root>", "config must be a mapping")
        raw = dict(raw)
        scheds = raw.pop("schedules", None) or {}
        if not isinstance(scheds, Mapping):
            raise ConfigError("schedules", "must be a mapping")
        cfg = _build(cls, raw, "")
        parsed = {str(k): parse_schedule(v, f"schedules.{k}") for k, v in scheds.items()}
        return dataclasses.replace(cfg, schedules=parsed)


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, list):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    return v


# --- generic dataclass builder ---------------------------------------------

def _join(prefix: str, name: str) -> str:
    return f"{prefix}.{name}" if prefix else name


def _coerce(tp, value, path: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        errors = []
        for a in (a for a in args if a is not type(None)):
            try:
                return _coerce(a, value, path)
            except ConfigError as err:
                errors.append(err.raw_message)
        raise ConfigError(path, "; ".join(errors))
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, Mapping):
            raise ConfigError(path, "expected a mapping")
        return _build(tp, value, path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, "expected a list")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v, f"{path}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(path, f"expected {len(args)} entries")
        return tuple(_coerce(a, v, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    return value


def _build(cls, raw: Mapping[str, Any], prefix: str):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(_join(prefix, str(unknown[0])), "unknown field")
    kwargs = {k: _coerce(hints[k], v, _join(prefix, k)) for k, v in raw.items()}
    try:
        return cls(**kwargs)
    except (ContractError, TypeError) as err:
        raise ConfigError(prefix or "<root>", str(err)) from err


def _num(d: Mapping, key: str, path: str, default=None) -> float:
    if key not in d:
        if default is None:
            raise ConfigError(_join(path, key), "required")
        return default
    return _coerce(float, d[key], _join(path, key))


def parse_schedule(raw: Any, path: str) -> ScheduleSpec:
    if not isinstance(raw, Mapping):
        raise ConfigError(path, "schedule must be a mapping")
    kind = raw.get("kind")
    allowed = {
        PIECEWISE: {"kind", "knots"},
        "warmup_decay": {"kind", "peak", "warmup_epochs", "total_epochs", "final"},
        CYCLIC: {"kind", "cycle_length", "lr_peak", "lr_min", "cycles"},
        "constant": {"kind", "lr"},
    }
    if kind not in allowed:
        raise ConfigError(_join(path, "kind"), f"must be one of {sorted(allowed)}, got {kind!r}")
    extra = sorted(set(raw) - allowed[kind])
    if extra:
        raise ConfigError(_join(path, extra[0]), "unknown field")
    try:
        if kind == PIECEWISE:
            knots = _coerce(tuple[tuple[float, float], ...], raw.get("knots"),
                            _join(path, "knots"))
            return ScheduleSpec.piecewise(knots)
        if kind == "warmup_decay":
            return ScheduleSpec.warmup_decay(_num(raw, "peak", path),
                                             _num(raw, "warmup_epochs", path, 0.0),
                                             _num(raw, "total_epochs", path),
                                             _num(raw, "final", path, 0.0))
        if kind == CYCLIC:
            cycles = _coerce(int, raw.get("cycles"), _join(path, "cycles"))
            return ScheduleSpec.cyclic(_num(raw, "cycle_length", path), _num(raw, "lr_peak", path),
                                       _num(raw, "lr_min", path, 0.0), cycles)
        return ScheduleSpec.constant(_num(raw, "lr", path))
    except ContractError as err:
        raise ConfigError(path, str(err)) from err


# --- files and presets -------------------------------------------------------

def preset_names() -> list[str]:
    root = resources.files("swaplab") / "presets"
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".toy"))


def resolve_config_path(path: str | Path) -> Path:
    """``path`` as given, else a shipped preset (``presets/<name>`` or ``<name>``)."""
    p = Path(path)
    if p.is_file():
        return p
    root = Path(str(resources.files("swaplab") / "presets"))
    stem = p.name
    for suffix in PRESET_SUFFIXES:
        cand = root / f"{stem}{suffix}"
        if cand.is_file():
            return cand
    raise ConfigError("--config", f"no such file or preset: {path}")


def load_config(path: str | Path) -> RunConfig:
    p = resolve_config_path(path)
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as err:
        raise ConfigError(str(p), f"invalid YAML: {err}") from err
    return RunConfig.from_dict(raw or {})


def output_dir(cfg: RunConfig, override: str | None = None) -> Path:
    out = Path(override) if override else Path(cfg.output)
    root = os.environ.get(OUT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    return out


def load_datasets(cfg: RunConfig, base: Path | None = None) -> tuple[Dataset, Dataset]:
    """Build ``(train, test)`` as described by ``cfg.data``."""
    d = cfg.data
    base = base or Path.cwd()

    def rel(p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else base / q

    seed = cfg.data_seed()
    try:
        if d.source == "synthetic":
            full = generate_synthetic(d.kind, d.n, d.d, d.classes, d.noise, seed,
                                      spread=d.spread, turns=d.turns)
            train, test = train_test_split(full, d.test_fraction, seed)
        elif d.source == "csv":
            full = load_csv(rel(d.path), d.class_count)
            if d.test_path:
                train, test = full, load_csv(rel(d.test_path), full.class_count)
            else:
                train, test = train_test_split(full, d.test_fraction, seed)
        else:
            full = load_idx(rel(d.path), rel(d.labels_path), d.class_count)
            if d.test_path:
                if not d.test_labels_path:
                    raise ConfigError("data.test_labels_path", "required with test_path")
                train, test = full, load_idx(rel(d.test_path), rel(d.test_labels_path),
                                             full.class_count)
            else:
                train, test = train_test_split(full, d.test_fraction, seed)
    except (ContractError, OSError) as err:
        raise ConfigError("data", str(err)) from err
    if d.standardize:
        train, test = standardize(train, test)
    return train, test
