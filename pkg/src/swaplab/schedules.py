"""Learning-rate schedules, the phase plan, and the phase-1 exit rule.

Schedules are functions of a fractional epoch position. Two kinds:

``piecewise_linear``
    Linear interpolation between ``(epoch, lr)`` knots, clamped to the first
    and last knot outside their range. A warm-up/peak/decay shape is three
    knots, e.g. ``[(0, 0), (30, 1.2), (150, 0)]``.
``cyclic``
    A sawtooth: each cycle of ``cycle_length`` epochs descends linearly from
    ``lr_peak`` towards ``lr_min`` and then jumps back to the peak. Positions
    past ``cycles * cycle_length`` return ``lr_min``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .errors import ContractError

PIECEWISE = "piecewise_linear"
CYCLIC = "cyclic"


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str = PIECEWISE
    knots: tuple[tuple[float, float], ...] = ()
    cycle_length: float = 0.0
    lr_peak: float = 0.0
    lr_min: float = 0.0
    cycles: int = 0

    def __post_init__(self):
        if self.kind == PIECEWISE:
            knots = tuple((float(e), float(v)) for e, v in self.knots)
            if not knots:
                raise ContractError("piecewise_linear schedule needs at least one knot")
            pos = [k[0] for k in knots]
            if any(b <= a for a, b in zip(pos, pos[1:])):
                raise ContractError(f"knot positions must be strictly increasing: {pos}")
            if any(v < 0 for _, v in knots):
                raise ContractError("learning rates must be >= 0")
            object.__setattr__(self, "knots", knots)
        elif self.kind == CYCLIC:
            if self.cycle_length <= 0:
                raise ContractError("cycle_length must be > 0")
            if self.cycles < 1:
                raise ContractError("cycles must be >= 1")
            if self.lr_peak < 0 or self.lr_min < 0:
                raise ContractError("learning rates must be >= 0")
        else:
            raise ContractError(f"unknown schedule kind {self.kind!r}")

    @classmethod
    def piecewise(cls, knots: Sequence[tuple[float, float]]) -> "ScheduleSpec":
        return cls(kind=PIECEWISE, knots=tuple(knots))

    @classmethod
    def warmup_decay(cls, peak: float, warmup_epochs: float, total_epochs: float,
                     final: float = 0.0) -> "ScheduleSpec":
        if warmup_epochs <= 0:
            return cls.piecewise([(0.0, peak), (total_epochs, final)])
        return cls.piecewise([(0.0, 0.0), (warmup_epochs, peak), (total_epochs, final)])

    @classmethod
    def cyclic(cls, cycle_length: float, lr_peak: float, lr_min: float,
               cycles: int) -> "ScheduleSpec":
        return cls(kind=CYCLIC, cycle_length=cycle_length, lr_peak=lr_peak,
                   lr_min=lr_min, cycles=cycles)

    @classmethod
    def constant(cls, lr: float) -> "ScheduleSpec":
        return cls.piecewise([(0.0, lr)])

    @property
    def horizon(self) -> float:
        if self.kind == CYCLIC:
            return self.cycle_length * self.cycles
        return self.knots[-1][0]

    def to_dict(self) -> dict[str, Any]:
        if self.kind == CYCLIC:
            return {"kind": CYCLIC, "cycle_length": self.cycle_length,
                    "lr_peak": self.lr_peak, "lr_min": self.lr_min, "cycles": self.cycles}
        return {"kind": PIECEWISE, "knots": [list(k) for k in self.knots]}


def lr_at(spec: ScheduleSpec, epoch_position: float) -> float:
    p = max(float(epoch_position), 0.0)
    if spec.kind == CYCLIC:
        if p >= spec.horizon:
            return spec.lr_min
        frac = math.fmod(p, spec.cycle_length) / spec.cycle_length
        return spec.lr_peak - (spec.lr_peak - spec.lr_min) * frac
    xs = [k[0] for k in spec.knots]
    ys = [k[1] for k in spec.knots]
    return float(np.interp(p, xs, ys))


@dataclass(frozen=True)
class PhasePlan:
    """Batch sizes, worker count and phase lengths for one SWAP run.

    ``epochs_phase2`` is Q, counted in epochs over the full training set.
    """

    tau: float = 0.98
    max_epochs_phase1: int = 150
    epochs_phase2: int = 30
    B1: int = 4096
    B2: int = 512
    W: int = 8

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ContractError(f"tau must lie in (0, 1], got {self.tau}")
        if self.W < 1:
            raise ContractError("W must be >= 1")
        if self.B1 < self.W or self.B1 % self.W:
            raise ContractError(f"B1={self.B1} must be >= W and divisible by W={self.W}")
        if self.B2 < 1:
            raise ContractError("B2 must be >= 1")
        if self.epochs_phase2 < 1:
            raise ContractError("epochs_phase2 (Q) must be >= 1")
        if self.max_epochs_phase1 < 0:
            raise ContractError("max_epochs_phase1 must be >= 0")

    @property
    def shard_size(self) -> int:
        return self.B1 // self.W


class Phase1Exit(str, enum.Enum):
    CONTINUE = "continue"
    EXIT_TAU = "exit_tau"
    EXIT_MAX_EPOCHS = "exit_max_epochs"


def phase1_exit_check(train_accuracy: float, plan: PhasePlan, epoch: int) -> Phase1Exit:
    """Decide at an epoch boundary; ``epoch`` counts completed epochs."""
    if train_accuracy >= plan.tau:
        return Phase1Exit.EXIT_TAU
    if epoch >= plan.max_epochs_phase1:
        return Phase1Exit.EXIT_MAX_EPOCHS
    return Phase1Exit.CONTINUE
