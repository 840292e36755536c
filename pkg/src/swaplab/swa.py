"""Sequential stochastic weight averaging baselines and the SWA-vs-SWAP table.

Three variants share one cyclic training loop:

* ``large_batch_swa``: optional large-batch lead-in, cycles at the large batch
* ``lb_then_sb_swa``: large-batch lead-in stopped at ``tau`` (phase-1 rules),
  cycles at the small batch
* ``small_batch_swa``: cycles at the small batch straight from ``start``
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .data import Dataset, dataset_fingerprint, epoch_batches
from .errors import ContractError, DivergenceError, NumericError
from .nn import ModelSpec, WeightVector, check_model, evaluate, loss_grad_logits
from .optim import OptimizerConfig, OptimizerState, sgd_update
from .rng import make_stream
from .runtime import (EpochRecord, RunHistory, StepRecord, SwapResult, TraceSnapshot,
                      _grad_flat, bn_evaluate, phase3_average, run_phase1,
                      small_batch_epoch_len)
from .schedules import CYCLIC, PhasePlan, ScheduleSpec, lr_at

VARIANTS = ("large_batch_swa", "lb_then_sb_swa", "small_batch_swa")


@dataclass(frozen=True)
class SwaPlan:
    variant: str = "lb_then_sb_swa"
    cycles: int = 8
    cycle_epochs: int = 10
    samples_per_cycle: int = 1
    large_batch: int = 4096
    small_batch: int = 512

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.cycles < 1 or self.cycle_epochs < 1 or self.samples_per_cycle < 1:
            raise ContractError("cycles, cycle_epochs and samples_per_cycle must be >= 1")

    @property
    def batch_size(self) -> int:
        return self.large_batch if self.variant == "large_batch_swa" else self.small_batch

    @property
    def n_samples(self) -> int:
        return self.cycles * self.samples_per_cycle


@dataclass
class SwaResult:
    averaged: WeightVector
    samples: list[WeightVector]
    history: RunHistory
    spec: ModelSpec
    sample_test_acc: list[float] = field(default_factory=list)
    lead_model: WeightVector | None = None
    variant: str = ""

    def summary(self) -> dict[str, Any]:
        final = [r for r in self.history.records if r.phase == 3][-1]
        return {
            "method": self.variant,
            "n_models": len(self.samples),
            "T": self.history.T,
            "phase1_exit": self.history.exit_reason,
            "sample_test_acc": list(self.sample_test_acc),
            "test_acc_before_averaging": (float(np.mean(self.sample_test_acc))
                                          if self.sample_test_acc else None),
            "test_acc_after_averaging": final.test_acc,
            "train_acc_after_averaging": final.train_acc,
        }


def _snapshot_steps(steps_per_cycle: int, per_cycle: int) -> set[int]:
    """Local step counts (within a cycle, 1-based) after which to snapshot."""
    return {round(k * steps_per_cycle / per_cycle) for k in range(1, per_cycle + 1)}


def swa_run(start: WeightVector, plan: SwaPlan, schedule: ScheduleSpec, data: Dataset,
            cfg: OptimizerConfig, seed: int, spec: ModelSpec, *,
            test_data: Dataset | None = None,
            lead_in: tuple[PhasePlan, ScheduleSpec] | None = None,
            threads: int = 1, trace_every: int = 0) -> SwaResult:
    """Train sequentially with ``schedule``, snapshot at cycle ends, average.

    The cyclic segment is positioned on a fresh clock (epoch 0 = its start).
    ``lead_in`` runs the phase-1 loop first; it is ignored for
    ``small_batch_swa``.
    """
    check_model(start, spec)
    if schedule.kind == CYCLIC and (schedule.cycles != plan.cycles
                                    or schedule.cycle_length != plan.cycle_epochs):
        raise ContractError(
            f"cyclic schedule ({schedule.cycles} x {schedule.cycle_length} epochs) does not "
            f"match the plan ({plan.cycles} x {plan.cycle_epochs})")
    t_start = time.perf_counter()
    history = RunHistory()
    model = start
    lead_model = None
    if lead_in is not None and plan.variant != "small_batch_swa":
        lead_plan, lead_schedule = lead_in
        model, h1 = run_phase1(start, lead_plan, lead_schedule, data, cfg, seed, spec,
                               test_data=test_data, threads=threads, trace_every=trace_every)
        history.extend(h1)
        lead_model = model
    offset = history.T or 0

    batch = plan.batch_size
    if batch > len(data):
        raise ContractError(f"batch size {batch} exceeds dataset size {len(data)}")
    min_batch = 2 if spec.has_bn else 1
    per_epoch = small_batch_epoch_len(len(data), batch, spec)
    steps_per_cycle = per_epoch * plan.cycle_epochs
    snap_at = _snapshot_steps(steps_per_cycle, plan.samples_per_cycle)
    stream = make_stream(seed, "swa")
    state = OptimizerState.zeros_like(model)
    names = model.names
    samples: list[WeightVector] = []
    sample_acc: list[float] = []
    k = 0
    t_cyc = time.perf_counter()
    for epoch in range(plan.cycles * plan.cycle_epochs):
        bp = epoch_batches(data, batch, stream.generator, min_batch=min_batch)
        losses, correct, seen, lr = [], 0, 0, 0.0
        pending = None  # snapshot taken on the epoch's last step
        for i, idx in enumerate(bp):
            cycle = k // steps_per_cycle
            t = offset + k
            pos = k / per_epoch
            lr = lr_at(schedule, pos)
            b = data.batch(idx)
            try:
                loss, grad, logits = loss_grad_logits(model, spec, b)
            except NumericError as err:
                raise DivergenceError("swa", t, cycle=cycle, detail=str(err)) from err
            if trace_every and k % trace_every == 0:
                history.trace.append(TraceSnapshot(2, 0, t, model.flat(), _grad_flat(grad, names)))
            model, state = sgd_update(model, state, grad, lr, cfg)
            history.steps.append(StepRecord(2, 0, t, pos, lr, loss))
            losses.append(loss)
            correct += int(np.sum(np.argmax(logits, axis=1) == b.labels))
            seen += len(b)
            k += 1
            if (k - cycle * steps_per_cycle) not in snap_at:
                continue
            samples.append(model.copy())
            acc = None
            if test_data is not None:
                acc = bn_evaluate(model, spec, data, test_data)[0]
                sample_acc.append(acc)
            note = f"snapshot {len(samples)} (cycle {cycle + 1})"
            if i == len(bp) - 1:
                pending = (acc, note)
            else:
                history.records.append(EpochRecord(2, offset + k, epoch + 1, lr, loss,
                                                   correct / seen, acc, note=note))
        acc, note = pending or (None, "")
        history.records.append(EpochRecord(2, offset + k, epoch + 1, lr, float(np.mean(losses)),
                                           correct / seen, acc, note=note))
    history.timing["swa_cycles"] = time.perf_counter() - t_cyc
    averaged = phase3_average(samples, spec, data)
    train_acc, train_loss = evaluate(averaged, spec, data)
    test_acc = evaluate(averaged, spec, test_data)[0] if test_data is not None else None
    history.records.append(EpochRecord(3, offset + k, 0, 0.0, train_loss, train_acc, test_acc,
                                       tuple(sample_acc), test_acc, note="averaged"))
    history.timing["total"] = time.perf_counter() - t_start
    return SwaResult(averaged, samples, history, spec, sample_acc, lead_model, plan.variant)


# --- comparison ----------------------------------------------------------------

REPORT_COLUMNS = ("method", "n_models", "test_acc_before_averaging",
                  "test_acc_after_averaging")
TIMING_COLUMNS = ("method", "wall_clock_s")


@dataclass(frozen=True)
class MethodSummary:
    method: str
    n_models: int
    acc_before: float | None
    acc_after: float | None
    wall_clock: float | None
    spec: dict
    data: str

    @classmethod
    def from_result(cls, result: SwaResult | SwapResult, train: Dataset) -> "MethodSummary":
        s = result.summary()
        return cls(s["method"], s["n_models"], s["test_acc_before_averaging"],
                   s["test_acc_after_averaging"], result.history.timing.get("total"),
                   result.spec.to_dict(), dataset_fingerprint(train))

    @classmethod
    def from_dict(cls, summary: dict, timing: dict | None = None) -> "MethodSummary":
        return cls(summary["method"], int(summary["n_models"]),
                   summary.get("test_acc_before_averaging"),
                   summary.get("test_acc_after_averaging"),
                   (timing or {}).get("total"), summary["spec"], summary["data"])


@dataclass
class ComparisonReport:
    rows: list[MethodSummary]

    def to_csv(self) -> str:
        """Accuracy table; a pure function of the two runs' (config, seed)."""
        return self._csv(REPORT_COLUMNS, lambda r: [r.method, r.n_models, _num(r.acc_before),
                                                    _num(r.acc_after)])

    def timing_csv(self) -> str:
        """Wall-clock per method, kept apart because it varies between invocations."""
        return self._csv(TIMING_COLUMNS, lambda r: [r.method, _num(r.wall_clock)])

    def _csv(self, columns, row) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in self.rows:
            w.writerow(row(r))
        return buf.getvalue()

    def to_text(self, timing: bool = True) -> str:
        head = f"{'method':<18} {'models':>6} {'before avg (%)':>15} {'after avg (%)':>14}"
        if timing:
            head += f" {'time (s)':>10}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            line = (f"{r.method:<18} {r.n_models:>6} {_pct(r.acc_before):>15} "
                    f"{_pct(r.acc_after):>14}")
            if timing:
                line += f" {_secs(r.wall_clock):>10}"
            lines.append(line)
        return "\n".join(lines) + "\n"


def _num(v) -> str:
    return "" if v is None else repr(float(v))


def _pct(v) -> str:
    return "n/a" if v is None else f"{100 * v:.2f}"


def _secs(v) -> str:
    return "n/a" if v is None else f"{v:.3f}"


def swa_vs_swap_report(swa: MethodSummary | SwaResult, swap: MethodSummary | SwapResult,
                       train: Dataset | None = None) -> ComparisonReport:
    """Table of accuracies before/after averaging and wall-clock per method.

    Both runs must share the model spec and dataset and average the same
    number of models.
    """
    rows = []
    for r in (swa, swap):
        if not isinstance(r, MethodSummary):
            if train is None:
                raise ContractError("pass the training set when comparing raw results")
            r = MethodSummary.from_result(r, train)
        rows.append(r)
    a, b = rows
    if a.spec != b.spec:
        raise ContractError("runs use different model specs")
    if a.data != b.data:
        raise ContractError("runs use different training data")
    if a.n_models != b.n_models:
        raise ContractError(f"sample counts differ: {a.method} averaged {a.n_models} models, "
                            f"{b.method} averaged {b.n_models}")
    return ComparisonReport(rows)
