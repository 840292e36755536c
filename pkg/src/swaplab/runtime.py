"""SWAP orchestration: synchronized large-batch training, independent
small-batch refinement, and weight averaging.

Phase 1 simulates W data-parallel replicas. Each step, worker ``w`` takes
the ``w``-th contiguous shard of the current super-batch, computes its shard
gradient, the shard gradients are summed in worker-id order and divided by
W, and every replica applies the same update. Phase 2 runs W independent
workers (optionally in separate processes); phase 3 averages their weights
and recomputes the batch-norm statistics.
"""

from __future__ import annotations

import csv
import io
import logging
import multiprocessing as mp
import os
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .data import Dataset, epoch_batches
from .errors import ContractError, DivergenceError, IntegrityError, NumericError
from .nn import (Batch, ModelSpec, WeightVector, check_model, evaluate, loss_grad_logits,
                 recompute_bn_stats)
from .optim import OptimizerConfig, OptimizerState, sgd_update
from .rng import Stream, make_stream
from .schedules import Phase1Exit, PhasePlan, ScheduleSpec, lr_at, phase1_exit_check

log = logging.getLogger(__name__)


@dataclass
class WorkerState:
    worker_id: int
    stream: Stream | None
    model: WeightVector
    opt_state: OptimizerState


@dataclass
class EpochRecord:
    phase: int
    step: int
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    test_acc: float | None = None
    worker_test_acc: tuple[float, ...] = ()
    avg_test_acc: float | None = None
    note: str = ""


@dataclass
class StepRecord:
    phase: int
    worker: int  # -1: the synchronized phase-1 replica set
    step: int
    epoch_position: float
    lr: float
    loss: float


@dataclass
class TraceSnapshot:
    phase: int
    worker: int
    step: int
    theta: np.ndarray
    grad: np.ndarray


HISTORY_COLUMNS = ("phase", "step", "epoch", "lr", "train_loss", "train_acc", "test_acc",
                   "worker_test_acc", "avg_test_acc", "note")
STEP_COLUMNS = ("phase", "worker", "step", "epoch_position", "lr", "loss")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ";".join(repr(float(x)) for x in v)
    return str(v)


@dataclass
class RunHistory:
    records: list[EpochRecord] = field(default_factory=list)
    steps: list[StepRecord] = field(default_factory=list)
    timing: dict[str, float] = field(default_factory=dict)
    trace: list[TraceSnapshot] = field(default_factory=list)
    T: int | None = None
    exit_reason: str | None = None

    def extend(self, other: "RunHistory") -> "RunHistory":
        self.records.extend(other.records)
        self.steps.extend(other.steps)
        self.timing.update(other.timing)
        self.trace.extend(other.trace)
        if other.T is not None:
            self.T = other.T
        if other.exit_reason is not None:
            self.exit_reason = other.exit_reason
        return self

    def records_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for r in self.records:
            w.writerow([_fmt(getattr(r, c)) for c in HISTORY_COLUMNS])
        return buf.getvalue()

    def steps_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(STEP_COLUMNS)
        for r in self.steps:
            w.writerow([_fmt(getattr(r, c)) for c in STEP_COLUMNS])
        return buf.getvalue()

    def to_json_dict(self, config_echo: dict | None = None) -> dict[str, Any]:
        """Nested history without wall-clock numbers (those go to timing.json)."""
        out: dict[str, Any] = {
            "T": self.T,
            "phase1_exit": self.exit_reason,
            "records": [asdict(r) for r in self.records],
            "n_steps": len(self.steps),
        }
        for r in out["records"]:
            r["worker_test_acc"] = list(r["worker_test_acc"])
        if config_echo is not None:
            out["config"] = config_echo
        return out


@dataclass
class SwapResult:
    final_model: WeightVector
    pre_average_models: list[WeightVector]
    history: RunHistory
    phase1_model: WeightVector
    spec: ModelSpec

    def summary(self) -> dict[str, Any]:
        last2 = [r for r in self.history.records if r.phase == 2][-1]
        final = [r for r in self.history.records if r.phase == 3][-1]
        p1 = [r for r in self.history.records if r.phase == 1]
        worker_acc = list(last2.worker_test_acc)
        return {
            "method": "swap",
            "n_models": len(self.pre_average_models),
            "T": self.history.T,
            "phase1_exit": self.history.exit_reason,
            "phase1_test_acc": p1[-1].test_acc if p1 else None,
            "worker_test_acc": worker_acc,
            "test_acc_before_averaging": float(np.mean(worker_acc)) if worker_acc else None,
            "test_acc_after_averaging": final.test_acc,
            "train_acc_after_averaging": final.train_acc,
        }


# --- helpers ----------------------------------------------------------------

def fresh_workers(model: WeightVector, n: int, streams: Sequence[Stream | None] | None = None):
    streams = streams if streams is not None else [None] * n
    return [WorkerState(w, streams[w], model.copy(), OptimizerState.zeros_like(model))
            for w in range(n)]


def average_weights(models: Sequence[WeightVector]) -> WeightVector:
    """Uniform coordinatewise mean of the trainable parameters.

    Per coordinate the values are sorted and averaged as
    ``lo + sum(v - lo) / W`` with ``lo`` the smallest value: independent of
    input order, and exact when every input agrees. BN statistics are copied
    from the first model and must be recomputed by the caller.
    """
    if not models:
        raise ContractError("need at least one model to average")
    ref = models[0]
    for m in models[1:]:
        if not ref.same_layout(m):
            raise ContractError("models to average have different layouts")
    params = {}
    for name in ref.params:
        stack = np.sort(np.stack([m.params[name] for m in models]), axis=0)
        lo = stack[0]
        params[name] = lo + (stack - lo).sum(axis=0) / len(models)
    return WeightVector(params, {k: v.copy() for k, v in ref.bn_stats.items()})


def bn_evaluate(model: WeightVector, spec: ModelSpec, train: Dataset, data: Dataset):
    """Evaluate after recomputing BN statistics on ``train``; ``model`` is untouched."""
    return evaluate(recompute_bn_stats(model, spec, train), spec, data)


def _grad_flat(grad: dict, names: Sequence[str]) -> np.ndarray:
    return np.concatenate([grad[k].ravel() for k in names])


def _mean_grad(grads: Sequence[dict]) -> dict:
    out = {k: v.copy() for k, v in grads[0].items()}
    for g in grads[1:]:
        for k in out:
            out[k] += g[k]
    n = float(len(grads))
    return {k: v / n for k, v in out.items()}


def default_threads() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # pragma: no cover - non-Linux
        return os.cpu_count() or 1


# --- phase 1 -----------------------------------------------------------------

@dataclass
class StepInfo:
    loss: float
    correct: int
    count: int
    grad: dict


def _shard_work(model: WeightVector, spec: ModelSpec, batch: Batch):
    loss, grad, logits = loss_grad_logits(model, spec, batch)
    correct = int(np.sum(np.argmax(logits, axis=1) == batch.labels))
    return loss, grad, correct


def phase1_step(workers: Sequence[WorkerState], data: Dataset,
                shard_indices: Sequence[np.ndarray], lr: float, cfg: OptimizerConfig,
                spec: ModelSpec, executor: ThreadPoolExecutor | None = None):
    """One synchronized step. Returns ``(new_workers, StepInfo)``.

    ``shard_indices[w]`` are worker ``w``'s sample indices for this step.
    """
    if len(shard_indices) != len(workers):
        raise ContractError("need one shard per worker")
    ref = workers[0].model.checksum()
    for ws in workers[1:]:
        if ws.model.checksum() != ref:
            raise IntegrityError(f"replica {ws.worker_id} diverged from replica 0")
    batches = [data.batch(idx) for idx in shard_indices]
    if executor is not None and len(workers) > 1:
        results = list(executor.map(lambda wb: _shard_work(wb[0].model, spec, wb[1]),
                                    zip(workers, batches)))
    else:
        results = [_shard_work(ws.model, spec, b) for ws, b in zip(workers, batches)]
    # fixed worker-id order, independent of completion order
    g = _mean_grad([r[1] for r in results])
    new = []
    for ws in workers:
        model, state = sgd_update(ws.model, ws.opt_state, g, lr, cfg)
        new.append(WorkerState(ws.worker_id, ws.stream, model, state))
    loss = float(np.mean([r[0] for r in results]))
    correct = sum(r[2] for r in results)
    return new, StepInfo(loss, correct, sum(len(b) for b in batches), g)


def _synchronous_sgd(init: WeightVector, spec: ModelSpec, train: Dataset, batch_size: int,
                     n_workers: int, schedule: ScheduleSpec, cfg: OptimizerConfig,
                     stream: Stream, decide: Callable[[float, int], str | None],
                     phase: int, test: Dataset | None, threads: int, trace_every: int,
                     max_epochs: int):
    check_model(init, spec)
    if batch_size > len(train):
        raise ContractError(f"batch size {batch_size} exceeds dataset size {len(train)}")
    if spec.has_bn and batch_size // n_workers < 2:
        raise ContractError("batch norm needs at least 2 samples per worker shard")
    history = RunHistory()
    workers = fresh_workers(init, n_workers)
    steps_per_epoch = len(train) // batch_size
    t = 0
    t0 = time.perf_counter()
    executor = ThreadPoolExecutor(max_workers=min(threads, n_workers)) if threads > 1 else None
    try:
        reason = None
        epoch = 0
        while epoch < max_epochs:
            plan = epoch_batches(train, batch_size, stream.generator, shards=n_workers)
            losses, correct, seen = [], 0, 0
            lr = 0.0
            for i in range(len(plan)):
                pos = t / steps_per_epoch
                lr = lr_at(schedule, pos)
                shards = [plan.shard(i, w) for w in range(n_workers)]
                tracing = trace_every and t % trace_every == 0
                theta_before = workers[0].model.flat() if tracing else None
                try:
                    workers, info = phase1_step(workers, train, shards, lr, cfg, spec, executor)
                except NumericError as err:
                    raise DivergenceError(phase, t, detail=str(err)) from err
                if not np.isfinite(info.loss):
                    raise DivergenceError(phase, t, detail="non-finite loss")
                if tracing:
                    history.trace.append(TraceSnapshot(phase, -1, t, theta_before,
                                                       _grad_flat(info.grad, init.names)))
                history.steps.append(StepRecord(phase, -1, t, pos, lr, info.loss))
                losses.append(info.loss)
                correct += info.correct
                seen += info.count
                t += 1
            epoch += 1
            train_acc = correct / seen
            test_acc = bn_evaluate(workers[0].model, spec, train, test)[0] if test is not None else None
            reason = decide(train_acc, epoch)
            history.records.append(EpochRecord(phase, t, epoch, lr, float(np.mean(losses)),
                                               train_acc, test_acc, note=reason or ""))
            if reason is not None:
                break
        history.exit_reason = reason or Phase1Exit.EXIT_MAX_EPOCHS.value
    finally:
        if executor is not None:
            executor.shutdown(wait=True)
    history.T = t
    history.timing[f"phase{phase}"] = time.perf_counter() - t0
    final = recompute_bn_stats(workers[0].model, spec, train)
    return final, history


def run_phase1(init: WeightVector, plan: PhasePlan, schedule: ScheduleSpec, data: Dataset,
               cfg: OptimizerConfig, seed: int, spec: ModelSpec, *,
               test_data: Dataset | None = None, threads: int = 1, trace_every: int = 0):
    """Synchronized large-batch SGD until the epoch-level training accuracy
    reaches ``plan.tau`` or ``plan.max_epochs_phase1`` epochs have run.

    Returns ``(model, history)``; ``history.T`` is the number of
    synchronized updates and the model carries freshly recomputed BN stats.
    """
    stream = make_stream(seed, "phase1")

    def decide(acc, epoch):
        verdict = phase1_exit_check(acc, plan, epoch)
        return None if verdict is Phase1Exit.CONTINUE else verdict.value

    if plan.max_epochs_phase1 == 0:
        history = RunHistory(T=0, exit_reason=Phase1Exit.EXIT_MAX_EPOCHS.value,
                             timing={"phase1": 0.0})
        return recompute_bn_stats(init, spec, data), history
    return _synchronous_sgd(init, spec, data, plan.B1, plan.W, schedule, cfg, stream, decide,
                            1, test_data, threads, trace_every, plan.max_epochs_phase1)


def run_sgd(init: WeightVector, spec: ModelSpec, data: Dataset, batch_size: int, epochs: int,
            schedule: ScheduleSpec, cfg: OptimizerConfig, seed: int, *, workers: int = 1,
            test_data: Dataset | None = None, threads: int = 1, trace_every: int = 0):
    """Plain (optionally data-parallel) SGD for a fixed number of epochs."""
    if epochs < 1:
        raise ContractError("epochs must be >= 1")
    if workers < 1 or batch_size % workers:
        raise ContractError(f"batch size {batch_size} not divisible by {workers} workers")
    stream = make_stream(seed, "sgd")
    return _synchronous_sgd(init, spec, data, batch_size, workers, schedule, cfg, stream,
                            lambda acc, epoch: None, 1, test_data, threads, trace_every, epochs)


# --- phase 2 -----------------------------------------------------------------

@dataclass
class Phase2Task:
    worker_id: int
    stream_id: int
    start: WeightVector
    spec: ModelSpec
    train: Dataset
    test: Dataset | None
    batch_size: int
    epochs: int
    schedule: ScheduleSpec
    cfg: OptimizerConfig
    seed: int
    step_offset: int
    trace_every: int
    stream_label: str = "phase2"


@dataclass
class Phase2Output:
    worker_id: int
    model: WeightVector
    snapshots: list[WeightVector]
    epoch_stats: list[tuple[float, float, float, float | None]]  # lr, loss, acc, test acc
    steps: list[StepRecord]
    trace: list[TraceSnapshot]
    elapsed: float


def small_batch_epoch_len(n: int, batch_size: int, spec: ModelSpec) -> int:
    full, rest = divmod(n, batch_size)
    return full + (1 if rest >= (2 if spec.has_bn else 1) else 0)


def _phase2_worker(task: Phase2Task) -> Phase2Output:
    t0 = time.perf_counter()
    spec = task.spec
    stream = make_stream(task.seed, task.stream_label, task.stream_id)
    model = task.start.copy()
    state = OptimizerState.zeros_like(model)
    min_batch = 2 if spec.has_bn else 1
    per_epoch = small_batch_epoch_len(len(task.train), task.batch_size, spec)
    names = model.names
    k = 0
    snapshots, stats, steps, trace = [], [], [], []
    for _ in range(task.epochs):
        plan = epoch_batches(task.train, task.batch_size, stream.generator, min_batch=min_batch)
        losses, correct, seen, lr = [], 0, 0, 0.0
        for idx in plan:
            t = task.step_offset + k
            pos = k / per_epoch
            lr = lr_at(task.schedule, pos)
            batch = task.train.batch(idx)
            try:
                loss, grad, logits = loss_grad_logits(model, spec, batch)
            except NumericError as err:
                raise DivergenceError(2, t, worker=task.worker_id, detail=str(err)) from err
            if task.trace_every and k % task.trace_every == 0:
                trace.append(TraceSnapshot(2, task.worker_id, t, model.flat(),
                                           _grad_flat(grad, names)))
            model, state = sgd_update(model, state, grad, lr, task.cfg)
            steps.append(StepRecord(2, task.worker_id, t, pos, lr, loss))
            losses.append(loss)
            correct += int(np.sum(np.argmax(logits, axis=1) == batch.labels))
            seen += len(batch)
            k += 1
        snapshots.append(model.copy())
        test_acc = (bn_evaluate(model, spec, task.train, task.test)[0]
                    if task.test is not None else None)
        stats.append((lr, float(np.mean(losses)), correct / seen, test_acc))
    final = recompute_bn_stats(model, spec, task.train)
    return Phase2Output(task.worker_id, final, snapshots, stats, steps, trace,
                        time.perf_counter() - t0)


def _run_tasks(tasks: Sequence[Phase2Task], threads: int) -> list[Phase2Output]:
    if threads > 1 and len(tasks) > 1:
        ctx = mp.get_context("fork")
        with ProcessPoolExecutor(max_workers=min(threads, len(tasks)), mp_context=ctx) as ex:
            return list(ex.map(_phase2_worker, tasks))
    return [_phase2_worker(t) for t in tasks]


def run_phase2(start: WeightVector, plan: PhasePlan, schedule: ScheduleSpec, data: Dataset,
               cfg: OptimizerConfig, seed: int, spec: ModelSpec, *,
               test_data: Dataset | None = None, threads: int = 1,
               worker_ids: Sequence[int] | None = None, step_offset: int = 0,
               trace_every: int = 0, trace_workers: Sequence[int] = (0,),
               average_curve: bool = True):
    """W independent small-batch runs from ``start``, Q epochs each.

    Worker ``w`` draws its data order from stream ``("phase2", worker_ids[w])``
    and starts with zero momentum. Returns ``(models, history)``; when
    ``test_data`` is given, every epoch record also carries each worker's
    test accuracy and that of the average of the current worker models.
    """
    check_model(start, spec)
    ids = list(range(plan.W)) if worker_ids is None else [int(i) for i in worker_ids]
    if len(ids) != plan.W:
        raise ContractError(f"{len(ids)} worker ids for W={plan.W}")
    if plan.B2 > len(data):
        raise ContractError(f"B2={plan.B2} exceeds dataset size {len(data)}")
    if spec.has_bn and plan.B2 < 2:
        raise ContractError("batch norm needs B2 >= 2")
    tasks = [Phase2Task(w, ids[w], start, spec, data, test_data, plan.B2, plan.epochs_phase2,
                        schedule, cfg, seed, step_offset,
                        trace_every if w in trace_workers else 0)
             for w in range(plan.W)]
    t0 = time.perf_counter()
    outputs = _run_tasks(tasks, threads)
    history = RunHistory()
    history.timing["phase2"] = time.perf_counter() - t0
    history.timing["phase2_worker_max"] = max(o.elapsed for o in outputs)
    per_epoch = small_batch_epoch_len(len(data), plan.B2, spec)
    for e in range(plan.epochs_phase2):
        stats = [o.epoch_stats[e] for o in outputs]
        worker_acc = tuple(s[3] for s in stats) if test_data is not None else ()
        avg_acc = None
        if test_data is not None and average_curve:
            avg = average_weights([o.snapshots[e] for o in outputs])
            avg_acc = bn_evaluate(avg, spec, data, test_data)[0]
        history.records.append(EpochRecord(
            2, step_offset + (e + 1) * per_epoch, e + 1, stats[0][0],
            float(np.mean([s[1] for s in stats])), float(np.mean([s[2] for s in stats])),
            float(np.mean(worker_acc)) if worker_acc else None, worker_acc, avg_acc))
    for o in outputs:
        history.steps.extend(o.steps)
        history.trace.extend(o.trace)
    return [o.model for o in outputs], history


# --- phase 3 / end to end ----------------------------------------------------

def phase3_average(models: Sequence[WeightVector], spec: ModelSpec,
                   train_data: Dataset) -> WeightVector:
    for m in models:
        check_model(m, spec)
    return recompute_bn_stats(average_weights(models), spec, train_data)


def swap(init: WeightVector, spec: ModelSpec, plan: PhasePlan, schedule1: ScheduleSpec,
         schedule2: ScheduleSpec, train: Dataset, cfg: OptimizerConfig, seed: int, *,
         test: Dataset | None = None, threads: int = 1, trace_every: int = 0) -> SwapResult:
    """Phase 1, phase 2 and phase 3 back to back."""
    t_start = time.perf_counter()
    lb_model, history = run_phase1(init, plan, schedule1, train, cfg, seed, spec,
                                   test_data=test, threads=threads, trace_every=trace_every)
    log.info("phase 1 finished after %d steps (%s)", history.T, history.exit_reason)
    models, h2 = run_phase2(lb_model, plan, schedule2, train, cfg, seed, spec,
                            test_data=test, threads=threads, step_offset=history.T or 0,
                            trace_every=trace_every)
    history.extend(h2)
    t3 = time.perf_counter()
    final = phase3_average(models, spec, train)
    train_acc, train_loss = evaluate(final, spec, train)
    test_acc = evaluate(final, spec, test)[0] if test is not None else None
    history.timing["phase3"] = time.perf_counter() - t3
    history.timing["total"] = time.perf_counter() - t_start
    last = h2.records[-1] if h2.records else None
    history.records.append(EpochRecord(
        3, last.step if last else (history.T or 0), 0, 0.0, train_loss, train_acc, test_acc,
        last.worker_test_acc if last else (), test_acc, note="averaged"))
    return SwapResult(final, models, history, lb_model, spec)
