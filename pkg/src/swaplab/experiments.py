"""Config-driven experiment runners and their on-disk artifacts.

A run directory holds::

    config.json        parsed config echo (feeds back into ``load_config``)
    summary.json       final accuracies; no wall-clock numbers
    timing.json        monotonic elapsed seconds per phase
    history.csv        one row per epoch record (``runtime.HISTORY_COLUMNS``)
    steps.csv          one row per optimizer step (``runtime.STEP_COLUMNS``)
    history.json       nested records plus the config echo
    checkpoints/*.ckpt phase boundaries, every averaged model, the final model
    trace.bundle       (weights, gradient) snapshots, when tracing is on
    cosine_trace.csv   cosine to the final model per snapshot, when tracing is on

Everything except ``timing.json`` is a function of (config, seed) only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .checkpoint import read_bundle, save_checkpoint, write_bundle
from .config import RunConfig, load_datasets
from .data import Dataset
from .diagnostics import CosineTrace, cosine_trace
from .errors import ParseError
from .nn import ModelSpec, WeightVector, evaluate, init_weights
from .rng import make_stream
from .runtime import RunHistory, SwapResult, TraceSnapshot, run_sgd, swap
from .swa import SwaResult, swa_run


@dataclass
class SgdResult:
    model: WeightVector
    history: RunHistory
    spec: ModelSpec
    method: str
    test_acc: float | None
    train_acc: float

    def summary(self) -> dict[str, Any]:
        return {"method": self.method, "n_models": 1, "epochs": len(self.history.records),
                "test_acc": self.test_acc, "train_acc": self.train_acc}


@dataclass
class Outcome:
    mode: str
    config: RunConfig
    spec: ModelSpec
    train: Dataset
    test: Dataset
    result: SwapResult | SwaResult | SgdResult

    @property
    def history(self) -> RunHistory:
        return self.result.history

    def summary(self) -> dict[str, Any]:
        out = dict(self.result.summary())
        out.update(mode=self.mode, seed=self.config.seed, spec=self.spec.to_dict(),
                   data=self.train.fingerprint(), n_train=len(self.train), n_test=len(self.test))
        return out


def initial_model(cfg: RunConfig, spec: ModelSpec) -> WeightVector:
    return init_weights(spec, make_stream(cfg.seed, "init").generator)


def swap_train(cfg: RunConfig, *, base: Path | None = None) -> Outcome:
    """The three SWAP phases as described by ``cfg``."""
    return run_mode(cfg, "swap", base=base)


def run_mode(cfg: RunConfig, mode: str, *, base: Path | None = None) -> Outcome:
    cfg.validate_mode(mode)
    train, test = load_datasets(cfg, base)
    spec = cfg.model_spec(train.dim, train.class_count)
    init = initial_model(cfg, spec)
    trace = cfg.diagnostics.trace_every
    if mode == "swap":
        result = swap(init, spec, cfg.phase_plan, cfg.schedule("phase1"), cfg.schedule("phase2"),
                      train, cfg.optimizer, cfg.seed, test=test, threads=cfg.threads,
                      trace_every=trace)
    elif mode == "swa":
        lead = (cfg.phase_plan, cfg.schedule("phase1")) if cfg.swa.lead_in else None
        if cfg.swa_plan().variant == "small_batch_swa":
            lead = None
        result = swa_run(init, cfg.swa_plan(), cfg.schedule("swa"), train, cfg.optimizer,
                         cfg.seed, spec, test_data=test, lead_in=lead, threads=cfg.threads,
                         trace_every=trace)
    else:
        sec = getattr(cfg, mode)
        model, history = run_sgd(init, spec, train, sec.batch_size, sec.epochs,
                                 cfg.schedule(mode), cfg.optimizer, cfg.seed,
                                 workers=sec.workers, test_data=test, threads=cfg.threads,
                                 trace_every=trace)
        history.timing["total"] = sum(v for k, v in history.timing.items())
        result = SgdResult(model, history, spec, mode, evaluate(model, spec, test)[0],
                           evaluate(model, spec, train)[0])
    return Outcome(mode, cfg, spec, train, test, result)


# --- artifacts ---------------------------------------------------------------

def _dump(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def final_model(outcome: Outcome) -> WeightVector:
    r = outcome.result
    if isinstance(r, SwapResult):
        return r.final_model
    if isinstance(r, SwaResult):
        return r.averaged
    return r.model


def write_trace_bundle(path: Path, snaps: list[TraceSnapshot]) -> None:
    tensors, index = [], []
    for k, s in enumerate(snaps):
        tensors.append((f"{k}.theta", "theta", s.theta))
        tensors.append((f"{k}.grad", "grad", s.grad))
        index.append([s.phase, s.worker, s.step])
    write_bundle(path, tensors, {"snapshots": index}, kind="trace")


def read_trace_bundle(path: Path) -> list[TraceSnapshot]:
    header, tensors = read_bundle(path)
    if header.get("kind") != "trace":
        raise ParseError(f"{path}: not a trace bundle")
    arrays = {name: arr for name, _, arr in tensors}
    return [TraceSnapshot(p, w, s, arrays[f"{k}.theta"], arrays[f"{k}.grad"])
            for k, (p, w, s) in enumerate(header["meta"]["snapshots"])]


def write_cosine(out: Path, trace: CosineTrace) -> None:
    (out / "cosine_trace.csv").write_text(trace.to_csv())
    first, last = trace.quarter_means() if trace.defined.sum() >= 2 else (None, None)
    _dump(out / "cosine_trace.json", {"csv": "cosine_trace.csv", "n": len(trace),
                                      "undefined": int((~trace.defined).sum()),
                                      "reference_checksum": trace.reference_checksum,
                                      "first_quarter_mean": first, "last_quarter_mean": last})


def write_run(outcome: Outcome, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    ck = out / "checkpoints"
    ck.mkdir(exist_ok=True)
    echo = outcome.config.to_dict()
    hist = outcome.history
    _dump(out / "config.json", echo)
    _dump(out / "summary.json", outcome.summary())
    _dump(out / "timing.json", hist.timing)
    (out / "history.csv").write_text(hist.records_csv())
    (out / "steps.csv").write_text(hist.steps_csv())
    _dump(out / "history.json", hist.to_json_dict(echo))

    spec, seed, r = outcome.spec, outcome.config.seed, outcome.result
    if isinstance(r, SwapResult):
        plan = outcome.config.phase_plan
        next_streams = [make_stream(seed, "phase2", w).state() for w in range(plan.W)]
        save_checkpoint(ck / "phase1.ckpt", r.phase1_model, spec, rng_streams=next_streams,
                        meta={"phase": 1, "T": hist.T})
        for w, m in enumerate(r.pre_average_models):
            save_checkpoint(ck / f"worker_{w}.ckpt", m, spec, meta={"phase": 2, "worker": w})
    elif isinstance(r, SwaResult):
        if r.lead_model is not None:
            save_checkpoint(ck / "lead_in.ckpt", r.lead_model, spec,
                            rng_streams=[make_stream(seed, "swa").state()],
                            meta={"phase": 1, "T": hist.T})
        for k, m in enumerate(r.samples):
            save_checkpoint(ck / f"sample_{k}.ckpt", m, spec, meta={"sample": k})
    save_checkpoint(ck / "final.ckpt", final_model(outcome), spec, meta={"mode": outcome.mode})

    if hist.trace:
        write_trace_bundle(out / "trace.bundle", hist.trace)
        write_cosine(out, cosine_trace(hist.trace, final_model(outcome)))
    return out
