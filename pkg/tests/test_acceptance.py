"""Acceptance gate. The terminal summary prints one PASS/FAIL/SKIP line per criterion."""

import dataclasses
import filecmp
import time
from pathlib import Path

import numpy as np
import pytest

import oracles
from helpers import batch_for, fd_check, perturbed
from swaplab.cli import main
from swaplab.config import DiagnosticsConfig, load_config
from swaplab.data import generate_synthetic, train_test_split
from swaplab.diagnostics import GridSpec, cosine_trace, loss_surface, plane_basis
from swaplab.errors import DegeneratePlaneError
from swaplab.experiments import final_model, run_mode
from swaplab.nn import BN_EPS, ModelSpec, evaluate, init_weights, recompute_bn_stats
from swaplab.optim import OptimizerConfig
from swaplab.rng import make_stream
from swaplab.runtime import default_threads, phase3_average, run_phase1
from swaplab.schedules import PhasePlan, ScheduleSpec, lr_at

SEEDS = range(10)
CFG = OptimizerConfig()


def criterion(cid, text):
    return pytest.mark.criterion(cid, text)


# --- 1 ---------------------------------------------------------------------

def random_spec(rng):
    depth = int(rng.integers(1, 4))
    sizes = tuple(int(v) for v in rng.integers(2, 6, size=depth + 1))
    return ModelSpec(sizes, tuple(bool(b) for b in rng.integers(0, 2, size=max(depth - 1, 0))),
                     str(rng.choice(["relu", "tanh"])))


@criterion("1", "analytic gradients match central differences on 20 (spec, seed) pairs")
def test_gradient_exactness():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        spec = random_spec(np.random.default_rng(seed))
        worst = max(worst, fd_check(spec, perturbed(spec, seed), batch_for(spec, 8, seed)))
    assert worst < 1e-5, worst
    assert time.perf_counter() - t0 < 30


# --- 2 ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def toy_task():
    data = generate_synthetic("gaussian_blobs", 1100, 6, 3, 1.0, seed=0)
    return train_test_split(data, 0.3, seed=0)[0]


@criterion("2", "phase-1 with W in {1,2,4,8} matches the serial large-batch oracle for 200 steps")
def test_parallel_serial_equivalence(toy_task):
    t0 = time.perf_counter()
    sched = ScheduleSpec.warmup_decay(0.2, 2, 17)
    plan = dict(tau=1.0, max_epochs_phase1=17, B1=64, B2=8)
    steps = 201  # weights before step k+1 are the result of k steps
    for bn in (False, True):
        spec = ModelSpec((6, 16, 3), bn, "tanh")
        init = init_weights(spec, make_stream(0, "init").generator)
        if not bn:
            ref, _, _ = oracles.serial_large_batch(init, spec, toy_task, 64, sched, CFG, 0,
                                                   steps=steps)
        for W in (1, 2, 4, 8):
            _, hist = run_phase1(init, PhasePlan(W=W, **plan), sched, toy_task, CFG, 0, spec,
                                 trace_every=1, threads=1)
            got = [s.theta for s in hist.trace[:steps]]
            assert len(got) == steps
            if bn:
                # each shard normalizes with its own batch statistics, so the
                # oracle reduces shard gradients in worker order
                ref, _, _ = oracles.serial_large_batch(init, spec, toy_task, 64, sched, CFG, 0,
                                                       steps=steps, shards=W)
                assert all(np.array_equal(a, b) for a, b in zip(got, ref))
            else:
                assert max(np.max(np.abs(a - b)) for a, b in zip(got, ref)) < 1e-9
            _, threaded = run_phase1(init, PhasePlan(W=W, **plan), sched, toy_task, CFG, 0, spec,
                                     trace_every=1, threads=4)
            assert all(np.array_equal(a.theta, b.theta) for a, b in zip(hist.trace, threaded.trace))
    assert time.perf_counter() - t0 < 60


# --- 3 ---------------------------------------------------------------------

@criterion("3", "averaging is the identity on equal models, order-free, and BN stats are exact")
def test_averaging_invariances():
    spec = ModelSpec((5, 8, 8, 3), True)
    data = generate_synthetic("gaussian_blobs", 256, 5, 3, 1.0, seed=4)
    models = [perturbed(spec, s) for s in range(8)]
    assert phase3_average([models[0]] * 8, spec, data).trainable_equal(models[0])
    avg = phase3_average(models, spec, data)
    for perm in (np.random.default_rng(k).permutation(8) for k in range(5)):
        other = phase3_average([models[i] for i in perm], spec, data)
        assert other.trainable_equal(avg)
        assert all(np.array_equal(other.bn_stats[k], avg.bn_stats[k]) for k in avg.bn_stats)
    pre = oracles.pre_bn_activations(avg.params, spec.layer_sizes, spec.use_batchnorm,
                                     spec.activation, data.features)
    for layer, z in pre.items():
        mu, var = oracles.column_mean_var(z)
        assert np.max(np.abs(avg.bn_stats[f"bn{layer}.mean"] - mu)) < 1e-12
        assert np.max(np.abs(avg.bn_stats[f"bn{layer}.var"] - (var + BN_EPS))) < 1e-12


# --- 4, 5, 6: seed suite on the desk task --------------------------------------

@pytest.fixture(scope="session")
def desk_suite():
    base = load_config("desk")
    rows = []
    t0 = time.perf_counter()
    for seed in SEEDS:
        cfg = base.with_overrides(seed=seed)
        out = run_mode(cfg, "swap")
        trace = cosine_trace(out.history.trace, final_model(out))
        rows.append({"swap": out.summary(), "quarters": trace.quarter_means(),
                     "swap_time": out.history.timing["total"]})
    swap_time = time.perf_counter() - t0
    for seed, row in zip(SEEDS, rows):
        cfg = dataclasses.replace(base.with_overrides(seed=seed),
                                  diagnostics=DiagnosticsConfig(0))
        out = run_mode(cfg, "swa")
        row["swa"] = out.summary()
    return rows, swap_time


@criterion("4", "averaged model beats the worker mean in >= 9/10 and the best worker in >= 6/10")
def test_averaging_beats_workers(desk_suite):
    rows, elapsed = desk_suite
    beat_mean = beat_max = 0
    for r in rows:
        s = r["swap"]
        assert s["n_models"] == 8
        beat_mean += s["test_acc_after_averaging"] >= np.mean(s["worker_test_acc"])
        beat_max += s["test_acc_after_averaging"] >= max(s["worker_test_acc"])
    assert beat_mean >= 9 and beat_max >= 6, (beat_mean, beat_max)
    assert elapsed < 600


@criterion("5a", "SWA and SWAP with 8 models each agree within 1 point (10-seed mean)")
def test_swa_swap_accuracy(desk_suite):
    rows, _ = desk_suite
    assert all(r["swa"]["n_models"] == r["swap"]["n_models"] == 8 for r in rows)
    swa = np.mean([r["swa"]["test_acc_after_averaging"] for r in rows])
    swap = np.mean([r["swap"]["test_acc_after_averaging"] for r in rows])
    assert abs(swa - swap) <= 0.01, (swa, swap)


@criterion("5b", "SWAP wall-clock with >= 4 hardware threads is < 0.5x sequential SWA")
@pytest.mark.skipif(default_threads() < 4,
                    reason=f"{default_threads()} hardware thread(s) available, need >= 4")
def test_swa_swap_wall_clock():
    cfg = load_config("desk")
    cfg = dataclasses.replace(cfg, diagnostics=DiagnosticsConfig(0))
    swa = run_mode(cfg, "swa").history.timing["total"]
    swap = run_mode(cfg.with_overrides(threads=min(default_threads(), 8)),
                    "swap").history.timing["total"]
    assert swap < 0.5 * swa, (swap, swa)


@criterion("6", "cosine trace's last-quarter mean is below its first-quarter mean in >= 8/10 seeds")
def test_cosine_trace_declines(desk_suite):
    rows, _ = desk_suite
    wins = sum(last < first for first, last in (r["quarters"] for r in rows))
    assert wins >= 8, [r["quarters"] for r in rows]


# --- 7 ---------------------------------------------------------------------

@criterion("7", "plane basis reconstructs 100 random triples; grid matches direct evaluation")
def test_plane_round_trip():
    spec = ModelSpec((10, 12, 4))
    base = init_weights(spec, make_stream(0, "init").generator)
    rng = np.random.default_rng(7)
    for _ in range(100):
        pts = [base.with_flat(rng.normal(scale=rng.uniform(0.1, 10), size=base.size))
               for _ in range(3)]
        b = plane_basis(*pts)
        for m, (a, c) in zip(pts, b.coords):
            assert np.linalg.norm(b.point(a, c).flat() - m.flat()) < 1e-8 * np.linalg.norm(m.flat())
    p, q = pts[0], pts[1]
    with pytest.raises(DegeneratePlaneError):
        plane_basis(p, q, p + 2.5 * (q - p))

    data = generate_synthetic("gaussian_blobs", 300, 10, 4, 1.0, seed=7)
    train, test = train_test_split(data, 0.3, seed=7)
    for bn in (False, True):
        spec = ModelSpec((10, 12, 4), bn)
        ms = [recompute_bn_stats(perturbed(spec, s), spec, train) for s in range(3)]
        basis = plane_basis(*ms)
        surf = loss_surface(basis, GridSpec(resolution=(3, 3)), spec, train, test)
        for label, m in zip(basis.labels, ms):
            got = surf.at(*basis.marked[label])
            acc, loss = evaluate(m, spec, test)
            tr_acc, tr_loss = evaluate(m, spec, train)
            assert abs(got["test_loss"] - loss) < 1e-8 and abs(got["train_loss"] - tr_loss) < 1e-8
            assert abs(got["test_error"] - 100 * (1 - acc)) < 1e-8


# --- 8 ---------------------------------------------------------------------

TIMING_FILES = {"timing.json", "comparison_timing.csv"}


def _invoke(root: Path):
    for mode in ("swap", "swa"):
        assert main(["train", mode, "--config", "desk", "--single-thread",
                     "--out", str(root / mode)]) == 0
    assert main(["diag", str(root / "swap"), "--out", str(root / "diag")]) == 0
    assert main(["compare", str(root / "swa"), str(root / "swap"),
                 "--out", str(root / "report")]) == 0


@criterion("8", "two identical single-threaded invocations give byte-identical artifacts")
def test_determinism(tmp_path):
    _invoke(tmp_path / "a")
    _invoke(tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*")
                   if p.is_file() and p.name not in TIMING_FILES)
    assert {"swap/history.csv", "swap/checkpoints/final.ckpt",
            "report/comparison.csv"} <= {str(f) for f in files}
    other = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*")
                   if p.is_file() and p.name not in TIMING_FILES)
    assert files == other
    _, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b",
                                           [str(f) for f in files], shallow=False)
    assert not mismatch and not errors, mismatch + errors


# --- 9 ---------------------------------------------------------------------

@criterion("9", "CIFAR10-shape warm-up peaks at 1.2 on epoch 30; cyclic preset matches closed form")
def test_schedule_conformance():
    c10 = load_config("cifar10-shape").schedule("phase1")
    assert lr_at(c10, 30) == 1.2
    assert lr_at(c10, 0) == 0.0 and lr_at(c10, 150) == 0.0
    cyc = load_config("swa-vs-swap-shape").schedule("swa")
    span = cyc.cycle_length * cyc.cycles
    rng = np.random.default_rng(9)
    for p in np.concatenate([rng.uniform(0, 1.1 * span, 1000), [0.0, 10.0, span - 1e-9, span]]):
        want = oracles.sawtooth(float(p), cyc.cycle_length, cyc.lr_peak, cyc.lr_min, cyc.cycles)
        assert abs(lr_at(cyc, float(p)) - want) < 1e-12
