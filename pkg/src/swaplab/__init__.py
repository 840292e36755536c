"""Desk-scale laboratory for parallel stochastic weight averaging."""

from .data import Dataset, epoch_batches, generate_synthetic, load_csv, load_idx
from .diagnostics import GridSpec, cosine_trace, loss_surface, plane_basis
from .nn import Batch, ModelSpec, WeightVector, evaluate, forward, init_weights, loss_and_grad
from .nn import recompute_bn_stats
from .optim import OptimizerConfig, OptimizerState, sgd_update
from .runtime import phase1_step, phase3_average, run_phase1, run_phase2, swap
from .schedules import PhasePlan, ScheduleSpec, lr_at, phase1_exit_check
from .swa import SwaPlan, swa_run, swa_vs_swap_report

__all__ = [
    "Batch", "Dataset", "GridSpec", "ModelSpec", "OptimizerConfig", "OptimizerState",
    "PhasePlan", "ScheduleSpec", "SwaPlan", "WeightVector", "cosine_trace", "epoch_batches",
    "evaluate", "forward", "generate_synthetic", "init_weights", "load_csv", "load_idx",
    "loss_and_grad", "loss_surface", "lr_at", "phase1_exit_check", "phase1_step",
    "phase3_average", "plane_basis", "recompute_bn_stats", "run_phase1", "run_phase2",
    "sgd_update", "swa_run", "swa_vs_swap_report", "swap",
]
