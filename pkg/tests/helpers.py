"""Fixtures shared by the unit and acceptance suites."""

import numpy as np

import oracles
from swaplab.nn import Batch, WeightVector, forward, init_weights, loss_and_grad


def perturbed(spec, seed, scale=0.3):
    """Initial weights plus noise, so BN scales and biases are not at their defaults."""
    rng = np.random.default_rng(seed)
    m = init_weights(spec, rng)
    return m.with_flat(m.flat() + scale * rng.normal(size=m.size))


def batch_for(spec, n, seed):
    rng = np.random.default_rng(seed + 1000)
    return Batch(rng.normal(size=(n, spec.input_dim)), rng.integers(0, spec.n_classes, size=n))


def fd_check(spec, model, batch, richardson=False):
    """Max relative error of the analytic gradient against numeric differences."""
    _, grad = loss_and_grad(model, spec, batch)

    def f(params):
        logits, _ = forward(WeightVector(params, model.bn_stats), spec, batch)
        return oracles.scalar_loss(logits.tolist(), batch.labels)

    numeric = oracles.richardson_difference if richardson else oracles.finite_difference
    return oracles.relative_error(grad, numeric(f, model.params))
