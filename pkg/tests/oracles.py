"""Reference computations written independently of the package internals.

Everything here uses plain Python loops over floats (or the most direct numpy
expression) so that agreement with the vectorized code is meaningful.
"""

from __future__ import annotations

import math
import struct

import numpy as np

BN_EPS = 1e-5


def _act(name, v):
    return max(v, 0.0) if name == "relu" else math.tanh(v)


def scalar_forward(params, stats, layer_sizes, use_bn, activation, xs, mode="train"):
    """Logits for every row of ``xs`` via scalar arithmetic.

    ``params``/``stats`` are dicts of numpy arrays keyed like the package's
    ``WeightVector`` (``dense{l}.W`` is fan_in x fan_out).
    """
    rows = [[float(v) for v in row] for row in xs]
    n_dense = len(layer_sizes) - 1
    for l in range(n_dense):
        W = params[f"dense{l}.W"]
        fan_in, fan_out = layer_sizes[l], layer_sizes[l + 1]
        z = [[sum(r[i] * float(W[i, j]) for i in range(fan_in)) for j in range(fan_out)]
             for r in rows]
        last = l == n_dense - 1
        if not last and use_bn[l]:
            g, b = params[f"bn{l}.gamma"], params[f"bn{l}.beta"]
            n = len(z)
            for j in range(fan_out):
                if mode == "train":
                    mu = sum(z[k][j] for k in range(n)) / n
                    var = sum((z[k][j] - mu) ** 2 for k in range(n)) / n + BN_EPS
                else:
                    mu = float(stats[f"bn{l}.mean"][j])
                    var = float(stats[f"bn{l}.var"][j])
                for k in range(n):
                    z[k][j] = float(g[j]) * (z[k][j] - mu) / math.sqrt(var) + float(b[j])
        else:
            bias = params[f"dense{l}.b"]
            z = [[v + float(bias[j]) for j, v in enumerate(r)] for r in z]
        rows = z if last else [[_act(activation, v) for v in r] for r in z]
    return rows


def scalar_loss(logits, labels):
    total = 0.0
    for row, y in zip(logits, labels):
        m = max(row)
        lse = m + math.log(sum(math.exp(v - m) for v in row))
        total += lse - row[int(y)]
    return total / len(labels)


def finite_difference(loss_fn, params, eps=1e-4):
    """Central differences of ``loss_fn(params)`` for every coordinate."""
    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            plus = {k: v.copy() for k, v in params.items()}
            minus = {k: v.copy() for k, v in params.items()}
            plus[name][idx] += eps
            minus[name][idx] -= eps
            g[idx] = (loss_fn(plus) - loss_fn(minus)) / (2 * eps)
        grads[name] = g
    return grads


def richardson_difference(loss_fn, params, eps=1e-4):
    """Fourth-order estimate combining central differences at ``eps`` and ``eps / 2``."""
    coarse = finite_difference(loss_fn, params, eps)
    fine = finite_difference(loss_fn, params, eps / 2)
    return {k: (4 * fine[k] - coarse[k]) / 3 for k in coarse}


def relative_error(analytic, numeric, floor=1e-6):
    """Max over coordinates of |a - f| / max(|a|, |f|, floor)."""
    worst = 0.0
    for k in analytic:
        a, f = np.asarray(analytic[k]), np.asarray(numeric[k])
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
        worst = max(worst, float(np.max(np.abs(a - f) / denom)))
    return worst


def per_sample_accuracy(params, stats, layer_sizes, use_bn, activation, xs, ys):
    correct = 0
    for x, y in zip(xs, ys):
        row = scalar_forward(params, stats, layer_sizes, use_bn, activation, [x], "eval")[0]
        best = 0
        for j in range(1, len(row)):
            if row[j] > row[best]:
                best = j
        correct += best == int(y)
    return correct / len(ys)


def momentum_recurrence(theta, grads, lr, mu, nesterov=True):
    """Scalar Nesterov/heavy-ball SGD with no weight decay."""
    v = 0.0
    for g in grads:
        v = mu * v + g
        theta -= lr * (mu * v + g if nesterov else v)
    return theta


def sawtooth(p, cycle_length, peak, low, cycles):
    if p >= cycle_length * cycles:
        return low
    return peak - (peak - low) * ((p / cycle_length) - math.floor(p / cycle_length))


def column_mean_var(z):
    """Per-column mean and population variance by direct summation."""
    z = [[float(v) for v in row] for row in z]
    n, d = len(z), len(z[0])
    mu = [sum(z[k][j] for k in range(n)) / n for j in range(d)]
    var = [sum((z[k][j] - mu[j]) ** 2 for k in range(n)) / n for j in range(d)]
    return np.array(mu), np.array(var)


def pre_bn_activations(params, layer_sizes, use_bn, activation, x):
    """Inputs of every BN layer over the whole of ``x`` (numpy, eval path)."""
    out = {}
    a = np.asarray(x, dtype=np.float64)
    for l in range(len(layer_sizes) - 2):
        z = a @ params[f"dense{l}.W"]
        if use_bn[l]:
            out[l] = z
            mu, var = column_mean_var(z)
            h = params[f"bn{l}.gamma"] * (z - mu) / np.sqrt(var + BN_EPS) + params[f"bn{l}.beta"]
        else:
            h = z + params[f"dense{l}.b"]
        a = np.maximum(h, 0) if activation == "relu" else np.tanh(h)
    return out


def idx_header(raw: bytes):
    """(dtype code, dims) from an uncompressed IDX file."""
    zero1, zero2, code, ndim = raw[0], raw[1], raw[2], raw[3]
    assert zero1 == 0 and zero2 == 0
    dims = tuple(struct.unpack(">I", raw[4 + 4 * i:8 + 4 * i])[0] for i in range(ndim))
    return code, dims


def serial_large_batch(init, spec, data, batch_size, schedule, cfg, seed, *, steps=None,
                       tau=None, max_epochs=10**9, shards=None):
    """Single-replica large-batch SGD reproducing phase 1's sample order.

    The gradient of each super-batch is computed in one pass over the whole
    batch (``shards=None``), or as the in-order mean of ``shards`` contiguous
    shard gradients. Returns ``(thetas_before_each_step, final_model, T)``.
    """
    from swaplab.nn import Batch, loss_grad_logits
    from swaplab.optim import OptimizerState, sgd_update
    from swaplab.rng import make_stream
    from swaplab.schedules import lr_at

    gen = make_stream(seed, "phase1").generator
    n = len(data)
    per_epoch = n // batch_size
    model, state = init.copy(), OptimizerState.zeros_like(init)
    thetas, t = [], 0
    for _ in range(max_epochs):
        perm = gen.permutation(n)
        correct = seen = 0
        for i in range(per_epoch):
            if steps is not None and t == steps:
                return thetas, model, t
            idx = perm[i * batch_size:(i + 1) * batch_size]
            parts = [idx] if shards is None else np.split(idx, shards)
            grads = []
            for part in parts:
                _, g, logits = loss_grad_logits(model, spec, Batch(data.features[part],
                                                                   data.labels[part]))
                grads.append(g)
                correct += int(np.sum(np.argmax(logits, axis=1) == data.labels[part]))
                seen += len(part)
            total = {k: v.copy() for k, v in grads[0].items()}
            for g in grads[1:]:
                for k in total:
                    total[k] += g[k]
            g = {k: v / len(grads) for k, v in total.items()}
            thetas.append(model.flat())
            model, state = sgd_update(model, state, g, lr_at(schedule, t / per_epoch), cfg)
            t += 1
        if tau is not None and correct / seen >= tau:
            break
    return thetas, model, t
