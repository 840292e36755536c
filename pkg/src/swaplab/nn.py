"""Feedforward network engine: dense layers, batch normalization, relu/tanh,
softmax cross-entropy, hand-derived gradients.

Parameters live in a :class:`WeightVector`, an ordered dict of named float64
arrays plus the BN running statistics. Naming, for dense layer ``l``:

* ``dense{l}.W``  weight matrix, shape ``(fan_in, fan_out)``
* ``dense{l}.b``  bias, only when layer ``l`` is *not* followed by BN
* ``bn{l}.gamma``, ``bn{l}.beta``  BN scale and shift
* ``bn{l}.mean``, ``bn{l}.var``  running statistics (not trainable)

A bias feeding a BN layer is cancelled by the mean subtraction, so it is not
allocated. The stored running variance already includes ``BN_EPS``; eval-mode
normalization divides by ``sqrt(running_var)`` directly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .errors import ContractError, DegenerateBatchError, NumericError

BN_EPS = 1e-5
ACTIVATIONS = ("relu", "tanh")

Gradient = dict  # name -> ndarray, same keys/shapes as WeightVector.params


@dataclass(frozen=True)
class ModelSpec:
    layer_sizes: tuple[int, ...]
    use_batchnorm: tuple[bool, ...] | bool = False
    activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2:
            raise ContractError("layer_sizes needs at least input and output sizes")
        if any(s < 1 for s in sizes):
            raise ContractError(f"layer sizes must be >= 1, got {sizes}")
        if sizes[-1] < 2:
            raise ContractError("output layer needs at least 2 classes")
        n_hidden = len(sizes) - 2
        bn = self.use_batchnorm
        if isinstance(bn, (bool, np.bool_)):
            bn = (bool(bn),) * n_hidden
        bn = tuple(bool(b) for b in bn)
        if len(bn) != n_hidden:
            raise ContractError(
                f"use_batchnorm has {len(bn)} entries for {n_hidden} hidden layers")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"activation must be one of {ACTIVATIONS}")
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "use_batchnorm", bn)

    @property
    def n_dense(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def has_bn(self) -> bool:
        return any(self.use_batchnorm)

    def bn_after(self, layer: int) -> bool:
        return layer < self.n_dense - 1 and self.use_batchnorm[layer]

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        for l in range(self.n_dense):
            fan_in, fan_out = self.layer_sizes[l], self.layer_sizes[l + 1]
            shapes[f"dense{l}.W"] = (fan_in, fan_out)
            if self.bn_after(l):
                shapes[f"bn{l}.gamma"] = (fan_out,)
                shapes[f"bn{l}.beta"] = (fan_out,)
            else:
                shapes[f"dense{l}.b"] = (fan_out,)
        return shapes

    def bn_stat_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        for l in range(self.n_dense):
            if self.bn_after(l):
                shapes[f"bn{l}.mean"] = (self.layer_sizes[l + 1],)
                shapes[f"bn{l}.var"] = (self.layer_sizes[l + 1],)
        return shapes

    def to_dict(self) -> dict[str, Any]:
        return {
            "layer_sizes": list(self.layer_sizes),
            "use_batchnorm": list(self.use_batchnorm),
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ModelSpec":
        return cls(tuple(d["layer_sizes"]), tuple(d["use_batchnorm"]), d["activation"])


def _as_f64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


@dataclass
class WeightVector:
    """Model state. Vector arithmetic acts on the trainable ``params`` only;
    ``bn_stats`` ride along from the left operand unchanged."""

    params: dict[str, np.ndarray]
    bn_stats: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.params = {k: _as_f64(v) for k, v in self.params.items()}
        self.bn_stats = {k: _as_f64(v) for k, v in self.bn_stats.items()}

    @property
    def names(self) -> list[str]:
        return list(self.params)

    @property
    def size(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "WeightVector":
        return WeightVector({k: v.copy() for k, v in self.params.items()},
                            {k: v.copy() for k, v in self.bn_stats.items()})

    def flat(self) -> np.ndarray:
        if not self.params:
            return np.zeros(0)
        return np.concatenate([p.ravel() for p in self.params.values()])

    def with_flat(self, vec: np.ndarray) -> "WeightVector":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise ContractError(f"flat vector has shape {vec.shape}, expected ({self.size},)")
        out, i = {}, 0
        for k, p in self.params.items():
            out[k] = vec[i:i + p.size].reshape(p.shape).copy()
            i += p.size
        return WeightVector(out, {k: v.copy() for k, v in self.bn_stats.items()})

    def with_bn_stats(self, stats: Mapping[str, np.ndarray]) -> "WeightVector":
        return WeightVector({k: v.copy() for k, v in self.params.items()},
                            {k: np.array(v, dtype=np.float64) for k, v in stats.items()})

    def same_layout(self, other: "WeightVector") -> bool:
        return (list(self.params) == list(other.params)
                and all(self.params[k].shape == other.params[k].shape for k in self.params))

    def _check(self, other: "WeightVector"):
        if not self.same_layout(other):
            raise ContractError("weight vectors have different layouts")

    def _map(self, fn) -> "WeightVector":
        return WeightVector({k: fn(v) for k, v in self.params.items()},
                            {k: v.copy() for k, v in self.bn_stats.items()})

    def __add__(self, other: "WeightVector") -> "WeightVector":
        self._check(other)
        return WeightVector({k: v + other.params[k] for k, v in self.params.items()},
                            {k: v.copy() for k, v in self.bn_stats.items()})

    def __sub__(self, other: "WeightVector") -> "WeightVector":
        self._check(other)
        return WeightVector({k: v - other.params[k] for k, v in self.params.items()},
                            {k: v.copy() for k, v in self.bn_stats.items()})

    def __mul__(self, scalar: float) -> "WeightVector":
        return self._map(lambda v: v * float(scalar))

    __rmul__ = __mul__

    def __truediv__(self, scalar: float) -> "WeightVector":
        return self._map(lambda v: v / float(scalar))

    def __neg__(self) -> "WeightVector":
        return self._map(lambda v: -v)

    def dot(self, other: "WeightVector") -> float:
        self._check(other)
        return float(sum(np.vdot(v, other.params[k]) for k, v in self.params.items()))

    def norm(self) -> float:
        return float(np.linalg.norm(self.flat()))

    def trainable_equal(self, other: "WeightVector") -> bool:
        """Bitwise equality of the trainable parameters."""
        return self.same_layout(other) and all(
            np.array_equal(v, other.params[k]) for k, v in self.params.items())

    def checksum(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        for k, v in self.params.items():
            h.update(k.encode())
            h.update(v.tobytes())
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = _as_f64(self.inputs)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        if x.ndim != 2:
            raise ContractError(f"batch inputs must be 2-D, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise ContractError(f"{y.shape[0] if y.ndim else 0} labels for {x.shape[0]} inputs")
        if x.shape[0] < 1:
            raise ContractError("empty batch")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.inputs.shape[0]


def init_weights(spec: ModelSpec, rng: np.random.Generator) -> WeightVector:
    """Glorot-uniform dense weights, zero biases, unit BN scale."""
    params: dict[str, np.ndarray] = {}
    for name, shape in spec.param_shapes().items():
        if name.endswith(".W"):
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-limit, limit, size=shape)
        elif name.endswith(".gamma"):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    stats = {name: (np.zeros(shape) if name.endswith(".mean") else np.ones(shape))
             for name, shape in spec.bn_stat_shapes().items()}
    return WeightVector(params, stats)


def check_model(model: WeightVector, spec: ModelSpec) -> None:
    shapes = spec.param_shapes()
    if list(model.params) != list(shapes):
        raise ContractError(f"parameter names {list(model.params)} do not match spec {list(shapes)}")
    for name, shape in shapes.items():
        if model.params[name].shape != shape:
            raise ContractError(f"{name} has shape {model.params[name].shape}, spec wants {shape}")
    for name, shape in spec.bn_stat_shapes().items():
        if name not in model.bn_stats or model.bn_stats[name].shape != shape:
            raise ContractError(f"missing or misshapen BN statistic {name}")


def _check_batch(batch: Batch, spec: ModelSpec):
    if batch.inputs.shape[1] != spec.input_dim:
        raise ContractError(
            f"batch has {batch.inputs.shape[1]} features, model expects {spec.input_dim}")
    if batch.labels.min() < 0 or batch.labels.max() >= spec.n_classes:
        raise ContractError(f"labels must lie in [0, {spec.n_classes})")


def _finite(a: np.ndarray, layer: str) -> np.ndarray:
    if not np.isfinite(a).all():
        raise NumericError(layer)
    return a


def _forward_inputs(model: WeightVector, spec: ModelSpec, x: np.ndarray, mode: str):
    if mode not in ("train", "eval"):
        raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")
    p = model.params
    cache = []
    a = x
    n = x.shape[0]
    last = spec.n_dense - 1
    for l in range(spec.n_dense):
        rec: dict[str, np.ndarray] = {"a_in": a}
        z = a @ p[f"dense{l}.W"]
        if l == last or not spec.bn_after(l):
            z = z + p[f"dense{l}.b"]
        _finite(z, f"dense{l}")
        if l == last:
            cache.append(rec)
            return z, cache
        if spec.bn_after(l):
            if mode == "train":
                if n < 2:
                    raise DegenerateBatchError(
                        f"train-mode batch norm needs >= 2 samples, got {n}")
                mu = z.mean(axis=0)
                inv_std = 1.0 / np.sqrt(z.var(axis=0) + BN_EPS)
            else:
                mu = model.bn_stats[f"bn{l}.mean"]
                inv_std = 1.0 / np.sqrt(model.bn_stats[f"bn{l}.var"])
            xhat = (z - mu) * inv_std
            h = _finite(p[f"bn{l}.gamma"] * xhat + p[f"bn{l}.beta"], f"bn{l}")
            rec["xhat"] = xhat
            rec["inv_std"] = inv_std
        else:
            h = z
        if spec.activation == "relu":
            y = np.maximum(h, 0.0)
        else:
            y = np.tanh(h)
        rec["y"] = y
        cache.append(rec)
        a = y
    raise AssertionError("unreachable")


def forward(model: WeightVector, spec: ModelSpec, batch: Batch, mode: str = "train"):
    """Return ``(logits, cache)``. Eval mode uses the running BN statistics;
    the model is never mutated."""
    _check_batch(batch, spec)
    check_model(model, spec)
    return _forward_inputs(model, spec, batch.inputs, mode)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    sums = expz.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(sums)
    loss = -log_probs[np.arange(n), labels].mean()
    dlogits = expz / sums
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return float(loss), dlogits


def _backward(model: WeightVector, spec: ModelSpec, cache, dlogits) -> Gradient:
    p = model.params
    grads: dict[str, np.ndarray] = {}
    dz = dlogits
    for l in range(spec.n_dense - 1, -1, -1):
        rec = cache[l]
        if l < spec.n_dense - 1:
            dy = dz
            if spec.activation == "relu":
                dh = dy * (rec["y"] > 0)
            else:
                dh = dy * (1.0 - rec["y"] ** 2)
            if spec.bn_after(l):
                xhat = rec["xhat"]
                grads[f"bn{l}.gamma"] = _finite((dh * xhat).sum(axis=0), f"bn{l}")
                grads[f"bn{l}.beta"] = dh.sum(axis=0)
                dxhat = dh * p[f"bn{l}.gamma"]
                m = dxhat.shape[0]
                dz = (rec["inv_std"] / m) * (
                    m * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
            else:
                dz = dh
        grads[f"dense{l}.W"] = _finite(rec["a_in"].T @ dz, f"dense{l}")
        if not spec.bn_after(l):
            grads[f"dense{l}.b"] = dz.sum(axis=0)
        if l > 0:
            dz = dz @ p[f"dense{l}.W"].T
    return {name: grads[name] for name in p}


def loss_grad_logits(model: WeightVector, spec: ModelSpec, batch: Batch):
    """Train-mode ``(loss, grad, logits)`` in a single forward/backward pass."""
    logits, cache = forward(model, spec, batch, mode="train")
    loss, dlogits = softmax_cross_entropy(logits, batch.labels)
    if not np.isfinite(loss):
        raise NumericError("softmax_cross_entropy")
    return loss, _backward(model, spec, cache, dlogits), logits


def loss_and_grad(model: WeightVector, spec: ModelSpec, batch: Batch):
    """Mean softmax cross-entropy over ``batch`` and its exact gradient."""
    loss, grad, _ = loss_grad_logits(model, spec, batch)
    return loss, grad


def _features(data) -> np.ndarray:
    x = getattr(data, "features", None)
    if x is None:
        x = getattr(data, "inputs", data)
    return _as_f64(x)


def _labels(data) -> np.ndarray:
    return np.asarray(data.labels, dtype=np.int64)


def bn_activation_stats(model: WeightVector, spec: ModelSpec, data) -> dict[str, np.ndarray]:
    """Exact per-feature mean and (epsilon-floored) variance of every BN
    layer's input over one pass of ``data``."""
    x = _features(data)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ContractError("BN recomputation needs a non-empty dataset")
    if x.shape[1] != spec.input_dim:
        raise ContractError(f"data has {x.shape[1]} features, model expects {spec.input_dim}")
    p = model.params
    stats: dict[str, np.ndarray] = {}
    a = x
    for l in range(spec.n_dense - 1):
        z = a @ p[f"dense{l}.W"]
        if spec.bn_after(l):
            mu = z.mean(axis=0)
            var = z.var(axis=0) + BN_EPS
            stats[f"bn{l}.mean"] = mu
            stats[f"bn{l}.var"] = var
            h = p[f"bn{l}.gamma"] * ((z - mu) / np.sqrt(var)) + p[f"bn{l}.beta"]
        else:
            h = z + p[f"dense{l}.b"]
        _finite(h, f"dense{l}")
        a = np.maximum(h, 0.0) if spec.activation == "relu" else np.tanh(h)
    return stats


def recompute_bn_stats(model: WeightVector, spec: ModelSpec, data) -> WeightVector:
    """Replace the running BN statistics with exact full-pass values."""
    check_model(model, spec)
    if not spec.has_bn:
        if len(_features(data)) < 1:
            raise ContractError("BN recomputation needs a non-empty dataset")
        return model.copy()
    return model.with_bn_stats(bn_activation_stats(model, spec, data))


def eval_logits(model: WeightVector, spec: ModelSpec, data, chunk: int = 8192) -> np.ndarray:
    x = _features(data)
    check_model(model, spec)
    if x.shape[0] < 1:
        raise ContractError("cannot evaluate on an empty dataset")
    if x.shape[1] != spec.input_dim:
        raise ContractError(f"data has {x.shape[1]} features, model expects {spec.input_dim}")
    parts = [_forward_inputs(model, spec, x[i:i + chunk], "eval")[0]
             for i in range(0, x.shape[0], chunk)]
    return np.concatenate(parts, axis=0)


def evaluate(model: WeightVector, spec: ModelSpec, data) -> tuple[float, float]:
    """Eval-mode ``(accuracy, mean_loss)``; argmax ties go to the lowest class."""
    logits = eval_logits(model, spec, data)
    labels = _labels(data)
    loss, _ = softmax_cross_entropy(logits, labels)
    acc = float(np.mean(np.argmax(logits, axis=1) == labels))
    return acc, loss
