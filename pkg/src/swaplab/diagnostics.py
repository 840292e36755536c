"""Weight-space diagnostics: loss surfaces on a plane through three models
and the cosine between descent direction and the direction to a reference.

Only trainable parameters enter plane directions and distances. BN running
statistics are recomputed on the training set for every materialized point.

Export formats
--------------
``<stem>.csv`` (surface)
    ``i,j,alpha,beta,train_error,test_error,train_loss,test_loss``; one row
    per grid point in row-major ``(i over alpha, j over beta)`` order.
    Errors are percentages.
``<stem>.json`` (surface manifest)
    ``{"alpha": [...], "beta": [...], "marked": {label: [a, b]},
    "best": {"alpha", "beta", "test_error"}, "csv": name, ...}``. The two axis
    lists plus the CSV are enough to rebuild the contour matrices.
``<stem>.csv`` (cosine trace)
    ``phase,worker,step,cosine``; ``cosine`` is empty where undefined.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .data import Dataset
from .errors import ContractError, DegeneratePlaneError, GridPointError, SwapLabError
from .nn import ModelSpec, WeightVector, check_model, evaluate, recompute_bn_stats
from .runtime import TraceSnapshot

DEFAULT_LABELS = ("LB", "SGD", "SWAP")
PARALLEL_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class PlaneBasis:
    origin: WeightVector
    u: np.ndarray
    v: np.ndarray
    coords: tuple[tuple[float, float], ...]
    labels: tuple[str, ...] = DEFAULT_LABELS

    def point(self, alpha: float, beta: float) -> WeightVector:
        return self.origin.with_flat(self.origin.flat() + alpha * self.u + beta * self.v)

    def project(self, model: WeightVector) -> tuple[float, float]:
        d = model.flat() - self.origin.flat()
        return float(d @ self.u), float(d @ self.v)

    @property
    def marked(self) -> dict[str, tuple[float, float]]:
        return dict(zip(self.labels, self.coords))


def plane_basis(theta1: WeightVector, theta2: WeightVector, theta3: WeightVector,
                labels: Sequence[str] = DEFAULT_LABELS) -> PlaneBasis:
    """Orthonormal ``u, v`` spanning the plane through three models.

    ``u`` points from ``theta1`` to ``theta2``; ``v`` is the Gram-Schmidt
    remainder of ``theta3 - theta1`` (orthogonalized twice).
    """
    if not (theta1.same_layout(theta2) and theta1.same_layout(theta3)):
        raise ContractError("the three models have different layouts")
    if len(labels) != 3:
        raise ContractError("need exactly three labels")
    o = theta1.flat()
    d1 = theta2.flat() - o
    d2 = theta3.flat() - o
    n1, n2 = np.linalg.norm(d1), np.linalg.norm(d2)
    if n1 == 0 or n2 == 0:
        raise DegeneratePlaneError("two of the defining points coincide")
    u = d1 / n1
    w = d2 - (d2 @ u) * u
    w = w - (w @ u) * u
    nw = np.linalg.norm(w)
    if nw <= PARALLEL_TOL * n2:
        raise DegeneratePlaneError("the defining points are collinear")
    v = w / nw
    coords = ((0.0, 0.0), (float(n1), 0.0), (float(d2 @ u), float(d2 @ v)))
    return PlaneBasis(theta1.copy(), u, v, coords, tuple(labels))


@dataclass(frozen=True)
class GridSpec:
    """Axis bounds default to the marked points' bounding box padded by
    ``margin`` of its extent on every side."""

    resolution: tuple[int, int] = (21, 21)
    alpha_range: tuple[float, float] | None = None
    beta_range: tuple[float, float] | None = None
    margin: float = 0.3
    include_marked: bool = True

    def __post_init__(self):
        if min(self.resolution) < 2:
            raise ContractError("grid resolution must be >= 2 per axis")
        for r in (self.alpha_range, self.beta_range):
            if r is not None and not r[0] < r[1]:
                raise ContractError(f"axis range {r} must be increasing")

    def axes(self, marked: Mapping[str, tuple[float, float]]) -> tuple[np.ndarray, np.ndarray]:
        pts = np.array(list(marked.values()), dtype=np.float64).reshape(-1, 2)
        out = []
        for k, (rng, n) in enumerate(zip((self.alpha_range, self.beta_range), self.resolution)):
            if rng is None:
                lo, hi = pts[:, k].min(), pts[:, k].max()
                pad = self.margin * ((hi - lo) or 1.0)
                rng = (lo - pad, hi + pad)
            axis = np.linspace(rng[0], rng[1], n)
            if self.include_marked and len(pts):
                axis = np.unique(np.concatenate([axis, pts[:, k]]))
            out.append(axis)
        return out[0], out[1]


@dataclass(eq=False)
class SurfaceGrid:
    alphas: np.ndarray
    betas: np.ndarray
    train_error: np.ndarray  # [len(alphas), len(betas)], percent
    test_error: np.ndarray
    train_loss: np.ndarray
    test_loss: np.ndarray
    marked: dict[str, tuple[float, float]] = field(default_factory=dict)

    @property
    def best(self) -> tuple[float, float, float]:
        """``(alpha, beta, test_error)`` of the grid point with lowest test error."""
        i, j = np.unravel_index(np.argmin(self.test_error), self.test_error.shape)
        return float(self.alphas[i]), float(self.betas[j]), float(self.test_error[i, j])

    def at(self, alpha: float, beta: float) -> dict[str, float]:
        i = int(np.flatnonzero(self.alphas == alpha)[0])
        j = int(np.flatnonzero(self.betas == beta)[0])
        return {"train_error": float(self.train_error[i, j]),
                "test_error": float(self.test_error[i, j]),
                "train_loss": float(self.train_loss[i, j]),
                "test_loss": float(self.test_loss[i, j])}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["i", "j", "alpha", "beta", "train_error", "test_error",
                    "train_loss", "test_loss"])
        for i, a in enumerate(self.alphas):
            for j, b in enumerate(self.betas):
                w.writerow([i, j, repr(float(a)), repr(float(b)),
                            repr(float(self.train_error[i, j])),
                            repr(float(self.test_error[i, j])),
                            repr(float(self.train_loss[i, j])),
                            repr(float(self.test_loss[i, j]))])
        return buf.getvalue()

    def manifest(self, csv_name: str, extra: Mapping[str, Any] | None = None) -> dict[str, Any]:
        a, b, err = self.best
        marked = {k: [float(x), float(y)] for k, (x, y) in self.marked.items()}
        out = {"csv": csv_name, "alpha": [float(x) for x in self.alphas],
               "beta": [float(x) for x in self.betas], "marked": marked,
               "best": {"alpha": a, "beta": b, "test_error": err},
               "marked_errors": {k: self.at(x, y) for k, (x, y) in self.marked.items()
                                 if x in self.alphas and y in self.betas}}
        if extra:
            out.update(extra)
        return out

    def write(self, out_dir: str | Path, stem: str = "surface",
              extra: Mapping[str, Any] | None = None) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = out / f"{stem}.csv", out / f"{stem}.json"
        csv_path.write_text(self.to_csv())
        json_path.write_text(json.dumps(self.manifest(csv_path.name, extra), indent=2,
                                        sort_keys=True) + "\n")
        return csv_path, json_path


def _eval_point(basis: PlaneBasis, spec: ModelSpec, train: Dataset, test: Dataset,
                alpha: float, beta: float) -> tuple[float, float, float, float]:
    try:
        model = recompute_bn_stats(basis.point(alpha, beta), spec, train)
        tr_acc, tr_loss = evaluate(model, spec, train)
        te_acc, te_loss = evaluate(model, spec, test)
    except SwapLabError as err:
        raise GridPointError(alpha, beta, str(err)) from err
    return 100.0 * (1.0 - tr_acc), 100.0 * (1.0 - te_acc), tr_loss, te_loss


def loss_surface(basis: PlaneBasis, grid: GridSpec, spec: ModelSpec, train: Dataset,
                 test: Dataset, *, extra_marked: Mapping[str, tuple[float, float]] | None = None,
                 threads: int = 1) -> SurfaceGrid:
    """Train/test error and loss at every grid point of the plane.

    ``SurfaceGrid.best`` then gives the lowest-test-error grid point.
    """
    check_model(basis.origin, spec)
    marked = basis.marked
    marked.update(extra_marked or {})
    alphas, betas = grid.axes(marked)
    points = [(a, b) for a in alphas for b in betas]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            vals = list(ex.map(lambda ab: _eval_point(basis, spec, train, test, *ab), points))
    else:
        vals = [_eval_point(basis, spec, train, test, a, b) for a, b in points]
    arr = np.array(vals).reshape(len(alphas), len(betas), 4)
    return SurfaceGrid(alphas, betas, arr[..., 0], arr[..., 1], arr[..., 2], arr[..., 3],
                       {k: (float(x), float(y)) for k, (x, y) in marked.items()})


@dataclass(eq=False)
class CosineTrace:
    phases: np.ndarray
    workers: np.ndarray
    steps: np.ndarray
    cosines: np.ndarray  # NaN where undefined
    reference_checksum: str = ""

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.cosines)

    def quarter_means(self) -> tuple[float, float]:
        """Mean cosine over the first and the last quarter of the step range."""
        ok = self.defined
        if ok.sum() < 2:
            raise ContractError("need at least 2 defined trace points for quarter means")
        lo, hi = self.steps.min(), self.steps.max()
        span = (hi - lo) / 4.0
        first = ok & (self.steps <= lo + span)
        last = ok & (self.steps >= hi - span)
        return float(self.cosines[first].mean()), float(self.cosines[last].mean())

    def select(self, phase: int | None = None, worker: int | None = None) -> "CosineTrace":
        keep = np.ones(len(self), dtype=bool)
        if phase is not None:
            keep &= self.phases == phase
        if worker is not None:
            keep &= self.workers == worker
        return CosineTrace(self.phases[keep], self.workers[keep], self.steps[keep],
                           self.cosines[keep], self.reference_checksum)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["phase", "worker", "step", "cosine"])
        for p, wk, s, c in zip(self.phases, self.workers, self.steps, self.cosines):
            w.writerow([int(p), int(wk), int(s), "" if np.isnan(c) else repr(float(c))])
        return buf.getvalue()


def cosine_trace(snapshots: Iterable[TraceSnapshot], theta_swap: WeightVector | np.ndarray,
                 ) -> CosineTrace:
    """Cosine between ``-g_i`` and ``theta_swap - theta_i`` per snapshot.

    Snapshots with a zero gradient or zero displacement get NaN.
    """
    ref = theta_swap.flat() if isinstance(theta_swap, WeightVector) else np.asarray(theta_swap)
    tag = theta_swap.checksum() if isinstance(theta_swap, WeightVector) else ""
    snaps = sorted(snapshots, key=lambda s: (s.step, s.phase, s.worker))
    cos = np.empty(len(snaps))
    for k, s in enumerate(snaps):
        if s.theta.shape != ref.shape or s.grad.shape != ref.shape:
            raise ContractError("trace snapshot does not match the reference layout")
        d = ref - s.theta
        denom = np.linalg.norm(s.grad) * np.linalg.norm(d)
        cos[k] = np.nan if denom == 0 else float(-(s.grad @ d) / denom)
    return CosineTrace(np.array([s.phase for s in snaps], dtype=np.int64),
                       np.array([s.worker for s in snaps], dtype=np.int64),
                       np.array([s.step for s in snaps], dtype=np.int64), cos, tag)
