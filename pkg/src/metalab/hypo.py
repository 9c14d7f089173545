"""Hypotheses h = g o f built from a finite family of coordinate-selection
representations f and grid-quantized affine heads g, with a clipped squared
loss bounded by M.

All infima over heads are exact minima over the finite enumeration. Ties go
to the lowest head index.

Sums over a sample run sequentially over the sample's distinct points in
lexicographic order (see ``TaskSample.atoms``). Batched and single-head
evaluations therefore return bit-identical values, which is what lets exact
equality hold between :func:`inner_minimize` and :func:`empirical_risk`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .env import FiniteTask, TaskSample


class FamilyError(ValueError):
    pass


@dataclass(frozen=True)
class Representation:
    """Selects ``coords`` from the input: f(x) = (x[c_0], ..., x[c_{v-1}])."""

    index: int
    coords: tuple[int, ...]
    input_dim: int

    def __post_init__(self) -> None:
        coords = tuple(int(c) for c in self.coords)
        if not coords:
            raise FamilyError("a representation selects at least one coordinate")
        if len(coords) > self.input_dim:
            raise FamilyError("v_dim must not exceed the input dimension")
        if any(not 0 <= c < self.input_dim for c in coords):
            raise FamilyError(f"coordinates {coords} out of range for d = {self.input_dim}")
        object.__setattr__(self, "coords", coords)

    @property
    def v_dim(self) -> int:
        return len(self.coords)

    @property
    def matrix(self) -> np.ndarray:
        """The v_dim x d 0/1 selection matrix."""
        sel = np.zeros((self.v_dim, self.input_dim))
        sel[np.arange(self.v_dim), self.coords] = 1.0
        return sel

    def apply(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        if xs.shape[-1] != self.input_dim:
            raise FamilyError(f"input has dimension {xs.shape[-1]}, expected {self.input_dim}")
        return xs[..., list(self.coords)]


@dataclass(frozen=True)
class Grid:
    """The points lo + k * step for k = 0 .. count - 1."""

    lo: float
    step: float
    count: int

    def __post_init__(self) -> None:
        if int(self.count) < 1:
            raise FamilyError("grid count must be >= 1")
        if self.count > 1 and not self.step > 0:
            raise FamilyError("grid step must be positive")

    @property
    def points(self) -> tuple[float, ...]:
        return tuple(float(self.lo + k * self.step) for k in range(int(self.count)))

    def contains(self, v: float, tol: float = 1e-9) -> bool:
        if self.count == 1:
            return abs(v - self.lo) <= tol
        k = round((v - self.lo) / self.step)
        return 0 <= k < self.count and abs(self.lo + k * self.step - v) <= tol


@dataclass(frozen=True)
class Head:
    """Affine head g(v) = <a, v> + b."""

    index: int
    a: tuple[float, ...]
    b: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))
        object.__setattr__(self, "b", float(self.b))


@dataclass(frozen=True)
class LossFn:
    """Clipped squared error min((y - w)^2, M)."""

    bound: float
    kind: str = "clipped_squared"

    def __post_init__(self) -> None:
        if self.kind != "clipped_squared":
            raise FamilyError(f"unsupported loss kind {self.kind!r}")
        if not self.bound > 0:
            raise FamilyError("loss bound M must be positive")

    def __call__(self, y, w):
        return np.minimum((np.asarray(y, dtype=float) - w) ** 2, self.bound)


@dataclass(frozen=True, eq=False)
class HypothesisFamily:
    """Finite representation set F, finite head set G and a bounded loss."""

    reps: tuple[Representation, ...]
    heads: tuple[Head, ...]
    loss: LossFn
    weight_grid: Grid | None = None
    bias_grid: Grid | None = None

    def __post_init__(self) -> None:
        reps, heads = tuple(self.reps), tuple(self.heads)
        if not reps:
            raise FamilyError("representation enumeration is empty")
        if not heads:
            raise FamilyError("head enumeration is empty")
        if any(f.index != i for i, f in enumerate(reps)) or any(
            g.index != i for i, g in enumerate(heads)
        ):
            raise FamilyError("indices must equal enumeration positions")
        if len({f.coords for f in reps}) != len(reps):
            raise FamilyError("duplicate representations")
        if len({(g.a, g.b) for g in heads}) != len(heads):
            raise FamilyError("duplicate heads")
        v_dims = {f.v_dim for f in reps} | {len(g.a) for g in heads}
        if len(v_dims) != 1:
            raise FamilyError(f"inconsistent representation/head dimensions {sorted(v_dims)}")
        if len({f.input_dim for f in reps}) != 1:
            raise FamilyError("representations disagree on the input dimension")
        for g in heads:
            if self.weight_grid is not None and not all(self.weight_grid.contains(v) for v in g.a):
                raise FamilyError(f"head {g.index} has weights off the declared grid")
            if self.bias_grid is not None and not self.bias_grid.contains(g.b):
                raise FamilyError(f"head {g.index} has a bias off the declared grid")
        object.__setattr__(self, "reps", reps)
        object.__setattr__(self, "heads", heads)
        object.__setattr__(self, "head_weights", np.array([g.a for g in heads], dtype=float))
        object.__setattr__(self, "head_biases", np.array([g.b for g in heads], dtype=float))

    @classmethod
    def build(
        cls, input_dim: int, v_dim: int, weights: Grid, bias: Grid, bound: float
    ) -> HypothesisFamily:
        """All sorted coordinate selections of size ``v_dim`` and every grid head.

        Heads enumerate ``weights ** v_dim x bias`` in ``itertools.product``
        order, so the bias varies fastest.
        """
        reps = tuple(
            Representation(i, c, input_dim)
            for i, c in enumerate(itertools.combinations(range(input_dim), v_dim))
        )
        heads = tuple(
            Head(i, combo[:-1], combo[-1])
            for i, combo in enumerate(
                itertools.product(*([weights.points] * v_dim), bias.points)
            )
        )
        return cls(reps, heads, LossFn(bound), weights, bias)

    @property
    def input_dim(self) -> int:
        return self.reps[0].input_dim

    @property
    def v_dim(self) -> int:
        return self.reps[0].v_dim

    @property
    def bound(self) -> float:
        return self.loss.bound

    def subfamily(self, head_indices: Sequence[int]) -> HypothesisFamily:
        """Same representations with a re-indexed subset of heads."""
        heads = tuple(
            Head(i, self.heads[j].a, self.heads[j].b) for i, j in enumerate(head_indices)
        )
        return HypothesisFamily(self.reps, heads, self.loss, self.weight_grid, self.bias_grid)

    def predictions(self, f: Representation, xs: np.ndarray, heads=None) -> np.ndarray:
        """Predictions of the selected heads (all by default), shape (|heads|, N)."""
        v = f.apply(xs)
        if heads is None:
            a, b = self.head_weights, self.head_biases
        else:
            a, b = self.head_weights[heads], self.head_biases[heads]
        # explicit sum over the (small) v_dim keeps this free of BLAS rounding
        w = np.repeat(b[:, None], v.shape[0], axis=1)
        for k in range(v.shape[1]):
            w += a[:, k : k + 1] * v[None, :, k]
        return w

    def loss_table(self, f: Representation, xs: np.ndarray, ys: np.ndarray, heads=None):
        """Losses l(y_j, g(f(x_j))), shape (|heads|, N)."""
        return self.loss(np.asarray(ys, dtype=float)[None, :], self.predictions(f, xs, heads))


def _weighted_sum(table: np.ndarray, weights: np.ndarray) -> np.ndarray:
    acc = np.zeros(table.shape[0])
    for j in range(table.shape[1]):
        acc = acc + table[:, j] * weights[j]
    return acc


def _sample_risks(family: HypothesisFamily, f: Representation, sample: TaskSample, heads=None):
    xs, ys, counts = sample.atoms
    return _weighted_sum(family.loss_table(f, xs, ys, heads), counts) / sample.m


def predict(f: Representation, g: Head, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (f.input_dim,):
        raise FamilyError(f"input has shape {x.shape}, expected ({f.input_dim},)")
    if len(g.a) != f.v_dim:
        raise FamilyError(f"head has {len(g.a)} weights, representation outputs {f.v_dim}")
    v = f.apply(x)
    w = g.b
    for a_k, v_k in zip(g.a, v):
        w = w + a_k * float(v_k)
    return float(w)


def loss(lossfn: LossFn, y: float, w: float) -> float:
    return float(lossfn(y, w))


def empirical_risk(
    f: Representation, g: Head, lossfn: LossFn, sample: TaskSample
) -> float:
    """Mean loss of g o f over the sample."""
    if len(g.a) != f.v_dim:
        raise FamilyError("head and representation dimensions differ")
    xs, ys, counts = sample.atoms
    v = f.apply(xs)
    w = np.full(len(ys), g.b)
    for k in range(f.v_dim):
        w = w + g.a[k] * v[:, k]
    table = lossfn(ys, w)[None, :]
    return float(_weighted_sum(table, counts)[0] / sample.m)


def true_risk(f: Representation, g: Head, lossfn: LossFn, task: FiniteTask) -> float:
    """Exact risk sum_z D({z}) l(y, g(f(x))) over the task support."""
    v = f.apply(task.xs)
    w = np.full(len(task.ys), g.b)
    for k in range(f.v_dim):
        w = w + g.a[k] * v[:, k]
    table = lossfn(task.ys, w)[None, :]
    return float(_weighted_sum(table, np.asarray(task.probs))[0])


def task_risks(family: HypothesisFamily, f: Representation, task: FiniteTask) -> np.ndarray:
    """True risk of every head under f on ``task``; entry i matches true_risk for head i."""
    return _weighted_sum(family.loss_table(f, task.xs, task.ys), np.asarray(task.probs))


def sample_risks(family: HypothesisFamily, f: Representation, sample: TaskSample) -> np.ndarray:
    """Empirical risk of every head under f; entry i matches empirical_risk for head i."""
    return _sample_risks(family, f, sample)


def inner_minimize(
    f: Representation, family: HypothesisFamily, sample: TaskSample
) -> tuple[int, float]:
    """Best head for the sample under f, lowest index on ties."""
    if not family.heads:
        raise FamilyError("head enumeration is empty")
    risks = _sample_risks(family, f, sample)
    best = int(np.argmin(risks))
    return best, float(risks[best])
