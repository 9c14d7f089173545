"""Finite task environments and the samplers that draw tasks, m-samples and
n-by-m meta-samples from them.

Every task is a finite pmf over labeled examples, so true risks and sample
probabilities can be computed exactly by enumeration.

Randomness always comes from an explicit ``numpy.random.Generator``. Monte
Carlo code derives one generator per trial with :func:`trial_rng`, which
seeds a PCG64 stream with ``(base_seed + trial_index) mod 2**64``. Serial and
parallel runs therefore see the same stream for a given trial.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence, Union

import numpy as np

PROB_TOL = 1e-12
_SEED_MOD = 2**64


class InvalidEnvironment(ValueError):
    """Raised on invalid tasks, environments or samples."""


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) % _SEED_MOD))


def trial_rng(base_seed: int, trial_index: int) -> np.random.Generator:
    """Generator for one Monte Carlo trial: seed = base_seed + trial_index."""
    return make_rng(int(base_seed) + int(trial_index))


def _check_probs(probs: Sequence[float], what: str) -> tuple[float, ...]:
    p = [float(v) for v in probs]
    if not p:
        raise InvalidEnvironment(f"{what}: no probabilities given")
    for v in p:
        if not math.isfinite(v) or v < 0.0 or v > 1.0:
            raise InvalidEnvironment(f"{what}: probability {v!r} outside [0, 1]")
    total = math.fsum(p)
    if abs(total - 1.0) > PROB_TOL:
        raise InvalidEnvironment(f"{what}: probabilities sum to {total!r}, not 1")
    return tuple(v / total for v in p)


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LabeledExample:
    """One data point ``z = (x, y)``."""

    x: tuple[float, ...]
    y: float

    def __post_init__(self) -> None:
        # + 0.0 folds -0.0 into 0.0 so equal points hash equally
        x = tuple(float(v) + 0.0 for v in np.atleast_1d(np.asarray(self.x, dtype=float)))
        y = float(self.y) + 0.0
        if not x:
            raise InvalidEnvironment("example input must have dimension >= 1")
        if not all(math.isfinite(v) for v in x) or not math.isfinite(y):
            raise InvalidEnvironment(f"non-finite example {x!r}, {y!r}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def dim(self) -> int:
        return len(self.x)


@dataclass(frozen=True, eq=False)
class FiniteTask:
    """A task distribution with finite support.

    Repeated support points are allowed; :meth:`prob_of` sums their mass.
    """

    support: tuple[LabeledExample, ...]
    probs: tuple[float, ...]
    xs: np.ndarray = field(init=False, repr=False)
    ys: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        support = tuple(self.support)
        if not support:
            raise InvalidEnvironment("task support is empty")
        if len(support) != len(self.probs):
            raise InvalidEnvironment("task support and probabilities differ in length")
        dims = {z.dim for z in support}
        if len(dims) != 1:
            raise InvalidEnvironment(f"task mixes input dimensions {sorted(dims)}")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", _check_probs(self.probs, "task"))
        object.__setattr__(self, "xs", _freeze(np.array([z.x for z in support], dtype=float)))
        object.__setattr__(self, "ys", _freeze(np.array([z.y for z in support], dtype=float)))

    @classmethod
    def uniform(cls, support: Iterable[LabeledExample]) -> FiniteTask:
        support = tuple(support)
        return cls(support, (1.0 / len(support),) * len(support))

    @property
    def dim(self) -> int:
        return self.support[0].dim

    @cached_property
    def _mass(self) -> dict[LabeledExample, float]:
        mass: dict[LabeledExample, float] = {}
        for z, p in zip(self.support, self.probs):
            mass[z] = mass.get(z, 0.0) + p
        return mass

    def prob_of(self, z: LabeledExample) -> float:
        return self._mass.get(z, 0.0)


@dataclass(frozen=True, eq=False)
class Environment:
    """A finite distribution over finite tasks."""

    tasks: tuple[FiniteTask, ...]
    probs: tuple[float, ...]
    input_dim: int

    def __post_init__(self) -> None:
        tasks = tuple(self.tasks)
        if not tasks:
            raise InvalidEnvironment("environment has no tasks")
        if len(tasks) != len(self.probs):
            raise InvalidEnvironment("tasks and task probabilities differ in length")
        if int(self.input_dim) < 1:
            raise InvalidEnvironment("input_dim must be a positive integer")
        for i, t in enumerate(tasks):
            if t.dim != self.input_dim:
                raise InvalidEnvironment(
                    f"task {i} has input dimension {t.dim}, environment declares {self.input_dim}"
                )
        object.__setattr__(self, "tasks", tasks)
        object.__setattr__(self, "probs", _check_probs(self.probs, "environment"))
        object.__setattr__(self, "input_dim", int(self.input_dim))

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    def support_union(self) -> list[LabeledExample]:
        """Distinct examples over all task supports, in first-seen order."""
        return list(dict.fromkeys(z for t in self.tasks for z in t.support))

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "tasks": [
                {
                    "p": p,
                    "support": [
                        {"x": list(z.x), "y": z.y, "p": q} for z, q in zip(t.support, t.probs)
                    ],
                }
                for t, p in zip(self.tasks, self.probs)
            ],
        }

    @classmethod
    def from_dict(cls, spec: dict) -> Environment:
        tasks, probs = [], []
        for t in spec["tasks"]:
            support = [LabeledExample(tuple(a["x"]), a["y"]) for a in t["support"]]
            tasks.append(FiniteTask(tuple(support), tuple(a["p"] for a in t["support"])))
            probs.append(t["p"])
        dim = spec.get("input_dim", tasks[0].dim if tasks else 0)
        return cls(tuple(tasks), tuple(probs), dim)


@dataclass(frozen=True, eq=False)
class TaskSample:
    """An ordered m-sample from one task, stored as arrays ``xs`` (m, d) and ``ys`` (m,)."""

    xs: np.ndarray
    ys: np.ndarray
    origin_task_index: int | None = None

    def __post_init__(self) -> None:
        xs = np.array(self.xs, dtype=float) + 0.0
        if xs.ndim == 1:
            xs = xs.reshape(-1, 1)
        ys = np.array(self.ys, dtype=float).reshape(-1) + 0.0
        if xs.shape[0] < 1:
            raise InvalidEnvironment("a task sample needs m >= 1 examples")
        if xs.shape[0] != ys.shape[0]:
            raise InvalidEnvironment("inputs and outputs differ in length")
        if not (np.isfinite(xs).all() and np.isfinite(ys).all()):
            raise InvalidEnvironment("non-finite values in sample")
        object.__setattr__(self, "xs", _freeze(xs))
        object.__setattr__(self, "ys", _freeze(ys))

    @classmethod
    def from_examples(
        cls, examples: Sequence[LabeledExample], origin_task_index: int | None = None
    ) -> TaskSample:
        if not examples:
            raise InvalidEnvironment("a task sample needs m >= 1 examples")
        if len({z.dim for z in examples}) != 1:
            raise InvalidEnvironment("examples of a sample must share a dimension")
        return cls(
            np.array([z.x for z in examples], dtype=float),
            np.array([z.y for z in examples], dtype=float),
            origin_task_index,
        )

    @property
    def m(self) -> int:
        return self.ys.shape[0]

    @property
    def dim(self) -> int:
        return self.xs.shape[1]

    @property
    def examples(self) -> list[LabeledExample]:
        return [LabeledExample(tuple(x), y) for x, y in zip(self.xs, self.ys)]

    @cached_property
    def atoms(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Distinct points in lexicographic order with their multiplicities.

        Returns ``(xs, ys, counts)``. Risk computations accumulate over these
        atoms in this fixed order, which keeps results bit-identical across
        scalar and batched code paths.
        """
        rows = np.column_stack([self.xs, self.ys])
        # lexsort treats its last key as primary, hence the reversed columns
        rows = rows[np.lexsort(rows.T[::-1])]
        first = np.ones(len(rows), dtype=bool)
        first[1:] = (rows[1:] != rows[:-1]).any(axis=1)
        starts = np.flatnonzero(first)
        counts = np.diff(np.append(starts, len(rows))).astype(float)
        uniq = rows[starts]
        return uniq[:, :-1], uniq[:, -1], counts

    def split(self, holdout: float) -> tuple[TaskSample, TaskSample]:
        """Leading train part and trailing holdout part; each keeps >= 1 example."""
        k = int(round(holdout * self.m))
        if k < 1 or k >= self.m:
            raise InvalidEnvironment(
                f"holdout fraction {holdout} leaves an empty part for m = {self.m}"
            )
        cut = self.m - k
        o = self.origin_task_index
        return (
            TaskSample(self.xs[:cut], self.ys[:cut], o),
            TaskSample(self.xs[cut:], self.ys[cut:], o),
        )


@dataclass(frozen=True)
class FixedTasks:
    """Row i of the meta-sample comes from task ``indices[i]``."""

    indices: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))


@dataclass(frozen=True)
class EnvironmentDrawn:
    """Each row's task is drawn independently from the environment."""


SamplingMode = Union[FixedTasks, EnvironmentDrawn]


@dataclass(frozen=True, eq=False)
class MetaSample:
    rows: tuple[TaskSample, ...]
    mode: SamplingMode

    def __post_init__(self) -> None:
        rows = tuple(self.rows)
        if not rows:
            raise InvalidEnvironment("a meta-sample needs n >= 1 rows")
        if len({r.m for r in rows}) != 1:
            raise InvalidEnvironment("meta-sample rows must all have the same length m")
        if len({r.dim for r in rows}) != 1:
            raise InvalidEnvironment("meta-sample rows must share an input dimension")
        if isinstance(self.mode, FixedTasks) and len(self.mode.indices) != len(rows):
            raise InvalidEnvironment("FixedTasks mode needs exactly one task index per row")
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return len(self.rows)

    @property
    def m(self) -> int:
        return self.rows[0].m


def sample_task(env: Environment, rng: np.random.Generator) -> int:
    return int(rng.choice(env.num_tasks, p=env.probs))


def sample_m(
    task: FiniteTask, m: int, rng: np.random.Generator, origin_task_index: int | None = None
) -> TaskSample:
    if int(m) < 1:
        raise InvalidEnvironment(f"m must be >= 1, got {m}")
    idx = rng.choice(len(task.support), size=int(m), p=task.probs)
    return TaskSample(task.xs[idx], task.ys[idx], origin_task_index)


def sample_meta(
    env: Environment, n: int, m: int, mode: SamplingMode, rng: np.random.Generator
) -> MetaSample:
    if int(n) < 1 or int(m) < 1:
        raise InvalidEnvironment(f"need n >= 1 and m >= 1, got n={n}, m={m}")
    if isinstance(mode, FixedTasks):
        if len(mode.indices) != n:
            raise InvalidEnvironment(f"FixedTasks carries {len(mode.indices)} indices for n = {n}")
        for i in mode.indices:
            if not 0 <= i < env.num_tasks:
                raise InvalidEnvironment(f"task index {i} out of range for {env.num_tasks} tasks")
        indices = mode.indices
        rows = tuple(sample_m(env.tasks[i], m, rng, i) for i in indices)
    else:
        rows = []
        for _ in range(n):
            i = sample_task(env, rng)
            rows.append(sample_m(env.tasks[i], m, rng, i))
    return MetaSample(tuple(rows), mode)


def sample_marginal_prob(env: Environment, sample: TaskSample) -> float:
    """Probability of the ordered m-sample under E: sum_i p_i * prod_j D_i({z_j})."""
    examples = sample.examples
    total = 0.0
    for task, p in zip(env.tasks, env.probs):
        prod = p
        for z in examples:
            prod *= task.prob_of(z)
            if prod == 0.0:
                break
        total += prod
    return total


def enumerate_samples(env: Environment, m: int) -> Iterable[TaskSample]:
    """Every ordered m-tuple over the union of task supports."""
    atoms = env.support_union()
    for combo in itertools.product(atoms, repeat=m):
        yield TaskSample.from_examples(combo)


def relevant_coordinate_environment(
    seed: int,
    input_dim: int = 3,
    relevant: int | None = None,
    n_tasks: int = 4,
    n_points: int = 4,
    slopes: Sequence[float] = (-1.0, -0.5, 0.5, 1.0),
    offsets: Sequence[float] = (-0.5, 0.0, 0.5),
    noise: float = 0.0,
    input_levels: Sequence[float] = (-1.0, 0.0, 1.0),
) -> Environment:
    """Tasks whose labels depend on one shared input coordinate.

    Each task draws its own slope and offset, so ``y = a_t * x[relevant] + b_t``.
    Inputs are distinct points from ``input_levels ** input_dim`` chosen so the
    relevant coordinate takes at least two values. With ``noise > 0`` every
    input appears twice, with labels shifted by ``+noise`` and ``-noise``, so no
    affine head can fit a task exactly.

    The relevant coordinate, when not given, is drawn from the seed. Tasks are
    equiprobable.
    """
    rng = make_rng(seed)
    if relevant is None:
        relevant = int(rng.integers(input_dim))
    if not 0 <= relevant < input_dim:
        raise InvalidEnvironment(f"relevant coordinate {relevant} out of range")
    grid = np.array(list(itertools.product(input_levels, repeat=input_dim)), dtype=float)
    if n_points > len(grid):
        raise InvalidEnvironment("n_points exceeds the number of distinct grid inputs")
    tasks = []
    for _ in range(n_tasks):
        while True:
            pick = grid[rng.choice(len(grid), size=n_points, replace=False)]
            if n_points == 1 or len(np.unique(pick[:, relevant])) > 1:
                break
        a = float(rng.choice(np.asarray(slopes, dtype=float)))
        b = float(rng.choice(np.asarray(offsets, dtype=float)))
        support = []
        for x in pick:
            y = a * x[relevant] + b
            if noise > 0:
                support.append(LabeledExample(tuple(x), y + noise))
                support.append(LabeledExample(tuple(x), y - noise))
            else:
                support.append(LabeledExample(tuple(x), y))
        tasks.append(FiniteTask.uniform(support))
    return Environment(tuple(tasks), (1.0 / n_tasks,) * n_tasks, input_dim)
