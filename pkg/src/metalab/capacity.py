"""Pseudo-metrics on heads and representations, epsilon-covers, capacities,
and the sample-size bounds that consume them.

Capacities are defined as a supremum of cover numbers over all probability
measures. Here the supremum runs over a finite list of probe measures, so every
capacity returned is a *probe lower bound* on the true quantity. When a cover is
computed greedily the per-probe number is an upper bound on the minimum cover
instead, and the result is neither; callers choose the mode.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .env import PROB_TOL, LabeledExample
from .hypo import Head, HypothesisFamily, LossFn, Representation

HEAD_SPACE = "head"
REP_SPACE = "rep"
EXACT = "exact"
GREEDY = "greedy"
EXACT_LIMIT = 12
METRIC_TOL = 1e-9


class CapacityError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ProbeMeasure:
    """A finitely supported probability measure.

    On the head space an atom is ``(v, y)`` with ``v`` a representation output;
    on the representation space an atom is a :class:`LabeledExample`.
    """

    atoms: tuple
    probs: tuple[float, ...]
    space: str

    def __post_init__(self) -> None:
        if self.space not in (HEAD_SPACE, REP_SPACE):
            raise CapacityError(f"unknown probe space {self.space!r}")
        if not self.atoms or len(self.atoms) != len(self.probs):
            raise CapacityError("probe needs matching nonempty atoms and probabilities")
        p = [float(v) for v in self.probs]
        if any(v < 0 for v in p) or abs(math.fsum(p) - 1.0) > PROB_TOL:
            raise CapacityError("probe probabilities must be nonnegative and sum to 1")
        if self.space == HEAD_SPACE:
            atoms = tuple(
                (tuple(float(c) for c in np.atleast_1d(v)), float(y)) for v, y in self.atoms
            )
        else:
            atoms = tuple(
                z if isinstance(z, LabeledExample) else LabeledExample(*z) for z in self.atoms
            )
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", tuple(p))

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self.space == HEAD_SPACE:
            xs = np.array([v for v, _ in self.atoms], dtype=float)
            ys = np.array([y for _, y in self.atoms], dtype=float)
        else:
            xs = np.array([z.x for z in self.atoms], dtype=float)
            ys = np.array([z.y for z in self.atoms], dtype=float)
        return xs, ys, np.array(self.probs)


def standard_probes(
    atoms: Sequence, space: str, singles: bool = True, pairs: bool = True
) -> list[ProbeMeasure]:
    """Every single-atom measure followed by every uniform pair measure."""
    atoms = list(atoms)
    probes = [ProbeMeasure((a,), (1.0,), space) for a in atoms] if singles else []
    if pairs:
        probes += [
            ProbeMeasure((a, b), (0.5, 0.5), space) for a, b in itertools.combinations(atoms, 2)
        ]
    return probes


def head_space_atoms(family: HypothesisFamily, examples: Sequence[LabeledExample]) -> list:
    """Distinct (f(x), y) points induced by the examples under every representation."""
    seen = {}
    for f in family.reps:
        for z in examples:
            v = tuple(float(c) for c in f.apply(np.array(z.x)))
            seen.setdefault((v, z.y), None)
    return list(seen)


@dataclass(frozen=True, eq=False)
class FinitePseudoMetricSpace:
    points: tuple
    dist: np.ndarray

    def __post_init__(self) -> None:
        d = np.array(self.dist, dtype=float)
        k = len(self.points)
        if d.shape != (k, k):
            raise CapacityError(f"distance matrix has shape {d.shape}, expected ({k}, {k})")
        if k == 0:
            raise CapacityError("space has no points")
        if (d < 0).any() or np.any(np.diag(d) != 0):
            raise CapacityError("distances must be nonnegative with a zero diagonal")
        if not np.allclose(d, d.T, rtol=0, atol=METRIC_TOL):
            raise CapacityError("distance matrix is not symmetric")
        for c in range(k):
            if (d > d[:, c : c + 1] + d[c : c + 1, :] + METRIC_TOL).any():
                raise CapacityError("distance matrix violates the triangle inequality")
        d.setflags(write=False)
        object.__setattr__(self, "points", tuple(self.points))
        object.__setattr__(self, "dist", d)

    def __len__(self) -> int:
        return len(self.points)

    def is_cover(self, centers: Sequence[int], eps: float) -> bool:
        if not centers:
            return False
        return bool((self.dist[list(centers)].min(axis=0) <= eps).all())


def _check_space(probe: ProbeMeasure, space: str) -> None:
    if probe.space != space:
        raise CapacityError(f"probe lives on the {probe.space} space, need {space}")


def head_pseudo_dist(g: Head, g2: Head, lossfn: LossFn, probe: ProbeMeasure) -> float:
    """Probe-weighted mean of |l_g - l_g'| over (v, y) atoms."""
    _check_space(probe, HEAD_SPACE)
    vs, ys, ps = probe.arrays()
    w1 = vs @ np.array(g.a) + g.b
    w2 = vs @ np.array(g2.a) + g2.b
    return float(ps @ np.abs(lossfn(ys, w1) - lossfn(ys, w2)))


def head_distance_matrix(family: HypothesisFamily, probe: ProbeMeasure) -> np.ndarray:
    _check_space(probe, HEAD_SPACE)
    vs, ys, ps = probe.arrays()
    w = family.head_weights @ vs.T + family.head_biases[:, None]
    losses = family.loss(ys[None, :], w)
    gaps = np.abs(losses[:, None, :] - losses[None, :, :])
    return gaps @ ps


def rep_pseudo_dist(
    f: Representation, f2: Representation, family: HypothesisFamily, probe: ProbeMeasure
) -> float:
    """Probe-weighted mean over z of max_g |l_{g o f}(z) - l_{g o f'}(z)|."""
    _check_space(probe, REP_SPACE)
    xs, ys, ps = probe.arrays()
    gap = np.abs(family.loss_table(f, xs, ys) - family.loss_table(f2, xs, ys)).max(axis=0)
    return float(ps @ gap)


def rep_distance_matrix(family: HypothesisFamily, probe: ProbeMeasure) -> np.ndarray:
    _check_space(probe, REP_SPACE)
    xs, ys, ps = probe.arrays()
    tables = np.stack([family.loss_table(f, xs, ys) for f in family.reps])
    gaps = np.abs(tables[:, None] - tables[None, :]).max(axis=2)
    return gaps @ ps


def _exact_cover(space: FinitePseudoMetricSpace, eps: float) -> list[int]:
    k = len(space)
    if k > EXACT_LIMIT:
        raise CapacityError(f"exact cover is limited to {EXACT_LIMIT} points, got {k}")
    reach = [int(sum(1 << j for j in range(k) if space.dist[i, j] <= eps)) for i in range(k)]
    full = (1 << k) - 1
    for size in range(1, k + 1):
        for centers in itertools.combinations(range(k), size):
            mask = 0
            for c in centers:
                mask |= reach[c]
            if mask == full:
                return list(centers)
    raise AssertionError("the full point set always covers itself")


def _greedy_cover(space: FinitePseudoMetricSpace, eps: float) -> list[int]:
    within = space.dist <= eps
    uncovered = np.ones(len(space), dtype=bool)
    centers = []
    while uncovered.any():
        gains = (within & uncovered[None, :]).sum(axis=1)
        c = int(np.argmax(gains))
        centers.append(c)
        uncovered &= ~within[c]
    return centers


def epsilon_cover(space: FinitePseudoMetricSpace, eps: float, mode: str = EXACT) -> list[int]:
    """Centers (indices into ``space.points``) such that every point is within eps of one.

    ``exact`` returns a minimum-cardinality cover by subset search in order of
    increasing size (at most 12 points). ``greedy`` repeatedly takes the point
    covering most still-uncovered points, lowest index on ties.
    """
    if not eps > 0:
        raise CapacityError("eps must be positive")
    if mode == EXACT:
        centers = _exact_cover(space, eps)
    elif mode == GREEDY:
        centers = _greedy_cover(space, eps)
    else:
        raise CapacityError(f"unknown cover mode {mode!r}")
    return centers


def capacity(
    elements: Sequence,
    dist: Callable,
    eps: float,
    probes: Sequence[ProbeMeasure],
    mode: str = EXACT,
) -> int:
    """Largest cover number over the probes; a lower bound on the sup over all measures.

    ``dist(a, b, probe)`` gives the pseudo-distance of two elements under a probe.
    """
    if not probes:
        raise CapacityError("capacity needs at least one probe")
    elements = list(elements)
    best = 0
    for probe in probes:
        d = np.array([[dist(a, b, probe) for b in elements] for a in elements])
        space = FinitePseudoMetricSpace(tuple(range(len(elements))), d)
        best = max(best, len(epsilon_cover(space, eps, mode)))
    return best


def _capacity_from_matrices(matrices, eps: float, mode: str) -> int:
    best = 0
    for d in matrices:
        space = FinitePseudoMetricSpace(tuple(range(d.shape[0])), d)
        best = max(best, len(epsilon_cover(space, eps, mode)))
    return best


def head_capacity(
    family: HypothesisFamily, eps: float, probes: Sequence[ProbeMeasure], mode: str = GREEDY
) -> int:
    """C(eps, l_G) over the probes, computed from batched distance matrices."""
    if not probes:
        raise CapacityError("capacity needs at least one probe")
    return _capacity_from_matrices((head_distance_matrix(family, p) for p in probes), eps, mode)


def rep_capacity(
    family: HypothesisFamily, eps: float, probes: Sequence[ProbeMeasure], mode: str = GREEDY
) -> int:
    """C*_{l_G}(eps, F) over the probes."""
    if not probes:
        raise CapacityError("capacity needs at least one probe")
    return _capacity_from_matrices((rep_distance_matrix(family, p) for p in probes), eps, mode)


@dataclass(frozen=True)
class BoundParams:
    """Inputs to the sample-size bounds.

    ``cap_heads`` is C(eps1, l_G) and ``cap_reps`` is C*_{l_G}(eps2, F). The
    task-count bound of :func:`theorem2_nm` needs the representation capacity at
    alpha * nu / 16; pass it as ``cap_reps_task``. When omitted ``cap_reps`` is
    used, which can only enlarge n because eps2 < alpha * nu / 16.
    """

    M: float
    alpha: float
    delta: float
    nu: float
    eps1: float
    eps2: float
    n: int = 1
    cap_heads: int = 1
    cap_reps: int = 1
    cap_reps_task: int | None = None

    def __post_init__(self) -> None:
        problems = []
        if not self.M > 0:
            problems.append("M must be positive")
        # alpha = 1 admitted: the deviation metric is < 1, so the event is empty there
        if not 0 < self.alpha <= 1:
            problems.append("alpha must lie in (0, 1]")
        if not 0 < self.delta < 1:
            problems.append("delta must lie in (0, 1)")
        if not self.nu > 0:
            problems.append("nu must be positive")
        if not (self.eps1 > 0 and self.eps2 > 0):
            problems.append("eps1 and eps2 must be positive")
        if int(self.n) < 1:
            problems.append("n must be >= 1")
        for name in ("cap_heads", "cap_reps", "cap_reps_task"):
            v = getattr(self, name)
            if v is not None and int(v) < 1:
                problems.append(f"{name} must be >= 1")
        if problems:
            raise CapacityError("; ".join(problems))


def _ceil_at_least_one(x: float) -> int:
    return max(1, math.ceil(x))


def _check_eps(p: BoundParams, divisor: int) -> None:
    target = p.alpha * p.nu / divisor
    if abs(p.eps1 + p.eps2 - target) > 1e-12:
        raise CapacityError(
            f"eps1 + eps2 = {p.eps1 + p.eps2!r} must equal alpha*nu/{divisor} = {target!r}"
        )


def theorem1_m_raw(p: BoundParams) -> float:
    _check_eps(p, 8)
    scale = 8 * p.M / (p.alpha**2 * p.nu)
    return scale * (math.log(p.cap_heads) + math.log(4 * p.cap_reps / p.delta) / p.n)


def theorem1_m(p: BoundParams) -> int:
    """Examples per task so that, for n fixed tasks, the deviation exceeds alpha w.p. <= delta."""
    return _ceil_at_least_one(theorem1_m_raw(p))


def theorem2_nm(p: BoundParams) -> tuple[int, int]:
    """(tasks, examples per task) for environment-drawn meta-samples.

    The examples bound is evaluated at the returned task count; ``p.n`` is ignored.
    """
    _check_eps(p, 16)
    cap_task = p.cap_reps if p.cap_reps_task is None else p.cap_reps_task
    n = _ceil_at_least_one(32 * p.M / p.alpha**2 * math.log(8 * cap_task / p.delta))
    return n, theorem2_m_at(p, n)


def theorem2_m_at(p: BoundParams, n: int) -> int:
    """The examples bound of the environment-drawn case for a given task count n."""
    _check_eps(p, 16)
    scale = 32 * p.M / (p.alpha**2 * p.nu)
    raw = scale * (math.log(p.cap_heads) + math.log(8 * p.cap_reps / p.delta) / n)
    return _ceil_at_least_one(raw)
