"""Bi-level meta-training over a finite hypothesis family.

The outer problem picks the representation f that minimizes the average, over
the rows of a meta-sample, of the best achievable empirical loss for that
row. The inner problem fits one head per row with f frozen. Both levels are
exhaustive scans; ties go to the lowest index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import Environment, MetaSample, TaskSample, sample_m, sample_task
from .hypo import (
    FamilyError,
    HypothesisFamily,
    Representation,
    inner_minimize,
    sample_risks,
    task_risks,
    true_risk,
)

STRATEGIES = ("exhaustive_outer",)


@dataclass(frozen=True)
class MetaKnowledge:
    """The learned representation and the outer objective it attains."""

    rep_index: int
    outer_value: float


@dataclass(frozen=True)
class TrainedTask:
    head_index: int
    empirical_value: float


@dataclass(frozen=True, eq=False)
class RepresentationLearner:
    """Maps a meta-sample to a representation.

    ``holdout`` splits every row into a leading fitting part and a trailing
    evaluation part. With the default 0 the same examples serve both levels.
    """

    family: HypothesisFamily
    strategy: str = "exhaustive_outer"
    holdout: float = 0.0

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise FamilyError(f"unsupported strategy {self.strategy!r}")
        if not 0.0 <= self.holdout < 1.0:
            raise FamilyError("holdout fraction must lie in [0, 1)")


def _mean(values) -> float:
    # fixed left-to-right order so every caller gets the same bits
    total = 0.0
    for v in values:
        total += v
    return total / len(values)


def _rep(family: HypothesisFamily, f) -> Representation:
    if isinstance(f, Representation):
        return f
    if isinstance(f, MetaKnowledge):
        f = f.rep_index
    if not 0 <= int(f) < len(family.reps):
        raise FamilyError(f"representation index {f} out of range")
    return family.reps[int(f)]


def _fit_rows(learner: RepresentationLearner, f: Representation, meta: MetaSample):
    """Per-row (head index, fit value, outer contribution) under f."""
    family = learner.family
    out = []
    for row in meta.rows:
        if learner.holdout > 0:
            fit_part, eval_part = row.split(learner.holdout)
            g, v = inner_minimize(f, family, fit_part)
            out.append((g, v, float(sample_risks(family, f, eval_part)[g])))
        else:
            g, v = inner_minimize(f, family, row)
            out.append((g, v, v))
    return out


def meta_train(
    learner: RepresentationLearner, meta: MetaSample
) -> tuple[MetaKnowledge, list[TrainedTask]]:
    """Exhaustive outer scan over F; returns f* and its per-row heads."""
    family = learner.family
    best = None
    for f in family.reps:
        rows = _fit_rows(learner, f, meta)
        value = _mean([r[2] for r in rows])
        if best is None or value < best[1]:
            best = (f.index, value, rows)
    rep_index, value, rows = best
    return (
        MetaKnowledge(rep_index, value),
        [TrainedTask(g, v) for g, v, _ in rows],
    )


def meta_test(mk: MetaKnowledge, family: HypothesisFamily, target: TaskSample) -> TrainedTask:
    g, v = inner_minimize(_rep(family, mk), family, target)
    return TrainedTask(g, v)


def empirical_meta_loss(f, family: HypothesisFamily, meta: MetaSample) -> float:
    """Average over rows of the best empirical loss with f frozen."""
    f = _rep(family, f)
    return _mean([inner_minimize(f, family, row)[1] for row in meta.rows])


def env_optimal_loss(f, family: HypothesisFamily, env: Environment) -> float:
    """Environment average of the best true risk per task with f frozen."""
    f = _rep(family, f)
    total = 0.0
    for task, p in zip(env.tasks, env.probs):
        total += p * float(np.min(task_risks(family, f, task)))
    return total


def transfer_risk(
    learner: RepresentationLearner,
    env: Environment,
    m: int,
    trials: int,
    rng: np.random.Generator,
    rep,
) -> tuple[float, float]:
    """Monte Carlo transfer risk of the base learner that fits a head under ``rep``.

    Each trial draws a task from ``env``, an m-sample from that task, fits the
    head on the sample and scores it by its exact true risk on the task.
    ``rep`` is a representation, its index, or a :class:`MetaKnowledge`.
    Returns the mean and its standard error.
    """
    if trials < 2:
        raise ValueError("transfer_risk needs at least 2 trials")
    family = learner.family
    f = _rep(family, rep)
    risks = np.empty(trials)
    for t in range(trials):
        i = sample_task(env, rng)
        task = env.tasks[i]
        g, _ = inner_minimize(f, family, sample_m(task, m, rng, i))
        risks[t] = true_risk(f, family.heads[g], family.loss, task)
    estimate = float(np.mean(risks))
    se = float(np.std(risks, ddof=1) / math.sqrt(trials))
    return estimate, se
