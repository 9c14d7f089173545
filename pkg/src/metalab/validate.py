"""Monte Carlo checks of the two probabilistic generalization guarantees.

Both guarantees bound the probability that the nu-deviation

    d_nu(a, b) = |a - b| / (nu + a + b)

between an empirical loss and its population counterpart exceeds alpha. The
deviation metric is not pinned down by the guarantees themselves; this is the
standard choice matching the nu-scaling of the sample-size bounds, and it lives
only in :func:`d_nu` so it can be swapped.

* ``theorem=1`` (fixed tasks) takes the tasks D_1..D_n as given, draws one
  m-sample per task, meta-trains and compares the average empirical loss of
  the learned heads with their average exact true risk on the same tasks.
* ``theorem=2`` (environment-drawn) samples the tasks from the environment,
  meta-trains, and compares the empirical meta loss of the learned
  representation with its exact environment-optimal loss.

Trial ``t`` uses the generator seeded with ``base_seed + t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Sequence

from .env import Environment, EnvironmentDrawn, FixedTasks, sample_meta, trial_rng
from .hypo import HypothesisFamily, true_risk
from .learner import (
    RepresentationLearner,
    _mean,
    empirical_meta_loss,
    env_optimal_loss,
    meta_train,
)

Z_95_ONE_SIDED = NormalDist().inv_cdf(0.95)


def d_nu(a: float, b: float, nu: float) -> float:
    if a < 0 or b < 0:
        raise ValueError(f"d_nu needs nonnegative arguments, got {a!r}, {b!r}")
    if not nu > 0:
        raise ValueError("nu must be positive")
    lo, hi = min(a, b), max(a, b)
    # fixed summation order keeps d_nu(a, b) == d_nu(b, a) bit for bit
    return (hi - lo) / (nu + lo + hi)


def wilson_upper(successes: int, trials: int, z: float = Z_95_ONE_SIDED) -> float:
    """Upper end of the Wilson score interval; one-sided 95% by default."""
    if trials < 1:
        raise ValueError("need at least one trial")
    p = successes / trials
    z2 = z * z
    centre = p + z2 / (2 * trials)
    spread = z * math.sqrt(p * (1 - p) / trials + z2 / (4 * trials * trials))
    return min(1.0, (centre + spread) / (1 + z2 / trials))


@dataclass(frozen=True, eq=False)
class GuaranteeConfig:
    """One guarantee experiment.

    ``tasks`` is the fixed task tuple when ``theorem == 1``; when omitted, row i uses task
    ``i mod num_tasks``.
    """

    theorem: int
    env: Environment
    family: HypothesisFamily
    alpha: float
    nu: float
    delta: float
    n: int
    m: int
    trials: int = 1000
    base_seed: int = 0
    tasks: tuple[int, ...] | None = None
    learner: RepresentationLearner | None = None

    def __post_init__(self) -> None:
        if self.theorem not in (1, 2):
            raise ValueError("theorem must be 1 or 2")
        if self.trials < 100:
            raise ValueError("guarantee validation needs at least 100 trials")
        if self.n < 1 or self.m < 1:
            raise ValueError("n and m must be >= 1")
        if not self.alpha > 0 or not self.nu > 0 or not 0 < self.delta < 1:
            raise ValueError("need alpha > 0, nu > 0 and 0 < delta < 1")
        if self.learner is None:
            object.__setattr__(self, "learner", RepresentationLearner(self.family))
        if self.theorem == 1:
            tasks = self.tasks
            if tasks is None:
                tasks = tuple(i % self.env.num_tasks for i in range(self.n))
            if len(tasks) != self.n:
                raise ValueError(f"the fixed-task check needs {self.n} tasks, got {len(tasks)}")
            object.__setattr__(self, "tasks", tuple(int(i) for i in tasks))

    def with_alpha(self, alpha: float) -> GuaranteeConfig:
        return GuaranteeConfig(
            self.theorem, self.env, self.family, alpha, self.nu, self.delta, self.n,
            self.m, self.trials, self.base_seed, self.tasks, self.learner,
        )


@dataclass(frozen=True)
class TrialOutcome:
    trial_index: int
    empirical_value: float
    true_value: float
    deviation: float
    exceeded: bool


@dataclass(frozen=True)
class GuaranteeReport:
    violations: int
    trials: int
    frequency: float
    wilson_upper_95: float
    delta: float
    passed: bool

    def as_dict(self) -> dict:
        return {
            "violations": self.violations,
            "trials": self.trials,
            "frequency": self.frequency,
            "wilson_upper_95": self.wilson_upper_95,
            "delta": self.delta,
            "pass": self.passed,
        }


def guarantee_trial(cfg: GuaranteeConfig, trial_index: int) -> TrialOutcome:
    rng = trial_rng(cfg.base_seed, trial_index)
    family = cfg.family
    if cfg.theorem == 1:
        meta = sample_meta(cfg.env, cfg.n, cfg.m, FixedTasks(cfg.tasks), rng)
        mk, heads = meta_train(cfg.learner, meta)
        f = family.reps[mk.rep_index]
        empirical = _mean([t.empirical_value for t in heads])
        true = _mean(
            [
                true_risk(f, family.heads[t.head_index], family.loss, cfg.env.tasks[i])
                for t, i in zip(heads, cfg.tasks)
            ]
        )
    else:
        meta = sample_meta(cfg.env, cfg.n, cfg.m, EnvironmentDrawn(), rng)
        mk, _ = meta_train(cfg.learner, meta)
        empirical = empirical_meta_loss(mk.rep_index, family, meta)
        true = env_optimal_loss(mk.rep_index, family, cfg.env)
    dev = d_nu(empirical, true, cfg.nu)
    return TrialOutcome(trial_index, empirical, true, dev, dev > cfg.alpha)


def run_trials(cfg: GuaranteeConfig) -> list[TrialOutcome]:
    return [guarantee_trial(cfg, t) for t in range(cfg.trials)]


def summarize(outcomes: Sequence[TrialOutcome], delta: float) -> GuaranteeReport:
    violations = sum(o.exceeded for o in outcomes)
    trials = len(outcomes)
    upper = wilson_upper(violations, trials)
    return GuaranteeReport(violations, trials, violations / trials, upper, delta, upper <= delta)


def estimate_violation(cfg: GuaranteeConfig) -> GuaranteeReport:
    """Violation frequency over ``cfg.trials`` seeded trials against delta."""
    return summarize(run_trials(cfg), cfg.delta)
