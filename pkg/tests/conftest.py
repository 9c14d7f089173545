import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from metalab.env import Environment, FiniteTask, LabeledExample  # noqa: E402
from metalab.hypo import Grid, Head, HypothesisFamily, LossFn, Representation  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def small_family():
    """d = 2, F = both single-coordinate selections, 3x3 grid heads, M = 1."""
    return HypothesisFamily.build(2, 1, Grid(-1.0, 1.0, 3), Grid(-1.0, 1.0, 3), 1.0)


@pytest.fixture
def two_task_env():
    t0 = FiniteTask.uniform([LabeledExample((0.0, 1.0), 1.0), LabeledExample((1.0, 0.0), 0.0)])
    t1 = FiniteTask.uniform([LabeledExample((1.0, 1.0), 0.0), LabeledExample((-1.0, 0.0), 1.0)])
    return Environment((t0, t1), (0.5, 0.5), 2)


def random_family(rng: np.random.Generator, max_reps=8, max_heads=50, d=None, M=1.0):
    """Random subsets of coordinate selections and of a small integer grid of heads."""
    import itertools

    d = d or int(rng.integers(1, 5))
    v = int(rng.integers(1, min(d, 2) + 1))
    combos = list(itertools.combinations(range(d), v))
    n_reps = int(rng.integers(1, min(max_reps, len(combos)) + 1))
    picked = sorted(rng.choice(len(combos), size=n_reps, replace=False))
    reps = tuple(Representation(i, combos[j], d) for i, j in enumerate(picked))
    levels = [-1.0, -0.5, 0.0, 0.5, 1.0]
    grid = list(itertools.product(*([levels] * v), levels))
    n_heads = int(rng.integers(1, min(max_heads, len(grid)) + 1))
    hp = sorted(rng.choice(len(grid), size=n_heads, replace=False))
    heads = tuple(Head(i, grid[j][:-1], grid[j][-1]) for i, j in enumerate(hp))
    return HypothesisFamily(reps, heads, LossFn(M))


def family_as_lists(family):
    return [f.coords for f in family.reps], [(g.a, g.b) for g in family.heads], family.bound
