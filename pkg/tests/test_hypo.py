import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import family_as_lists, random_family
from metalab.env import FiniteTask, LabeledExample, TaskSample, make_rng, sample_m
from metalab.hypo import (
    FamilyError,
    Grid,
    Head,
    HypothesisFamily,
    LossFn,
    Representation,
    empirical_risk,
    inner_minimize,
    loss,
    predict,
    sample_risks,
    task_risks,
    true_risk,
)

IDENTITY = Representation(0, (0, 1), 2)
SECOND = Representation(1, (1,), 2)


def test_predict_examples():
    assert predict(IDENTITY, Head(0, (1.0, 0.0), 0.0), (3.0, 5.0)) == 3.0
    assert predict(IDENTITY, Head(0, (0.0, 0.0), 0.0), (3.0, 5.0)) == 0.0
    # coordinate 2 of (3, 5) is 5: 2 * 5 + 1
    assert predict(SECOND, Head(0, (2.0,), 1.0), (3.0, 5.0)) == 11.0


def test_predict_dimension_mismatch():
    with pytest.raises(FamilyError):
        predict(SECOND, Head(0, (1.0,), 0.0), (1.0, 2.0, 3.0))
    with pytest.raises(FamilyError):
        predict(SECOND, Head(0, (1.0, 1.0), 0.0), (1.0, 2.0))


def test_selection_matrix():
    assert SECOND.matrix.tolist() == [[0.0, 1.0]]
    assert (IDENTITY.matrix == np.eye(2)).all()
    with pytest.raises(FamilyError):
        Representation(0, (0, 1, 2), 2)


def test_loss_examples():
    lf = LossFn(1.0)
    assert loss(lf, 0.7, 0.7) == 0.0
    assert loss(lf, 2.0, 0.0) == 1.0
    assert loss(lf, 1.0, 0.5) == 0.25


@settings(max_examples=200)
@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0.01, 5))
def test_loss_symmetric_and_bounded(y, w, M):
    lf = LossFn(M)
    assert loss(lf, y, w) == loss(lf, w, y)
    assert 0.0 <= loss(lf, y, w) <= M


def test_empirical_risk_examples():
    lf = LossFn(1.0)
    g = Head(0, (1.0,), 0.0)
    perfect = TaskSample(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([2.0, 4.0]))
    assert empirical_risk(SECOND, g, lf, perfect) == 0.0
    # losses 0 and M
    mixed = TaskSample(np.array([[0.0, 2.0], [0.0, 1.0]]), np.array([2.0, 5.0]))
    assert empirical_risk(SECOND, g, lf, mixed) == 0.5
    same = TaskSample(np.array([[0.0, 0.5]] * 4), np.array([1.0] * 4))
    assert empirical_risk(SECOND, g, lf, same) == 0.25


def test_true_risk_examples():
    lf = LossFn(1.0)
    g = Head(0, (0.0,), 0.0)
    single = FiniteTask((LabeledExample((0.0, 0.0), 0.5),), (1.0,))
    assert true_risk(SECOND, g, lf, single) == 0.25
    fit = FiniteTask.uniform([LabeledExample((0.0, 0.0), 0.0), LabeledExample((1.0, 3.0), 0.0)])
    assert true_risk(SECOND, g, lf, fit) == 0.0
    # losses 0, 0.3, 0.6 -> mean 0.3
    three = FiniteTask.uniform(
        [LabeledExample((0.0, 0.0), v) for v in (0.0, math.sqrt(0.3), math.sqrt(0.6))]
    )
    assert true_risk(SECOND, g, lf, three) == pytest.approx(0.3, abs=1e-15)


def test_family_build_enumerates_grid(small_family):
    assert [f.coords for f in small_family.reps] == [(0,), (1,)]
    assert len(small_family.heads) == 9
    assert small_family.heads[1].a == (-1.0,) and small_family.heads[1].b == 0.0


def test_family_invariants():
    lf = LossFn(1.0)
    rep = (Representation(0, (0,), 1),)
    with pytest.raises(FamilyError):
        HypothesisFamily(rep, (), lf)
    with pytest.raises(FamilyError):
        HypothesisFamily(rep, (Head(0, (1.0,), 0.0), Head(1, (1.0,), 0.0)), lf)
    with pytest.raises(FamilyError):
        HypothesisFamily(rep, (Head(0, (0.3,), 0.0),), lf, weight_grid=Grid(0, 0.5, 3))


def test_inner_minimize_zero_loss_head(small_family):
    f = small_family.reps[0]
    s = TaskSample(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.array([0.0, 2.0]))
    g, v = inner_minimize(f, small_family, s)
    assert (small_family.heads[g].a, small_family.heads[g].b) == ((-1.0,), 1.0)
    assert v == 0.0


def test_inner_minimize_tie_goes_to_lower_index():
    lf = LossFn(1.0)
    fam = HypothesisFamily(
        (Representation(0, (0,), 1),), (Head(0, (0.0,), 1.0), Head(1, (0.0,), -1.0)), lf
    )
    s = TaskSample(np.array([[0.0]]), np.array([0.0]))
    assert inner_minimize(fam.reps[0], fam, s) == (0, 1.0)


def test_inner_minimize_matches_brute_force():
    rng = make_rng(11)
    for _ in range(60):
        fam = random_family(rng)
        coords, heads, M = family_as_lists(fam)
        m = int(rng.integers(1, 9))
        xs = rng.integers(-2, 3, size=(m, fam.input_dim)).astype(float)
        ys = rng.integers(-2, 3, size=m) / 2
        s = TaskSample(xs, ys)
        for f in fam.reps:
            g, v = inner_minimize(f, fam, s)
            og, ov = oracles.best_head(f.coords, heads, M, xs.tolist(), ys.tolist())
            assert v == pytest.approx(ov, abs=1e-12)
            # fsum may round ties apart; an equal-valued head is acceptable
            assert g == og or oracles.emp_risk(f.coords, heads[g], M, xs, ys) == pytest.approx(ov)


def test_batched_risks_bit_identical_to_scalar_paths():
    rng = make_rng(12)
    for _ in range(40):
        fam = random_family(rng, M=float(rng.choice([0.5, 1.0, 4.0])))
        m = int(rng.integers(1, 30))
        xs = rng.normal(size=(m, fam.input_dim)).round(2)
        ys = rng.normal(size=m).round(2)
        s = TaskSample(xs, ys)
        support = [LabeledExample(tuple(x), y) for x, y in zip(xs[:5], ys[:5])]
        task = FiniteTask.uniform(support)
        for f in fam.reps:
            batch = sample_risks(fam, f, s)
            tb = task_risks(fam, f, task)
            for g in fam.heads:
                assert batch[g.index] == empirical_risk(f, g, fam.loss, s)
                assert tb[g.index] == true_risk(f, g, fam.loss, task)
            assert inner_minimize(f, fam, s)[1] == batch.min()


def test_empirical_risk_matches_fsum_oracle():
    rng = make_rng(13)
    for _ in range(50):
        fam = random_family(rng)
        coords, heads, M = family_as_lists(fam)
        m = int(rng.integers(1, 40))
        xs = rng.normal(size=(m, fam.input_dim))
        ys = rng.normal(size=m)
        s = TaskSample(xs, ys)
        f, g = fam.reps[0], fam.heads[-1]
        expect = oracles.emp_risk(f.coords, heads[-1], M, xs.tolist(), ys.tolist())
        assert empirical_risk(f, g, fam.loss, s) == pytest.approx(expect, rel=1e-12, abs=1e-15)


def test_risks_bounded_and_inner_below_every_head():
    rng = make_rng(14)
    for _ in range(30):
        fam = random_family(rng, M=2.0)
        xs = rng.normal(size=(10, fam.input_dim)) * 3
        s = TaskSample(xs, rng.normal(size=10) * 3)
        for f in fam.reps:
            _, v = inner_minimize(f, fam, s)
            for g in fam.heads:
                r = empirical_risk(f, g, fam.loss, s)
                assert 0.0 <= r <= 2.0
                assert v <= r


def test_empirical_risk_converges_to_true_risk():
    task = FiniteTask(
        tuple(LabeledExample((float(i), float(-i)), 0.5 * i) for i in range(4)),
        (0.1, 0.2, 0.3, 0.4),
    )
    f, g, lf = Representation(0, (0,), 2), Head(0, (0.3,), 0.1), LossFn(1.0)
    exact = true_risk(f, g, lf, task)
    rng = make_rng(15)
    for m in (100, 10_000):
        est = np.mean([empirical_risk(f, g, lf, sample_m(task, m, rng)) for _ in range(20)])
        assert abs(est - exact) <= 3 * lf.bound / math.sqrt(m)


def test_true_risk_matches_monte_carlo():
    task = FiniteTask(
        tuple(LabeledExample((float(i),), float(i % 3)) for i in range(5)),
        (0.05, 0.15, 0.2, 0.25, 0.35),
    )
    f, g, lf = Representation(0, (0,), 1), Head(0, (0.5,), -0.5), LossFn(1.0)
    exact = true_risk(f, g, lf, task)
    s = sample_m(task, 10_000, make_rng(16))
    losses = [loss(lf, z.y, predict(f, g, z.x)) for z in s.examples]
    se = np.std(losses, ddof=1) / math.sqrt(len(losses))
    assert abs(np.mean(losses) - exact) <= 4 * se
