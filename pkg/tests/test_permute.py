import math

import numpy as np
import pytest
from scipy import stats

from stinteract.classical import knox_statistic
from stinteract.data import PointPattern
from stinteract.geometry import Window
from stinteract.model import ModelSpec
from stinteract.permute import PermutationAbort, PermutationPlan, p_value, permute_times, run_test
from stinteract.rng import stream

from support import intercept_for, quad_grid, simulate_on, uniform_pattern

UNIT = Window.box(0, 0, 1, 1, 1.0)


def test_two_event_swap_is_fair():
    p = PointPattern.from_arrays([[0.1, 0.1], [0.9, 0.9]], [0.2, 0.7], UNIT)
    swaps = 0
    for r in range(10_000):
        q = permute_times(p, stream(0, "swap", r))
        swaps += q.ids[0] == "e2"
    chi2 = (swaps - 5000) ** 2 / 5000 * 2
    assert stats.chi2.sf(chi2, 1) > 0.001


def test_multisets_preserved():
    rng = np.random.default_rng(1)
    p = uniform_pattern(rng, 100, UNIT)
    q = permute_times(p, rng)
    assert np.array_equal(np.sort(p.t), np.sort(q.t))
    key = lambda xy: xy[np.lexsort(xy.T)]
    assert np.array_equal(key(p.xy), key(q.xy))
    loc = {i: tuple(xy) for i, xy in zip(p.ids, p.xy)}
    assert all(loc[i] == tuple(xy) for i, xy in zip(q.ids, q.xy))


def test_p_value_hand_counts():
    assert p_value(5.0, [1, 2, 3, 4]) == 1 / 5
    assert p_value(2.0, [1, 2, 3, 4]) == 4 / 5
    assert p_value(0.0, [1, 2, 3, 4]) == 1.0
    assert p_value(3.0, [1, np.nan, 3, 4]) == 3 / 4
    reps = [1.0] * 26 + [2.0] * 173
    assert p_value(2.0, reps) == pytest.approx(0.87, abs=1e-15)


def test_plan_validation():
    with pytest.raises(ValueError):
        PermutationPlan(0, 1, "knox")
    with pytest.raises(ValueError):
        PermutationPlan(10, 1, "bogus")
    assert PermutationPlan(199, 1, "knox").resolution == 1 / 200


def test_knox_report_is_consistent():
    rng = np.random.default_rng(2)
    p = uniform_pattern(rng, 300, UNIT)
    rep = run_test(PermutationPlan(99, 7, "knox"), p, delta=0.1, tau=0.1)
    assert rep.observed == knox_statistic(p, 0.1, 0.1).close_close
    assert rep.p_value == (1 + np.sum(rep.replicates >= rep.observed)) / 100
    assert 1 / 100 <= rep.p_value <= 1


def test_extreme_observed_gets_smallest_p():
    # Tight space-time cluster: no permutation reaches the observed count.
    xy = np.vstack([np.full((30, 2), 0.5) + np.linspace(0, 0.01, 30)[:, None], np.random.default_rng(3).random((70, 2))])
    t = np.concatenate([np.linspace(0.5, 0.51, 30), np.random.default_rng(4).uniform(0.01, 1, 70)])
    p = PointPattern.from_arrays(xy, t, UNIT)
    rep = run_test(PermutationPlan(49, 1, "knox"), p, delta=0.05, tau=0.02)
    assert rep.p_value == 1 / 50


@pytest.mark.parametrize("kind", ["knox", "mantel", "omnibus-k"])
def test_thread_count_does_not_change_results(kind):
    rng = np.random.default_rng(5)
    p = uniform_pattern(rng, 200, UNIT)
    kw = dict(delta=0.1, tau=0.1, deltas=[0.05, 0.1], taus=[0.05, 0.1])
    a = run_test(PermutationPlan(40, 11, kind, threads=1), p, **kw)
    b = run_test(PermutationPlan(40, 11, kind, threads=4), p, **kw)
    assert np.array_equal(a.replicates, b.replicates)
    assert a.to_dict() == b.to_dict()


def test_model_test_deterministic_and_detailed():
    grid = quad_grid(t_max=60.0)
    sim = simulate_on(grid, [intercept_for(grid, 250), 0.3], 0.5, 0.3, 3.0, seed=6, columns=("z1",))
    spec = ModelSpec(0.3, 3.0, ("z1",))
    a = run_test(PermutationPlan(20, 3, "model-tr", threads=1), sim.pattern, grid=grid, spec=spec)
    b = run_test(PermutationPlan(20, 3, "model-tr", threads=3), sim.pattern, grid=grid, spec=spec)
    assert a.to_dict() == b.to_dict()
    d = a.to_dict()
    assert d["observed_T_R"] == pytest.approx(d["fit"]["gamma0"] * math.pi * 0.09 * 3.0)
    assert "replicate_mean_T_R" in d and d["observed_lr_D"] >= -1e-6
    lrd = run_test(PermutationPlan(20, 3, "model-d"), sim.pattern, grid=grid, spec=spec)
    assert lrd.observed == pytest.approx(d["observed_lr_D"])


def test_too_many_failures_abort(monkeypatch):
    import stinteract.permute as perm

    calls = {"n": 0}
    orig = perm._Knox.__call__

    def flaky(self, t):
        calls["n"] += 1
        if calls["n"] % 10 == 0:
            raise ValueError("boom")
        return orig(self, t)

    monkeypatch.setattr(perm._Knox, "__call__", flaky)
    rng = np.random.default_rng(7)
    p = uniform_pattern(rng, 50, UNIT)
    with pytest.raises(PermutationAbort, match="replicates failed"):
        run_test(PermutationPlan(50, 1, "knox"), p, delta=0.1, tau=0.1)


def test_few_failures_are_excluded(monkeypatch):
    import stinteract.permute as perm

    orig = perm._Knox.__call__
    seen = {"n": 0}

    def once(self, t):
        seen["n"] += 1
        if seen["n"] == 2:
            raise ValueError("boom")
        return orig(self, t)

    monkeypatch.setattr(perm._Knox, "__call__", once)
    rng = np.random.default_rng(8)
    p = uniform_pattern(rng, 50, UNIT)
    rep = run_test(PermutationPlan(40, 1, "knox"), p, delta=0.1, tau=0.1)
    assert rep.n_failed == 1 and rep.B_effective == 39
    assert rep.p_value == (1 + rep.exceedances) / 40
    assert rep.failures[0].startswith("replicate 1")


def test_replicates_csv(tmp_path):
    rng = np.random.default_rng(9)
    p = uniform_pattern(rng, 50, UNIT)
    rep = run_test(PermutationPlan(5, 1, "mantel"), p)
    rep.write_replicates_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "replicate,statistic,observed" and len(lines) == 6
