import numpy as np
import pytest

from eptransfer.basis import FieldPoint
from eptransfer.dynamics import TwoLevelEngine
from eptransfer.loops import (
    LoopSpec,
    ellipse_loop,
    grid_search,
    refine_optimum,
    sweep_duration,
    sweep_phase,
    sweep_radius,
    winding_number,
)
from eptransfer.units import EP_POINT


@pytest.fixture(scope="module")
def engine(ep_model):
    return TwoLevelEngine(ep_model)


class FlakyEngine:
    """Fails for long loops, otherwise reports a transfer that peaks at T = 50."""

    name = "flaky"

    class _Trace:
        def __init__(self, pops):
            self._pops = pops

        def final_populations(self):
            return self._pops

    def run(self, loop):
        if loop.T > 80:
            raise RuntimeError("synthetic failure")
        return self._Trace({1: float(np.exp(-((loop.T - 50) / 20) ** 2)), 2: 0.0})


class TopologyEngine:
    """Large loops permute a side resonance too; their label-1 value is large but meaningless."""

    name = "topology"

    class _Trace:
        def __init__(self, pops, swap):
            self._pops, self.pair_exchange = pops, swap

        def final_populations(self):
            return self._pops

    def run(self, loop):
        if loop.r > 0.25:
            return self._Trace({1: 0.5, 2: 0.1}, False)
        return self._Trace({1: float(np.exp(-((loop.r - 0.12) / 0.05) ** 2)) * 0.05, 2: 0.3}, True)


# -- loop geometry ----------------------------------------------------------------


def test_start_point():
    c = FieldPoint(0.014, 3e-4)
    sched = ellipse_loop(LoopSpec(c, 0.1, 100.0))
    p = sched(0.0)
    assert p.gamma == c.gamma
    assert p.f == pytest.approx(c.f * 1.1, rel=1e-15)


def test_quarter_turn():
    c = FieldPoint(0.014, 3e-4)
    p = LoopSpec(c, 0.1, 100.0)(25.0)
    assert p.gamma == pytest.approx(c.gamma * 1.1, rel=1e-14)
    assert p.f == pytest.approx(c.f, rel=1e-13)


@pytest.mark.parametrize("phi0", [0.0, 1.3, 2.55276 * np.pi, -0.4])
def test_closure_and_winding(phi0):
    lp = LoopSpec(EP_POINT, 0.1368, 2001.0, phi0)
    a, b = lp(0.0), lp(lp.T)
    assert a.gamma == pytest.approx(b.gamma, rel=1e-14)
    assert a.f == pytest.approx(b.f, rel=1e-14)
    assert winding_number(lp) == 1


@pytest.mark.parametrize("kw", [dict(r=0.0, T=1.0), dict(r=0.1, T=0.0), dict(r=-1e-3, T=10.0)])
def test_invalid_loop(kw):
    with pytest.raises(ValueError):
        LoopSpec(EP_POINT, **kw)


# -- sweeps -----------------------------------------------------------------------


def test_duration_sweep_limits(engine):
    res = sweep_duration(engine, EP_POINT, 1e-3, 0.0, np.geomspace(1.0, 1e5, 26))
    tr = res.transfer
    assert res.shape == (26,)
    assert np.all((res.populations >= 0) & (res.populations <= 1))
    # nothing is transferred in the sudden or in the very slow limit
    assert tr[0] < 1e-3 * tr.max() and tr[-1] < 1e-3 * tr.max()
    assert res.optimum["transfer"] == tr.max()
    assert res.manifest["engine"] == "two-level" and res.manifest["failures"] == 0


def test_sweep_is_deterministic(engine):
    grid = np.linspace(500, 4000, 6)
    a = sweep_duration(engine, EP_POINT, 0.05, 0.0, grid)
    b = sweep_duration(engine, EP_POINT, 0.05, 0.0, grid)
    np.testing.assert_array_equal(a.populations, b.populations)


def test_parallel_matches_serial(engine):
    grid = np.linspace(0.02, 0.2, 6)
    a = sweep_radius(engine, EP_POINT, 2500.0, 0.0, grid, jobs=1)
    b = sweep_radius(engine, EP_POINT, 2500.0, 0.0, grid, jobs=2)
    np.testing.assert_array_equal(a.populations, b.populations)
    assert b.manifest["jobs"] == 2


def test_grid_refinement_consistency(engine):
    coarse = np.linspace(1000, 4000, 8)
    fine = np.linspace(1000, 4000, 15)
    a = sweep_duration(engine, EP_POINT, 1e-3, 0.0, coarse).optimum["T"]
    b = sweep_duration(engine, EP_POINT, 1e-3, 0.0, fine).optimum["T"]
    assert abs(a - b) <= coarse[1] - coarse[0]


def test_interpolated_optimum_inside_bracket(engine):
    grid = np.linspace(1500, 3500, 9)
    res = sweep_duration(engine, EP_POINT, 1e-3, 0.0, grid)
    opt = res.interpolated_optimum()
    i = res.optimum_index[0]
    assert grid[max(i - 1, 0)] <= opt["T"] <= grid[min(i + 1, len(grid) - 1)]
    assert opt["transfer"] >= res.optimum["transfer"]


def test_phase_periodicity(engine):
    phis = np.array([0.3, 0.3 + 2 * np.pi, 0.3 + 4 * np.pi])
    res = sweep_phase(engine, EP_POINT, 0.1368, 2001.0, phis)
    tr = res.transfer
    assert tr[2] == pytest.approx(tr[0], rel=1e-6)
    # half the period lands on the other sheet
    assert abs(tr[1] - tr[0]) > 1e-3 * tr[0]


def test_grid_search_and_ridge(engine):
    r = np.array([0.05, 0.1, 0.15])
    T = np.array([1500.0, 2000.0, 2500.0, 3000.0])
    res = grid_search(engine, EP_POINT, r, T)
    assert res.shape == (3, 4)
    assert res.optimum["transfer"] == np.nanmax(res.transfer)
    for i in range(3):
        assert res.ridge[i] == T[np.argmax(res.transfer[i])]
    rows = list(res.rows())
    assert len(rows) == 12 and rows[1][0] == [0.05, 2000.0]


def test_failures_are_recorded():
    res = sweep_duration(FlakyEngine(), EP_POINT, 0.1, 0.0, [20.0, 50.0, 100.0])
    assert len(res.failures) == 1 and res.failures[0][0] == (2,)
    assert "synthetic failure" in res.failures[0][1]
    assert np.isnan(res.transfer[2])
    assert res.optimum["T"] == 50.0


def test_other_permutations_are_flagged():
    grid = np.linspace(0.02, 0.30, 15)
    res = sweep_radius(TopologyEngine(), EP_POINT, 2500.0, 0.0, grid)
    np.testing.assert_array_equal(res.pair_exchange, grid <= 0.25)
    assert res.manifest["other_permutation"] == 3
    # the unmasked optimum sits on a loop around two EPs
    assert res.optimum["r"] > 0.25
    opt = res.masked(res.pair_exchange).interpolated_optimum()
    assert opt["r"] == pytest.approx(0.12, abs=0.01)
    assert np.isnan(res.masked(res.pair_exchange).transfer[-1])


def test_refine_rejects_other_permutations():
    res = refine_optimum((TopologyEngine(), EP_POINT), {"r": 0.26, "T": 2500.0, "phi0": 0.0}, free=("r",),
                         steps={"r": 0.02}, max_evaluations=40)
    assert res.params["r"] <= 0.25


# -- local refinement ---------------------------------------------------------------


def quadratic(center):
    def f(p):
        return 1.0 - sum(((p[k] - v) / s) ** 2 for k, (v, s) in center.items())

    return f


def test_refine_stationary_seed():
    center = {"r": (0.1368, 0.01), "T": (2001.0, 100.0), "phi0": (8.02, 0.5)}
    seed = {k: v for k, (v, _) in center.items()}
    res = refine_optimum(quadratic(center), seed)
    assert res.converged and not res.budget_exhausted
    assert res.params == seed
    assert res.transfer == 1.0


def test_refine_convex_objective():
    center = {"r": (0.13, 0.01), "T": (2100.0, 100.0), "phi0": (7.9, 0.5)}
    seed = {"r": 0.12, "T": 2000.0, "phi0": 8.0}
    res = refine_optimum(quadratic(center), seed, rtol=1e-10, max_evaluations=2000)
    assert res.converged
    for k, (v, _) in center.items():
        assert res.params[k] == pytest.approx(v, rel=1e-4)


def test_refine_budget_flag():
    center = {"r": (0.13, 0.01), "T": (2100.0, 100.0)}
    res = refine_optimum(quadratic(center), {"r": 0.1, "T": 1500.0, "phi0": 0.0}, free=("r", "T"), max_evaluations=10)
    assert res.budget_exhausted and not res.converged
    assert res.evaluations <= 11
    assert res.params["phi0"] == 0.0


def test_refine_with_engine(engine):
    seed = {"r": 1e-3, "T": 2300.0, "phi0": 0.0}
    res = refine_optimum((engine, EP_POINT), seed, free=("T",), max_evaluations=40)
    start = engine.run(LoopSpec(EP_POINT, 1e-3, 2300.0)).transfer
    assert res.transfer >= start
    assert 2200 < res.params["T"] < 2600
