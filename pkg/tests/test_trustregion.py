import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from romtopt.hdm import ComplianceObjective
from romtopt.problems import assemble_problem, builtin_problem
from romtopt.rom import RomModel
from romtopt.trustregion import (
    TrConfig,
    TrustRegionDriver,
    criticality_chi,
    initial_radius,
    project_feasible,
    termination_measure,
)

from conftest import make_cantilever
from oracles import project_box_halfspace_bruteforce


def small_driver(config=None, nx=12, ny=4, volfrac=0.5):
    s = make_cantilever(nx, ny)
    obj = ComplianceObjective(s.f)
    n = s.mesh.n_elems
    w = np.full(n, s.mesh.elem_volume)
    cap = volfrac * w.sum()
    driver = TrustRegionDriver(
        s, RomModel(s), obj, w, cap, config or TrConfig(tau=0.1, constraint="res")
    )
    return driver, np.full(n, volfrac)


class TestProjection:
    def test_inside_point_unchanged(self):
        lo, hi = np.zeros(4), np.ones(4)
        w = np.ones(4)
        y = np.array([0.2, 0.3, 0.1, 0.2])
        x = project_feasible(y, lo, hi, w, 2.0)
        assert np.abs(x - y).max() < 1e-14

    def test_box_only_clipping(self):
        lo, hi = np.zeros(3), np.ones(3)
        x = project_feasible(np.array([-0.5, 0.4, 1.7]), lo, hi, np.ones(3), 10.0)
        assert np.allclose(x, [0.0, 0.4, 1.0])

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_matches_bruteforce(self, seed):
        rng = np.random.default_rng(seed)
        n = 5
        lo = np.zeros(n)
        hi = np.ones(n)
        w = 0.2 + rng.random(n)
        cap = rng.uniform(0.2, 0.9) * w.sum()
        y = rng.uniform(-0.5, 1.5, n)
        x = project_feasible(y, lo, hi, w, cap)
        x_ref = project_box_halfspace_bruteforce(y, lo, hi, w, cap)
        assert np.abs(x - x_ref).max() <= 1e-8

    def test_positive_weights_required(self):
        with pytest.raises(ValueError):
            project_feasible(np.ones(2), np.zeros(2), np.ones(2),
                             np.array([1.0, -1.0]), 1.0)


class TestTerminationMeasure:
    def test_zero_gradient(self):
        n = 6
        psi = np.full(n, 0.4)
        assert termination_measure(psi, np.zeros(n), np.zeros(n), np.ones(n),
                                   np.ones(n), 3.0) == 0.0

    def test_interior_equals_gradient_norm(self):
        n = 6
        psi = np.full(n, 0.5)
        g = np.full(n, 0.01)
        tm = termination_measure(psi, g, np.zeros(n), np.ones(n), np.ones(n), 10.0)
        assert tm == pytest.approx(np.linalg.norm(g), rel=1e-12)


class TestCriticality:
    def test_interior_ball_active(self):
        # big box, slack volume: the unit ball is the only binding set
        n = 16
        psi = np.full(n, 0.5)
        g = np.full(n, 0.3)  # per-coordinate step 1/4 < 0.5 box slack
        chi = criticality_chi(psi, g, np.zeros(n), np.ones(n), np.ones(n),
                              2.0 * n)
        assert chi == pytest.approx(np.linalg.norm(g), rel=1e-6)

    def test_blocked_bound_two_variables(self):
        # psi1 at the upper bound with g1 < 0: that descent direction is
        # blocked; the best feasible direction uses only the second variable,
        # clipped by its box slack of 0.5
        psi = np.array([1.0, 0.5])
        g = np.array([-3.0, 2.0])
        chi = criticality_chi(psi, g, np.zeros(2), np.ones(2), np.ones(2), 10.0)
        assert chi == pytest.approx(2.0 * 0.5, rel=1e-6)

    def test_kkt_point_is_critical(self):
        psi = np.array([1.0, 0.5, 0.0])
        g = np.array([-1.0, 0.0, 2.0])
        chi = criticality_chi(psi, g, np.zeros(3), np.ones(3), np.ones(3), 10.0)
        assert chi <= 1e-8

    def test_zero_gradient(self):
        assert criticality_chi(np.full(3, 0.5), np.zeros(3), np.zeros(3),
                               np.ones(3), np.ones(3), 5.0) == 0.0


class TestInitialRadius:
    def test_residual_kind_uses_load_norm(self):
        f = np.array([3.0, 4.0])
        assert initial_radius("res", np.ones(5), f, 0.1) == pytest.approx(0.5)

    def test_distance_kind_arithmetic(self):
        psi0 = np.full(10800, 0.5)
        expected = 0.1 * 0.5 * np.sqrt(10800)
        assert initial_radius("dist", psi0, np.ones(3), 0.1) == pytest.approx(expected)

    def test_invalid(self):
        with pytest.raises(ValueError):
            initial_radius("res", np.ones(2), np.ones(2), 0.0)
        with pytest.raises(ValueError):
            initial_radius("cube", np.ones(2), np.ones(2), 1.0)


class TestTrConfig:
    def test_defaults_valid(self):
        TrConfig()

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(gamma1=0.0),
            dict(gamma1=0.8, gamma2=0.5),
            dict(gamma2=1.5),
            dict(eta1=0.0),
            dict(eta1=0.8, eta2=0.5),
            dict(constraint="ball"),
        ],
    )
    def test_invalid_rejected(self, kwargs):
        with pytest.raises(ValueError):
            TrConfig(**kwargs)


class TestSubproblem:
    def test_huge_radius_runs_to_cap(self):
        cfg = TrConfig(tau=0.1, constraint="res", max_inner=8)
        driver, psi0 = small_driver(cfg)
        sol = driver.solver.solve(psi0, driver.objective)
        grad = driver.solver.gradient(psi0, sol, driver.objective)
        from romtopt.rom import SnapshotWindow

        basis = driver.rom.build_basis(SnapshotWindow(5), sol.u, sol.lam, True, 0,
                                       center_rho=sol.rho)
        sub = driver.solve_subproblem(basis, psi0, 1e9, sol.j, grad)
        assert sub.steps == 8
        assert sub.model_value <= sol.j

    def test_degenerate_radius_returns_center(self):
        cfg = TrConfig(tau=0.1, constraint="res")
        driver, psi0 = small_driver(cfg)
        sol = driver.solver.solve(psi0, driver.objective)
        grad = driver.solver.gradient(psi0, sol, driver.objective)
        from romtopt.rom import SnapshotWindow

        basis = driver.rom.build_basis(SnapshotWindow(5), sol.u, sol.lam, True, 0,
                                       center_rho=sol.rho)
        sub = driver.solve_subproblem(basis, psi0, 1e-300, sol.j, grad)
        assert sub.steps == 0
        assert np.array_equal(sub.candidate, psi0)
        assert sub.first_iterate is not None

    def test_model_value_never_above_center(self):
        # monotone MMA descent on the model: candidate model value <= center's
        cfg = TrConfig(tau=1.0, constraint="res")
        driver, psi0 = small_driver(cfg, nx=6, ny=2)
        recs = driver.run(psi0, max_iters=10)
        for r in recs:
            assert r.j_model_candidate <= r.j_center + 1e-12 * abs(r.j_center)


class TestDriver:
    def test_records_and_mechanics(self):
        cfg = TrConfig(tau=0.1, constraint="res")
        driver, psi0 = small_driver(cfg)
        recs = driver.run(psi0, max_iters=15)
        delta_max = cfg.delta_max_factor * initial_radius(
            "res", psi0, driver.solver.f, cfg.tau
        )
        assert len(recs) >= 5
        for prev, cur in zip(recs, recs[1:]):
            # radius update rules
            if not prev.accepted:
                assert cur.delta <= prev.delta * cfg.gamma1 * (1 + 1e-12)
            assert cur.delta <= delta_max * (1 + 1e-12)
        for r in recs:
            if r.accepted:
                assert r.rho_ratio >= cfg.eta1
                assert r.theta_candidate <= r.delta * (1 + 1e-12)

    def test_accepted_centers_nonincreasing(self):
        cfg = TrConfig(tau=0.1, constraint="res")
        driver, psi0 = small_driver(cfg)
        recs = driver.run(psi0, max_iters=15)
        centers = [recs[0].j_center] + [
            r.j_candidate if r.accepted else r.j_center for r in recs
        ]
        for a, b in zip(centers, centers[1:]):
            assert b <= a + 1e-10 * abs(a)

    def test_feasible_iterates(self):
        cfg = TrConfig(tau=0.5, constraint="dist")
        driver, psi0 = small_driver(cfg)
        seen = []
        driver.run(psi0, max_iters=10,
                   callback=lambda rec, psi, sol: seen.append(psi.copy()))
        w, cap = driver.w, driver.cap
        for psi in seen:
            assert psi.min() >= -1e-12 and psi.max() <= 1 + 1e-12
            assert w @ psi <= cap + 1e-9

    def test_deterministic_replay(self):
        cfg = TrConfig(tau=0.1, constraint="res")
        d1, psi0 = small_driver(cfg)
        r1 = d1.run(psi0, max_iters=8)
        d2, _ = small_driver(cfg)
        r2 = d2.run(psi0, max_iters=8)
        for a, b in zip(r1, r2):
            assert a.j_center == b.j_center
            assert a.delta == b.delta
            assert a.rho_ratio == b.rho_ratio or (
                np.isnan(a.rho_ratio) and np.isnan(b.rho_ratio)
            )

    def test_fix_mode_accepts_everything(self):
        cfg = TrConfig(tau=1.0, constraint="res", adaptive=False)
        driver, psi0 = small_driver(cfg)
        recs = driver.run(psi0, max_iters=8)
        deltas = {r.delta for r in recs}
        assert len(deltas) == 1  # radius never adapts
        moved = [r for r in recs if not np.isnan(r.rho_ratio)]
        assert all(r.accepted for r in moved)

    def test_probe_breaks_stall(self):
        # tiny initial radius: without probing the run would never move
        cfg = TrConfig(tau=1e-4, constraint="res")
        driver, psi0 = small_driver(cfg)
        recs = driver.run(psi0, max_iters=10)
        assert any(r.accepted for r in recs)

    def test_assumption_checks_run_at_centers(self):
        cfg = TrConfig(tau=0.1, constraint="res")
        driver, psi0 = small_driver(cfg)
        calls = []
        orig = driver._check_center_consistency

        def spy(*args, **kw):
            calls.append(1)
            return orig(*args, **kw)

        driver._check_center_consistency = spy
        recs = driver.run(psi0, max_iters=6)
        assert len(calls) == len(recs)

    def test_hdm_budget_one_per_major_iteration(self):
        cfg = TrConfig(tau=0.1, constraint="res")
        driver, psi0 = small_driver(cfg)
        recs = driver.run(psi0, max_iters=12)
        # initial solve plus at most one per major iteration
        assert driver.stats.hdm_solves <= len(recs) + 1
