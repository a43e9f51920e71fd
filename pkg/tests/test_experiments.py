import numpy as np
import pytest

from wiener_nlw.experiments import (
    PERTURBED_COLUMNS,
    DegenerateEnsemble,
    EnsembleSpec,
    ReferenceTooCoarse,
    TailCurve,
    build_base_pair,
    exceptional_set_probe,
    increment_decay,
    l2_growth_check,
    perturbed_ensemble,
    solver_validation,
    strichartz_tail,
    sup_tail,
    truncation_convergence,
    uniform_energy,
)
from wiener_nlw.grid import InvalidParameter, lebesgue_norm, make_grid
from wiener_nlw.propagator import linear_propagate
from wiener_nlw.solver import LinearForcing, SolverConfig, energy_norm_trace, evolve_nlw, evolve_perturbed

BUMP = {"kind": "gaussian-bump", "width": 1.5, "amplitude": 1.0}
ROUGH = {"kind": "rough", "s": 0.75, "amplitude": 6.0}


def small_rough_spec(members=3, seed=7):
    return EnsembleSpec(make_grid(3, 16, np.pi / 2, 2), ROUGH, "standard-gaussian-complex", members, seed)


class TestTailCurve:
    def test_monotone_and_bounds(self, rng):
        curve = TailCurve.from_samples(rng.rayleigh(size=3000))
        assert np.all(np.diff(curve.exceedance) <= 0)
        assert np.all(curve.lower <= curve.exceedance) and np.all(curve.exceedance <= curve.upper)
        assert curve.exceedance_at(-1.0) == 1.0
        assert curve.exceedance_at(curve.lam[0] - 1e-9) == 1.0

    def test_gaussian_tail_slope(self, rng):
        # |g| for a unit complex Gaussian: P(|g| > x) = exp(-x^2)
        g = np.abs(rng.normal(size=20000) + 1j * rng.normal(size=20000)) / np.sqrt(2)
        curve = TailCurve.from_samples(g)
        assert curve.slope == pytest.approx(-1.0, rel=0.1)
        assert curve.r2 > 0.95
        lo, hi = curve.fit_range
        assert lo >= np.median(g) and curve.counts[curve.lam == hi][0] >= 10

    def test_step_function(self):
        curve = TailCurve.from_samples(np.full(200, 2.5))
        assert set(np.unique(curve.exceedance)) == {0.0, 1.0}
        assert curve.exceedance_at(2.4) == 1.0 and curve.exceedance_at(2.6) == 0.0
        assert np.isnan(curve.slope)


class TestStrichartzTail:
    def _single_cube(self, dist, members):
        grid = make_grid(3, 8, 2 * np.pi)
        return EnsembleSpec(grid, {"kind": "single-cube", "cube": [1, 0, 0]}, dist, members, 3)

    def test_single_cube_inherits_gaussian_tail(self):
        spec = self._single_cube("standard-gaussian-complex", 5000)
        # r = 6 keeps |cos|^r exactly resolved by 8 points, so the norm is exactly C |g|
        rep = strichartz_tail(spec, 5, 6, (0, 1), n_times=17)
        g = np.array([abs(spec.coefficients(i).value((1, 0, 0))) for i in range(50)])
        C = rep.norms[:50] / g
        assert np.ptp(C) < 1e-10 * C.mean()
        # independent one-dimensional Monte Carlo of |g|
        mc = np.random.default_rng(0)
        direct = TailCurve.from_samples(C[0] * np.abs(mc.normal(size=5000) + 1j * mc.normal(size=5000))
                                        / np.sqrt(2))
        assert rep.curve.slope == pytest.approx(direct.slope, rel=0.1)
        assert rep.curve.slope == pytest.approx(-1 / C[0] ** 2, rel=0.1)

    def test_rademacher_step(self):
        spec = self._single_cube("rademacher", 150)
        with pytest.raises(DegenerateEnsemble):
            strichartz_tail(spec, 5, 10, (0, 1), n_times=17)
        rep = strichartz_tail(spec, 5, 10, (0, 1), n_times=17, require_fit=False)
        assert np.ptp(rep.norms) < 1e-12 * rep.norms[0]
        assert set(np.unique(rep.curve.exceedance)) == {0.0, 1.0}

    def test_below_minimum(self):
        spec = EnsembleSpec(make_grid(3, 16, 16.0), BUMP, "standard-gaussian-complex", 100, 7)
        rep = strichartz_tail(spec, 5, 10, (0, 1), n_times=17)
        assert rep.curve.exceedance_at(0.99 * rep.norms.min()) == 1.0
        assert rep.curve.exceedance_at(rep.curve.lam[-1]) == 0.0
        assert len(rep.rows()) == 200

    def test_preconditions(self):
        spec = EnsembleSpec(make_grid(3, 16, 16.0), BUMP, "standard-gaussian-complex", 20, 7)
        with pytest.raises(InvalidParameter):
            strichartz_tail(spec, 5, 10, (0, 1), n_times=9)
        with pytest.raises(InvalidParameter):
            strichartz_tail(spec, np.inf, 10, (0, 1))
        with pytest.raises(InvalidParameter):
            strichartz_tail(spec, 5, 10, (0, 11))


class TestSupTail:
    def test_tiny_interval(self):
        spec = EnsembleSpec(make_grid(3, 16, 16.0), BUMP, "standard-gaussian-complex", 5, 1)
        rep = sup_tail(spec, 6, 1e-9, depth=1, require_fit=False)
        for i, s in enumerate(rep.sups[("full-wave-S", 1e-9)]):
            assert s == pytest.approx(lebesgue_norm(spec.member_pair(i).position, 6), rel=1e-6)

    def test_zero_data(self):
        spec = EnsembleSpec(make_grid(3, 16, 16.0), {"kind": "zero"}, "standard-gaussian-complex", 4, 1)
        rep = sup_tail(spec, 6, [1.0, 2.0], depth=4, kinds=["full-wave-S", "tilde-S"])
        assert all(np.all(v == 0) for v in rep.sups.values())

    def test_refinement(self):
        grid = make_grid(3, 16, 2 * np.pi)
        spec = EnsembleSpec(grid, {"kind": "band-limited", "band": 4.0, "seed": 2}, "standard-gaussian-complex",
                            4, 5)
        a = sup_tail(spec, 6, 1.0, depth=10, require_fit=False).sups[("full-wave-S", 1.0)]
        b = sup_tail(spec, 6, 1.0, depth=12, require_fit=False).sups[("full-wave-S", 1.0)]
        assert np.all(np.abs(b - a) < 0.01 * a)
        assert np.all(b >= a)

    def test_depth_limit(self):
        spec = EnsembleSpec(make_grid(3, 16, 16.0), BUMP, "standard-gaussian-complex", 4, 1)
        with pytest.raises(InvalidParameter):
            sup_tail(spec, 6, 1.0, depth=15)


class TestIncrementDecay:
    def test_geometric_beyond_band(self):
        grid = make_grid(3, 16, 2 * np.pi)
        pair = build_base_pair(grid, {"kind": "band-limited", "band": 2.0, "seed": 4})
        dec = increment_decay(pair, 6, 1.0, depth=10, band=2.0)
        fine = dec.fine_decay()
        assert fine.size >= 5
        assert np.all((fine > 0.4) & (fine < 0.6))


class TestPerturbedEnsembles:
    def test_no_low_content_gives_zero(self):
        grid = make_grid(3, 16, 2 * np.pi, 2)
        spec = EnsembleSpec(grid, {"kind": "single-cube", "cube": [3, 0, 0]}, "standard-gaussian-complex", 2, 0)
        env, ens = uniform_energy(spec, [1], 0.5, SolverConfig(0.05))
        assert env.quantiles["1"]["max"] < 1e-30
        assert all(r.sup_energy < 1e-30 for r in ens.records if r.N == "1")

    def test_full_band_matches_two_routes(self):
        spec = small_rough_spec(1)
        cfg = SolverConfig(0.01)
        env, ens = uniform_energy(spec, ["full"], 0.5, cfg)
        pair = spec.member_pair(0)
        u = evolve_nlw(pair, 0.5, cfg)
        z = LinearForcing(pair).trajectory(u.times)
        direct = energy_norm_trace(u - z).max()
        assert env.quantiles["full"]["max"] == pytest.approx(direct, rel=1e-6)

    def test_doubling_time(self):
        spec = small_rough_spec(3)
        cfg = SolverConfig(0.02)
        _, short = uniform_energy(spec, [2, 4], 0.25, cfg)
        _, long = uniform_energy(spec, [2, 4], 0.5, cfg)
        for a, b in zip(short.records, long.records):
            assert (a.member, a.N) == (b.member, b.N)
            assert b.sup_energy >= a.sup_energy

    def test_records_and_l2_bound(self):
        spec = small_rough_spec(2)
        ens = perturbed_ensemble(spec, [2, 4], 0.3, SolverConfig(0.02), control=False)
        assert {r.N for r in ens.records} == {"2", "4", "full"}
        assert all(len(r.row()) == len(PERTURBED_COLUMNS) for r in ens.records)
        assert all(r.l2_bound_ok for r in ens.records)
        stats = ens.by_n(2)[0].omega
        assert len(stats) == 5 and all(v >= 0 for v in stats.values())

    def test_l2_growth_check(self):
        spec = small_rough_spec(1)
        traj = evolve_perturbed(LinearForcing(spec.member_pair(0)), 0.4, SolverConfig(0.02))
        ok, margin = l2_growth_check(traj)
        assert ok and margin <= 1

    def test_invalid_truncations(self):
        spec = small_rough_spec(1)
        with pytest.raises(InvalidParameter):
            perturbed_ensemble(spec, [3], 0.1, SolverConfig(0.02))
        with pytest.raises(InvalidParameter):
            perturbed_ensemble(spec, [64], 0.1, SolverConfig(0.02))
        with pytest.raises(InvalidParameter):
            truncation_convergence(spec, [2, 32], 0.1, SolverConfig(0.02))


class TestTruncationConvergence:
    def test_band_limited_below_truncation(self):
        grid = make_grid(3, 16, 2 * np.pi, 2)
        spec = EnsembleSpec(grid, {"kind": "band-limited", "band": 1.0, "seed": 1, "amplitude": 0.5},
                            "standard-gaussian-complex", 2, 0)
        rep = truncation_convergence(spec, [2, 4], 0.3, SolverConfig(0.02), check_reference=False)
        # the truncation symbol is 1 to round-off on the data support
        assert np.all(rep.z_medians < 1e-14) and np.all(rep.v_medians < 1e-14)

    def test_decreasing_and_reference_check(self):
        spec = small_rough_spec(3)
        cfg = SolverConfig(0.01)
        ens = perturbed_ensemble(spec, [2, 4, 8, 16], 0.5, cfg, omega=False)
        rep = truncation_convergence(spec, [2, 4, 8, 16], 0.5, cfg, ensemble=ens)
        assert rep.z_medians[-1] < rep.z_medians[0]
        assert rep.v_medians[-1] < rep.v_medians[0]
        ens.control_error = rep.v_medians.min()
        with pytest.raises(ReferenceTooCoarse):
            truncation_convergence(spec, [2, 4, 8, 16], 0.5, cfg, ensemble=ens)


class TestExceptionalSet:
    def test_limits(self):
        spec = EnsembleSpec(make_grid(3, 16, 16.0), BUMP, "standard-gaussian-complex", 50, 2)
        rep = exceptional_set_probe(spec, 1.0, 1.0, 0.2, 0.5, [0.0, 1e9], n_times=17)
        assert rep.violation[0] == 1.0 and rep.violation[1] == 0.0
        zero = EnsembleSpec(make_grid(3, 16, 16.0), {"kind": "zero"}, "standard-gaussian-complex", 10, 2)
        rep = exceptional_set_probe(zero, 1.0, 1.0, 0.2, 0.5, [1e-12, 1.0], n_times=9)
        assert np.all(rep.violation == 0) and rep.smallness_violation == 0

    def test_consistent_with_tail(self):
        spec = EnsembleSpec(make_grid(3, 16, 16.0), BUMP, "standard-gaussian-complex", 1000, 9)
        thr_probe = exceptional_set_probe(spec, 1.0, 1e9, 0.2, 1.0, [0.0], n_times=17)
        curve = TailCurve.from_samples(thr_probe.norms)
        thr = curve.lam[len(curve.lam) // 2]
        rep = exceptional_set_probe(spec, 1.0, 1e9, 0.2, 1.0, [thr], n_times=17)
        lo, hi = rep.wilson[0][0], rep.wilson[1][0]
        assert lo <= curve.exceedance_at(thr) <= hi
        assert rep.violation[0] == pytest.approx(curve.exceedance_at(thr), abs=1e-12)

    def test_good_set_solves(self):
        spec = small_rough_spec(4)
        rep = exceptional_set_probe(spec, 0.3, 1e9, 0.2, 0.3, [1e9], n_times=9,
                                    solve_good=SolverConfig(0.02))
        assert rep.good_completed == 4 and rep.good_aborted == []


class TestSolverValidation:
    def test_checks_pass(self):
        spec = EnsembleSpec(make_grid(3, 16, np.pi / 2, 3), {"kind": "gaussian-bump", "width": 0.2},
                            "standard-gaussian-complex", 1, 7)
        checks = solver_validation(spec, 0.3, SolverConfig(0.005, spectral_filter=False))
        assert [c.name for c in checks] == ["energy_relative_drift", "split_relative_H1_gap",
                                            "linear_limit_max_coefficient_error"]
        assert all(c.passed for c in checks), [c.row() for c in checks]


class TestReproducibility:
    def test_threads_do_not_matter(self):
        spec = EnsembleSpec(make_grid(3, 16, 16.0), BUMP, "standard-gaussian-complex", 100, 4)
        a = strichartz_tail(spec, 5, 10, (0, 1), n_times=9, threads=1)
        b = strichartz_tail(spec, 5, 10, (0, 1), n_times=9, threads=4)
        assert a.norms.tobytes() == b.norms.tobytes()
        assert a.curve.summary() == b.curve.summary()

    def test_spec_fingerprint(self):
        a = EnsembleSpec(make_grid(3, 16, 16.0), BUMP, "rademacher", 10, 4)
        b = EnsembleSpec(make_grid(3, 16, 16.0), dict(BUMP), "rademacher", 10, 4)
        c = EnsembleSpec(make_grid(3, 16, 16.0), BUMP, "rademacher", 10, 5)
        assert a.fingerprint() == b.fingerprint() != c.fingerprint()
        assert a.member_pair(3).position.physical.tobytes() == b.member_pair(3).position.physical.tobytes()
