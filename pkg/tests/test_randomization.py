import itertools
import json

import numpy as np
import pytest

from wiener_nlw.grid import (
    ComplexField,
    Field,
    GridMismatch,
    InvalidParameter,
    axis_cubes,
    cube_project,
    lebesgue_norm,
    make_grid,
    random_field,
    sobolev_norm,
)
from wiener_nlw.randomization import (
    DistributionKind,
    NonSymmetricSequence,
    RandomCoefficients,
    _axis_matrix,
    draw_cube_coefficients,
    in_index_set,
    khintchine_check,
    make_rough_pair,
    randomize_pair,
    sample_coefficients,
    shell_rank,
)

KINDS = [k.value for k in DistributionKind]


def full_symbol(coeffs, j):
    """sum_n g_n psi(xi - n) on the full fft lattice (no Hermitian shortcut)."""
    grid = coeffs.grid
    (axes, *_), t = coeffs.tensor(j)
    out = t
    for _ in range(grid.dim):
        out = np.tensordot(out, _axis_matrix(grid, axes, coeffs.cutoff, half=False), axes=([0], [1]))
    return out


def draws(kind, cubes, seeds):
    return np.array([draw_cube_coefficients(cubes, kind, s) for s in seeds])


class TestSampleCoefficients:
    def test_rademacher_support(self):
        grid = make_grid(3, 16, 16.0)
        c = sample_coefficients(grid, "rademacher", 3)
        nonzero = np.any(c.cubes != 0, axis=1)
        for j in (0, 1):
            v = c.values[j]
            assert np.allclose(np.abs(v[nonzero]), 1.0, atol=1e-15)
            phase = np.mod(np.angle(v[nonzero]) - np.pi / 4, np.pi / 2)
            assert np.allclose(np.minimum(phase, np.pi / 2 - phase), 0, atol=1e-12)
            assert c.value((0, 0, 0), j) in (-1, 1)

    @pytest.mark.parametrize("kind", KINDS)
    def test_hermitian(self, kind):
        grid = make_grid(3, 16, 12.0)
        c = sample_coefficients(grid, kind, 11)
        g = c.value((1, 0, 0))
        # g_{-n} = conj(g_n), hence g_n g_{-n} = |g_n|^2
        assert g * c.value((-1, 0, 0)) == pytest.approx(abs(g) ** 2, abs=1e-15)
        for n, v in zip(c.cubes, c.values[1]):
            assert c.value(-n, 1) == pytest.approx(np.conj(v), abs=0)
        assert c.value((0, 0, 0)).imag == 0

    def test_gaussian_moments(self):
        cubes = np.array([[1, 0, 0], [-1, 0, 0]])
        M = 100_000
        g = draws("standard-gaussian-complex", cubes, range(M))[:, 0, 0]
        assert abs(g.mean()) < 3 * M ** -0.5
        assert np.mean(np.abs(g) ** 2) == pytest.approx(1.0, rel=0.02)
        assert np.var(g.real) == pytest.approx(0.5, rel=0.02)
        assert abs(np.corrcoef(g.real, g.imag)[0, 1]) < 3 * M ** -0.5

    @pytest.mark.parametrize("kind", KINDS)
    def test_unit_variance(self, kind):
        cubes = np.array([[0, 0], [2, -1], [-2, 1]])
        g = draws(kind, cubes, range(20_000))
        assert np.mean(np.abs(g[:, 0, 0]) ** 2) == pytest.approx(1.0, rel=0.04)
        assert np.mean(np.abs(g[:, 0, 1]) ** 2) == pytest.approx(1.0, rel=0.04)

    def test_seed_determinism(self):
        grid = make_grid(2, 32, 20.0)
        a = sample_coefficients(grid, "uniform-disk", 99)
        b = sample_coefficients(grid, "uniform-disk", 99)
        assert a.values.tobytes() == b.values.tobytes()
        assert not np.array_equal(a.values, sample_coefficients(grid, "uniform-disk", 100).values)

    def test_independent_of_grid_and_order(self):
        a = sample_coefficients(make_grid(3, 16, 16.0), "standard-gaussian-complex", 4)
        b = sample_coefficients(make_grid(3, 32, 8.0), "standard-gaussian-complex", 4)
        for n in [(0, 0, 0), (1, 0, 0), (-2, 1, 3), (3, -3, -3)]:
            assert a.value(n) == b.value(n)
        perm = np.random.default_rng(0).permutation(len(a.cubes))
        shuffled = draw_cube_coefficients(a.cubes[perm], "standard-gaussian-complex", 4)
        assert np.array_equal(shuffled, a.values[:, perm])

    def test_j_streams_uncorrelated(self):
        M = 4000
        g = draws("standard-gaussian-complex", np.array([[0, 1], [0, -1], [0, 0]]), range(M))
        for col in (0, 2):
            x, y = g[:, 0, col].real, g[:, 1, col].real
            assert abs(np.corrcoef(x, y)[0, 1]) < 3 / np.sqrt(M)

    def test_index_set(self):
        assert in_index_set((0, 0, 1)) and in_index_set((5, -3, 1)) and in_index_set((1, 0, 0))
        assert not in_index_set((0, 0, 0)) and not in_index_set((0, 2, -1))
        for n in itertools.product(range(-2, 3), repeat=3):
            if any(n):
                assert in_index_set(n) != in_index_set(tuple(-v for v in n))

    def test_shell_rank_is_bijective_prefix(self):
        for d in (1, 2, 3):
            for R in (0, 1, 3):
                cubes = np.array(list(itertools.product(range(-R, R + 1), repeat=d)))
                assert sorted(shell_rank(cubes).tolist()) == list(range((2 * R + 1) ** d))

    def test_missing_mirror(self):
        with pytest.raises(NonSymmetricSequence):
            draw_cube_coefficients(np.array([[1, 0], [0, 0]]), "rademacher", 0)

    def test_json_round_trip(self):
        grid = make_grid(2, 16, 9.0)
        c = sample_coefficients(grid, "rademacher", 123, "sharp-indicator")
        doc = json.loads(c.to_json())
        assert "values" not in doc and doc["seed"] == 123
        back = RandomCoefficients.from_json(c.to_json())
        assert back.values.tobytes() == c.values.tobytes()
        assert back.cutoff == "sharp-indicator"


class TestRandomizePair:
    def test_unit_coefficients_identity(self, rng):
        grid = make_grid(3, 16, 10.0)
        u0, u1 = random_field(grid, rng), random_field(grid, rng)
        c = sample_coefficients(grid, "rademacher", 0)
        c.values[:] = 1.0
        out = randomize_pair(u0, u1, c)
        assert np.max(np.abs(out.position.physical - u0.physical)) < 1e-12
        assert np.max(np.abs(out.velocity.physical - u1.physical)) < 1e-12

    @pytest.mark.parametrize("cutoff", ["smooth-psi", "sharp-indicator"])
    @pytest.mark.parametrize("kind", KINDS)
    def test_realness(self, kind, cutoff, rng):
        grid = make_grid(3, 16, 11.0)
        u0 = random_field(grid, rng)
        c = sample_coefficients(grid, kind, 5, cutoff)
        for j in (0, 1):
            u = grid.to_physical_full(grid.to_spectral_full(u0.physical) * full_symbol(c, j))
            assert np.max(np.abs(u.imag)) < 1e-12 * np.max(np.abs(u.real))
            out = randomize_pair(u0, u0, c)
            field = out.position if j == 0 else out.velocity
            assert np.max(np.abs(u.real - field.physical)) < 1e-12 * np.max(np.abs(u.real))

    def test_sharp_mean_square(self, rng):
        grid = make_grid(2, 32, 20.0)
        u0 = random_field(grid, rng)
        cubes = itertools.product(axis_cubes(grid, "sharp-indicator"), repeat=2)
        oracle = sum(cube_project(u0, n, "sharp-indicator").inner(cube_project(u0, n, "sharp-indicator")).real
                     for n in cubes)
        assert oracle == pytest.approx(u0.inner(u0), rel=1e-12)
        vals = [randomize_pair(u0, u0, sample_coefficients(grid, "standard-gaussian-complex", s,
                                                           "sharp-indicator")).position
                for s in range(2000)]
        mean = np.mean([v.inner(v) for v in vals])
        assert mean == pytest.approx(oracle, rel=0.05)

    def test_origin_cube(self):
        grid = make_grid(2, 32, 20 * np.pi)
        x, y = grid.coordinates()
        u0 = Field.from_physical(grid, np.cos(0.2 * x) + 0.5 * np.sin(0.3 * y + 0.1))
        c = sample_coefficients(grid, "standard-gaussian-complex", 8, "sharp-indicator")
        out = randomize_pair(u0, u0, c).position
        g = c.value((0, 0))
        assert np.max(np.abs(out.physical - g * u0.physical)) < 1e-13

    def test_single_mode_norm(self):
        grid = make_grid(3, 16, 2 * np.pi)
        x = grid.coordinates()
        u0 = Field.from_physical(grid, np.broadcast_to(np.cos(2 * x[1]), grid.shape))
        for seed in range(5):
            c = sample_coefficients(grid, "uniform-disk", seed)
            out = randomize_pair(u0, u0, c)
            g = c.value((0, 2, 0), 0)
            assert sobolev_norm(out.position, 0) == pytest.approx(abs(g) * sobolev_norm(u0, 0), rel=1e-12)

    def test_grid_mismatch(self, rng):
        a, b = make_grid(2, 16, 8.0), make_grid(2, 16, 9.0)
        with pytest.raises(GridMismatch):
            randomize_pair(random_field(a, rng), random_field(a, rng), sample_coefficients(b, "rademacher", 0))

    def test_regularity_preserved(self):
        grid = make_grid(3, 16, 16.0)
        pair, _ = make_rough_pair(grid, 0.75)
        base = sobolev_norm(pair.position, 0.75)
        ratios = [sobolev_norm(randomize_pair(pair.position, pair.velocity,
                                              sample_coefficients(grid, "standard-gaussian-complex", s)).position,
                               0.75) / base for s in range(200)]
        assert 0.5 <= np.median(ratios) <= 2

    @pytest.mark.slow
    def test_integrability_gain_stable(self):
        p99 = []
        for n in (16, 32):
            grid = make_grid(3, n, 8.0)
            pair, _ = make_rough_pair(grid, 0.75, "randomized-phase-power-law", seed=3)
            u0 = pair.position
            # remove the dominant origin cube
            u0 = (ComplexField.from_field(u0) - cube_project(u0, (0, 0, 0))).real()
            r = [lebesgue_norm(randomize_pair(u0, u0, sample_coefficients(grid, "standard-gaussian-complex",
                                                                           s)).position, 6)
                 / lebesgue_norm(u0, 2) for s in range(200)]
            p99.append(np.percentile(r, 99))
        assert max(p99) / min(p99) < 2


class TestMakeRoughPair:
    def test_norm_self_consistent(self):
        grid = make_grid(3, 16, 16.0)
        pair, norm = make_rough_pair(grid, 0.75, seed=2)
        recomputed = np.hypot(sobolev_norm(pair.position, 0.75), sobolev_norm(pair.velocity, -0.25))
        assert np.isfinite(norm)
        assert norm == pytest.approx(recomputed, rel=1e-12)

    @pytest.mark.parametrize("profile", ["power-law", "randomized-phase-power-law"])
    def test_deterministic(self, profile):
        grid = make_grid(3, 16, 16.0)
        a, _ = make_rough_pair(grid, 0.75, profile, seed=9)
        b, _ = make_rough_pair(grid, 0.75, profile, seed=9)
        assert a.position.physical.tobytes() == b.position.physical.tobytes()
        assert a.velocity.physical.tobytes() == b.velocity.physical.tobytes()

    def test_refinement(self):
        # the H^0.6 tail beyond the band decays like K^(-0.32); a band of 32 makes it small
        norms = {}
        for n in (32, 64):
            grid = make_grid(3, n, np.pi)
            u0 = make_rough_pair(grid, 0.75)[0].position
            norms[n] = (sobolev_norm(u0, 0.6), sobolev_norm(u0, 0.9))
        assert norms[64][0] / norms[32][0] - 1 < 0.05
        assert norms[64][1] / norms[32][1] > 1.1

    def test_spectral_decay(self):
        grid = make_grid(3, 32, 8.0)
        pair, _ = make_rough_pair(grid, 0.6, "randomized-phase-power-law", seed=1)
        k = grid.kmag()
        mask = grid.nyquist_mask() & (k > 0)
        slope0 = np.polyfit(np.log1p(k[mask] ** 2) / 2, np.log(np.abs(pair.position.spectral[mask])), 1)[0]
        slope1 = np.polyfit(np.log1p(k[mask] ** 2) / 2, np.log(np.abs(pair.velocity.spectral[mask])), 1)[0]
        assert slope0 == pytest.approx(-(0.6 + 1.5 + 0.01), abs=1e-9)
        assert slope1 == pytest.approx(-(0.6 - 1 + 1.5 + 0.01), abs=1e-9)

    @pytest.mark.parametrize("s", [0.0, 1.0, 1.5, -0.2])
    def test_invalid_regularity(self, s):
        with pytest.raises(InvalidParameter):
            make_rough_pair(make_grid(1, 16, 1.0), s)


class TestKhintchine:
    def _cubes(self):
        return np.array([[0, 0], [1, 0], [-1, 0], [0, 1], [0, -1], [2, -1], [-2, 1]])

    def test_single_pair(self):
        cubes = self._cubes()
        c = np.zeros(len(cubes), complex)
        c[1] = c[2] = 0.5
        g = draws("standard-gaussian-complex", cubes, range(10_000))[:, 0, :]
        rep = khintchine_check(g, c, cubes, 2)
        assert rep.l2 == pytest.approx(2 ** -0.5)
        assert rep.moment == pytest.approx(2 ** -0.5, rel=0.05)

    @pytest.mark.parametrize("kind", KINDS)
    def test_second_moment_is_l2(self, kind, rng):
        cubes = self._cubes()
        c = np.zeros(len(cubes), complex)
        c[0] = rng.normal()
        for a, b in ((1, 2), (3, 4), (5, 6)):
            c[a] = rng.normal() + 1j * rng.normal()
            c[b] = np.conj(c[a])
        g = draws(kind, cubes, range(10_000))[:, 0, :]
        assert khintchine_check(g, c, cubes, 2).ratio_l2 == pytest.approx(1.0, rel=0.05)

    def test_zero_sequence(self):
        cubes = self._cubes()
        g = draws("rademacher", cubes, range(100))[:, 0, :]
        assert khintchine_check(g, np.zeros(len(cubes)), cubes, 4).moment == 0.0

    def test_non_symmetric(self):
        cubes = self._cubes()
        c = np.zeros(len(cubes), complex)
        c[1] = 1.0
        with pytest.raises(NonSymmetricSequence):
            khintchine_check(np.ones((3, len(cubes))), c, cubes, 2)
