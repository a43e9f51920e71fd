import numpy as np
import pytest

from wiener_nlw.grid import make_grid, random_field


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def grid1d():
    return make_grid(1, 64, 2 * np.pi, 3)


@pytest.fixture
def grid2d():
    return make_grid(2, 16, 8.0, 3)


@pytest.fixture
def grid3d():
    return make_grid(3, 16, 16.0, 2)


@pytest.fixture
def smooth_field(grid3d, rng):
    return random_field(grid3d, rng, band=3.0)


def rel(a, b):
    """Relative difference with a floor on the denominator."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def focused_field(grid, rng, band, center=None):
    """Band-limited field with random positive amplitudes, all in phase at ``center``.

    Such data concentrate at one point and nearly saturate Bernstein and
    Strichartz bounds, unlike random-phase data.
    """
    from wiener_nlw.grid import Field

    if center is None:
        center = rng.uniform(-grid.box_length / 2, grid.box_length / 2, grid.dim)
    xi = grid.wavevectors()
    amp = rng.uniform(0.5, 1.5, grid.spectral_shape) * (grid.kmag() <= band) * grid.nyquist_mask()
    c = amp * np.exp(-1j * sum(x * c0 for x, c0 in zip(xi, center)))
    return Field.from_physical(grid, grid.to_physical(c))


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def verdict():
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    def record(k: int, ok: bool, detail: str) -> bool:
        line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[k] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
