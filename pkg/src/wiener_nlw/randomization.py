"""Wiener randomisation of initial data on unit frequency cubes.

Each coefficient ``g_{n,j}`` is read from stream ``(seed, j)`` at a position
fixed by ``n`` alone (its max-norm shell rank), so the values do not depend on
the grid, on the order in which cubes are enumerated or on how an ensemble is
split between workers.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .grid import (
    Field,
    FieldPair,
    GridMismatch,
    GridSpec,
    InvalidParameter,
    axis_cubes,
    cube_bump_1d,
    sharp_cube_index,
    sobolev_norm,
)

__all__ = [
    "DistributionKind",
    "RandomCoefficients",
    "MomentReport",
    "NonSymmetricSequence",
    "in_index_set",
    "draw_cube_coefficients",
    "sample_coefficients",
    "randomization_symbol",
    "randomize_pair",
    "make_rough_pair",
    "khintchine_check",
    "member_seed",
    "shell_rank",
]


class NonSymmetricSequence(ValueError):
    pass


class DistributionKind(str, Enum):
    """Unit-variance coefficient laws; all satisfy the sub-Gaussian moment bound."""

    GAUSSIAN = "standard-gaussian-complex"
    RADEMACHER = "rademacher"
    UNIFORM_DISK = "uniform-disk"


def member_seed(master: int, *key: int) -> int:
    """Deterministic 63-bit seed derived from a master seed and an integer key."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def in_index_set(n) -> bool:
    """True when the last nonzero coordinate of ``n`` is positive."""
    for v in reversed(tuple(n)):
        if v != 0:
            return v > 0
    return False


def shell_rank(cubes) -> np.ndarray:
    """Bijection Z^d -> N ordered by max-norm shells.

    Cube ``n`` with ``m = max|n_i|`` gets a rank in
    ``[(2m-1)^d, (2m+1)^d)``, so the ranks of every cube within ``|n_i| <= R``
    form a prefix of the naturals whatever grid produced them.
    """
    n = np.atleast_2d(np.asarray(cubes, dtype=np.int64))
    d = n.shape[1]
    m = np.abs(n).max(axis=1)
    inner = np.where(m > 0, 2 * m - 1, 0)
    rank = inner ** d
    on_face = np.abs(n) == m[:, None]
    axis = np.argmax(on_face, axis=1)
    offset = np.zeros_like(m)
    within = np.zeros_like(m)
    for i in range(d):
        size = inner ** i * (2 * m + 1) ** (d - 1 - i)
        hit = (axis == i) & (m > 0)
        neg = n[:, i] < 0
        idx = np.zeros_like(m)
        for a in range(d):
            if a == i:
                continue
            radix = inner if a < i else 2 * m + 1
            digit = n[:, a] + m - 1 if a < i else n[:, a] + m
            idx = idx * radix + digit
        offset = np.where(hit, offset + neg * size, np.where(axis > i, offset + 2 * size, offset))
        within = np.where(hit, idx, within)
    return rank + np.where(m > 0, offset + within, 0)


def _stream(seed: int, j: int, d: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(j, d))))


def _draw(kind: DistributionKind, rng: np.random.Generator, count: int) -> np.ndarray:
    """``count`` complex draws; row 0 is the real zero-cube value."""
    if kind is DistributionKind.GAUSSIAN:
        x = rng.standard_normal((count, 2))
        g = (x[:, 0] + 1j * x[:, 1]) * math.sqrt(0.5)
        g[0] = x[0, 0]
    elif kind is DistributionKind.RADEMACHER:
        x = np.where(rng.random((count, 2)) < 0.5, 1.0, -1.0)
        g = (x[:, 0] + 1j * x[:, 1]) * math.sqrt(0.5)
        g[0] = x[0, 0]
    elif kind is DistributionKind.UNIFORM_DISK:
        x = rng.random((count, 2))
        g = math.sqrt(2.0) * np.sqrt(x[:, 0]) * np.exp(2j * math.pi * x[:, 1])
        g[0] = math.sqrt(3.0) * (2 * x[0, 0] - 1)
    else:
        raise InvalidParameter(f"unknown distribution {kind!r}")
    return g


def draw_cube_coefficients(cubes: np.ndarray, distribution, seed: int) -> np.ndarray:
    """Coefficients ``g_{n,j}`` (shape ``(2, len(cubes))``) for a symmetric cube list.

    Stream ``(seed, j)`` is read at position ``shell_rank(n)`` for cubes in the
    index set; ``g_{-n} = conj(g_n)`` fills the mirror image and ``g_0`` is real.
    """
    kind = DistributionKind(distribution)
    cubes = np.asarray(cubes, dtype=np.int64)
    if cubes.size == 0:
        return np.zeros((2, 0), dtype=complex)
    rank = shell_rank(cubes)
    mirror_rank = shell_rank(-cubes)
    pos = {int(r): i for i, r in enumerate(rank)}
    missing = [tuple(c) for c, r in zip(cubes, mirror_rank) if int(r) not in pos]
    if missing:
        raise NonSymmetricSequence(f"cube list lacks the mirror of {missing[0]}")
    own = np.array([in_index_set(c) or not c.any() for c in cubes])
    src = np.where(own, rank, mirror_rank)
    out = np.empty((2, len(cubes)), dtype=complex)
    for j in (0, 1):
        g = _draw(kind, _stream(seed, j, cubes.shape[1]), int(rank.max()) + 1)[src]
        out[j] = np.where(own, g, g.conj())
    return out


@dataclass
class RandomCoefficients:
    grid: GridSpec
    cubes: np.ndarray          # (K, d) integer cube centres
    values: np.ndarray         # (2, K) complex
    seed: int
    distribution: DistributionKind
    cutoff: str = "smooth-psi"

    def value(self, n, j: int = 0) -> complex:
        hit = np.flatnonzero(np.all(self.cubes == np.asarray(n), axis=1))
        if hit.size == 0:
            raise KeyError(tuple(n))
        return complex(self.values[j, hit[0]])

    def tensor(self, j: int) -> tuple[list[np.ndarray], np.ndarray]:
        """Coefficients laid out on the product of per-axis cube ranges."""
        axes = axis_cubes(self.grid, self.cutoff)
        d = self.grid.dim
        t = np.zeros((len(axes),) * d, dtype=complex)
        # cube centres need not be contiguous when the lattice spacing exceeds 1
        idx = tuple(np.searchsorted(axes, self.cubes[:, i]) for i in range(d))
        t[idx] = self.values[j]
        return [axes] * d, t

    def to_json(self) -> str:
        """Seed, law and grid fingerprint; the values are regenerated, never stored."""
        g = self.grid
        doc = {
            "seed": int(self.seed),
            "distribution": self.distribution.value,
            "cutoff": self.cutoff,
            "grid": {"dim": g.dim, "points_per_axis": g.points_per_axis,
                     "box_length": g.box_length, "dealias_ratio": g.dealias_ratio},
            "grid_hash": grid_hash(g),
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RandomCoefficients":
        doc = json.loads(text)
        from .grid import make_grid
        grid = make_grid(**doc["grid"])
        if grid_hash(grid) != doc["grid_hash"]:
            raise GridMismatch("grid hash does not match the stored grid")
        return sample_coefficients(grid, doc["distribution"], doc["seed"], doc.get("cutoff", "smooth-psi"))


def grid_hash(grid: GridSpec) -> str:
    text = f"{grid.dim}|{grid.points_per_axis}|{grid.box_length!r}|{grid.dealias_ratio!r}"
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def sample_coefficients(grid: GridSpec, distribution, seed: int,
                        cutoff: str = "smooth-psi") -> RandomCoefficients:
    axes = axis_cubes(grid, cutoff)
    mesh = np.stack(np.meshgrid(*([axes] * grid.dim), indexing="ij"), axis=-1)
    cubes = mesh.reshape(-1, grid.dim)
    values = draw_cube_coefficients(cubes, distribution, seed)
    return RandomCoefficients(grid, cubes, values, int(seed), DistributionKind(distribution), cutoff)


def _axis_matrix(grid: GridSpec, axes: np.ndarray, cutoff: str, half: bool) -> np.ndarray:
    """Rows: lattice frequencies along one axis; columns: cube centres."""
    n = grid.points_per_axis
    k = np.fft.rfftfreq(n, 1.0 / n) if half else np.fft.fftfreq(n, 1.0 / n)
    xi = grid.frequency_spacing * k
    if cutoff == "smooth-psi":
        return cube_bump_1d(xi[:, None] - axes[None, :])
    if cutoff == "sharp-indicator":
        return (sharp_cube_index(xi)[:, None] == axes[None, :]).astype(float)
    raise InvalidParameter(f"unknown cutoff {cutoff!r}")


def randomization_symbol(coeffs: RandomCoefficients, j: int, cutoff: str | None = None) -> np.ndarray:
    """sum_n g_{n,j} psi(xi - n) on the rfft lattice.

    Both cutoffs factor over axes, so the sum is a sequence of small tensor
    contractions instead of a loop over cubes.
    """
    cutoff = coeffs.cutoff if cutoff is None else cutoff
    if cutoff != coeffs.cutoff:
        raise InvalidParameter("coefficients were sampled for a different cutoff")
    grid = coeffs.grid
    (axes, *_), t = coeffs.tensor(j)
    d = grid.dim
    out = t
    for i in range(d):
        a = _axis_matrix(grid, axes, cutoff, half=(i == d - 1))
        out = np.tensordot(out, a, axes=([0], [1]))  # contracted axis moves to the end
    return out


def randomize_pair(u0: Field, u1: Field, coeffs: RandomCoefficients,
                   cutoff: str | None = None) -> FieldPair:
    if u0.grid != coeffs.grid or u1.grid != coeffs.grid:
        raise GridMismatch("data and coefficients live on different grids")
    m0 = randomization_symbol(coeffs, 0, cutoff)
    m1 = randomization_symbol(coeffs, 1, cutoff)
    a = Field.from_physical(u0.grid, u0.grid.to_physical(u0.spectral * m0))
    b = Field.from_physical(u1.grid, u1.grid.to_physical(u1.spectral * m1))
    return FieldPair(a, b)


def make_rough_pair(grid: GridSpec, s: float, profile: str = "power-law", seed: int = 0,
                    amplitude: float = 1.0, eps0: float = 0.01) -> tuple[FieldPair, float]:
    """Real pair with |u0^(xi)| ~ <xi>^(-s-d/2-eps0) and |u1^(xi)| ~ <xi>^(1-s-d/2-eps0).

    The amplitudes are those of a fixed function on R^d (the coefficient is
    the continuum transform divided by the box volume), so norms with
    regularity below ``s`` converge under grid refinement.  ``power-law``
    gives a radially symmetric profile peaked at the origin;
    ``randomized-phase-power-law`` attaches seeded Hermitian phases.
    Returns the pair and its H^s x H^(s-1) norm.
    """
    if not 0 < s < 1:
        raise InvalidParameter(f"invalid regularity s={s}; need 0 < s < 1")
    d = grid.dim
    k = grid.kmag()
    base = amplitude / grid.volume * (1.0 + k * k) ** (-(s + d / 2 + eps0) / 2)
    c0 = base.astype(complex)
    c1 = (base * (1.0 + k * k) ** 0.5).astype(complex)
    if profile == "randomized-phase-power-law":
        rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(0x5EED,)))
        for c in (c0, c1):
            full = rng.uniform(0, 2 * np.pi, grid.shape)
            # odd part of a random phase field gives theta(-xi) = -theta(xi)
            flipped = np.roll(np.flip(full), 1, axis=tuple(range(d)))
            theta = 0.5 * (full - flipped)
            theta = theta[..., : grid.points_per_axis // 2 + 1]
            c *= np.exp(1j * theta)
    elif profile != "power-law":
        raise InvalidParameter(f"unknown profile {profile!r}")
    mask = grid.nyquist_mask()
    u0 = Field.from_spectral(grid, c0 * mask)
    u1 = Field.from_spectral(grid, c1 * mask)
    # round trip through physical space so the stored half-spectrum is exactly Hermitian
    u0 = Field.from_physical(grid, u0.physical)
    u1 = Field.from_physical(grid, u1.physical)
    pair = FieldPair(u0, u1)
    return pair, pair.energy_norm(s)


@dataclass
class MomentReport:
    p: float
    moment: float
    l2: float
    ratio_l2: float       # moment / ||c||_l2
    ratio_sqrt_p: float   # moment / (sqrt(p) ||c||_l2)


def khintchine_check(samples: np.ndarray, c: np.ndarray, cubes: np.ndarray, p: float) -> MomentReport:
    """Empirical L^p(Omega) norm of sum_n g_n c_n against sqrt(p) ||c||_l2.

    ``samples`` has shape ``(M, K)`` (one row of coefficients per draw),
    ``c`` and ``cubes`` describe the deterministic sequence on the same K cubes.
    """
    samples = np.asarray(samples)
    c = np.asarray(c, dtype=complex)
    cubes = np.asarray(cubes, dtype=np.int64)
    if p < 2:
        raise InvalidParameter("p must be >= 2")
    lookup = {tuple(n): i for i, n in enumerate(cubes)}
    for i, n in enumerate(map(tuple, cubes)):
        m = lookup.get(tuple(-v for v in n))
        if m is None or abs(c[m] - np.conj(c[i])) > 1e-12 * (1 + abs(c[i])):
            raise NonSymmetricSequence(f"c is not Hermitian at cube {n}")
    l2 = float(np.sqrt(np.sum(np.abs(c) ** 2)))
    x = samples @ c
    moment = float(np.mean(np.abs(x) ** p) ** (1.0 / p))
    if l2 == 0:
        return MomentReport(p, moment, 0.0, 0.0, 0.0)
    return MomentReport(p, moment, l2, moment / l2, moment / (math.sqrt(p) * l2))
