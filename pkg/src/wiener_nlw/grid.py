"""Periodic-box discretisation, Fourier multipliers and basic norms.

The box is ``[-L/2, L/2)^d`` sampled with ``n`` points per axis.  Spectral
data are stored in the ``rfftn`` layout (last axis halved) and are the true
Fourier-series coefficients ``c_k`` of ``u(x) = sum_k c_k exp(i xi_k . x)``,
i.e. the forward transform carries the ``1/n^d`` factor and the phase of the
box origin is removed.  Physical-space norms use the cell volume as
quadrature weight, so ``||u||_{L^2}^2 = V sum_k |c_k|^2`` with ``V = L^d``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Sequence

import numpy as np
import scipy.fft as sfft

__all__ = [
    "GridSpec",
    "Field",
    "ComplexField",
    "FieldPair",
    "Multiplier",
    "InvalidParameter",
    "CubeOutOfRange",
    "UndefinedNorm",
    "GridMismatch",
    "make_grid",
    "lp_bump",
    "lp_symbol",
    "cube_bump_1d",
    "littlewood_paley",
    "littlewood_paley_project",
    "cube_multiplier",
    "cube_project",
    "bessel",
    "homogeneous",
    "sobolev_norm",
    "lebesgue_norm",
    "random_field",
    "dyadic_range",
]


class InvalidParameter(ValueError):
    pass


class CubeOutOfRange(ValueError):
    pass


class UndefinedNorm(ValueError):
    pass


class GridMismatch(ValueError):
    pass


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    """Geometry of the periodic box and its frequency lattice."""

    dim: int
    points_per_axis: int
    box_length: float
    dealias_ratio: float = 1.0

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise InvalidParameter(f"dim must be 1, 2 or 3, got {self.dim}")
        n = self.points_per_axis
        if not isinstance(n, (int, np.integer)) or n < 8 or not _is_power_of_two(int(n)):
            raise InvalidParameter(
                f"points_per_axis must be a power of two >= 8, got {n}")
        if not (self.box_length > 0 and math.isfinite(self.box_length)):
            raise InvalidParameter(f"box_length must be positive, got {self.box_length}")
        if not self.dealias_ratio >= 1:
            raise InvalidParameter(f"dealias_ratio must be >= 1, got {self.dealias_ratio}")

    # -- geometry -------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_axis,) * self.dim

    @property
    def spectral_shape(self) -> tuple[int, ...]:
        n = self.points_per_axis
        return (n,) * (self.dim - 1) + (n // 2 + 1,)

    @property
    def spacing(self) -> float:
        return self.box_length / self.points_per_axis

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dim

    @property
    def volume(self) -> float:
        return self.box_length ** self.dim

    @property
    def frequency_spacing(self) -> float:
        return 2 * np.pi / self.box_length

    @property
    def band_limit(self) -> float:
        """Largest resolved frequency per axis (the Nyquist frequency)."""
        return self.frequency_spacing * (self.points_per_axis // 2)

    @property
    def max_frequency(self) -> float:
        """Largest Euclidean |xi| on the lattice."""
        return self.band_limit * math.sqrt(self.dim)

    @property
    def padded_points(self) -> int:
        m = int(round(self.dealias_ratio * self.points_per_axis))
        return m + (m % 2)

    def coordinates(self) -> tuple[np.ndarray, ...]:
        x = -self.box_length / 2 + self.spacing * np.arange(self.points_per_axis)
        return tuple(np.meshgrid(*([x] * self.dim), indexing="ij", sparse=True))

    # -- frequencies ----------------------------------------------------
    def axis_indices(self, full: bool = False) -> list[np.ndarray]:
        """Integer mode numbers per axis (fft ordering)."""
        n = self.points_per_axis
        k = np.fft.fftfreq(n, 1.0 / n)
        idx = [k] * self.dim
        if not full:
            idx[-1] = np.fft.rfftfreq(n, 1.0 / n)
        return idx

    def wavevectors(self, full: bool = False) -> tuple[np.ndarray, ...]:
        """Sparse broadcastable arrays of the lattice frequencies xi_i."""
        ax = [self.frequency_spacing * k for k in self.axis_indices(full)]
        return tuple(np.meshgrid(*ax, indexing="ij", sparse=True))

    def kmag(self, full: bool = False) -> np.ndarray:
        xi = self.wavevectors(full)
        return np.sqrt(sum(x * x for x in xi))

    def parseval_weights(self) -> np.ndarray:
        """Multiplicity of each rfft-layout coefficient in the full spectrum."""
        n = self.points_per_axis
        w = np.full(n // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        return w.reshape((1,) * (self.dim - 1) + (-1,))

    def nyquist_mask(self, full: bool = False) -> np.ndarray:
        """True on coefficients with |k_i| < n/2 for every axis."""
        n = self.points_per_axis
        masks = [np.abs(k) < n // 2 for k in self.axis_indices(full)]
        out = masks[0].reshape((-1,) + (1,) * (self.dim - 1))
        for i, m in enumerate(masks[1:], start=1):
            out = out & m.reshape((1,) * i + (-1,) + (1,) * (self.dim - 1 - i))
        return out

    def _origin_phase(self, full: bool = False, n: int | None = None) -> np.ndarray:
        # exp(-i xi_k x_0) with x_0 = -L/2 is (-1)^(k_1 + ... + k_d)
        n = self.points_per_axis if n is None else n
        ks = [np.fft.fftfreq(n, 1.0 / n)] * self.dim
        if not full:
            ks[-1] = np.fft.rfftfreq(n, 1.0 / n)
        grids = np.meshgrid(*[np.asarray(k, dtype=np.int64) for k in ks],
                            indexing="ij", sparse=True)
        return np.where(sum(grids) % 2 == 0, 1.0, -1.0)

    # -- transforms -----------------------------------------------------
    def to_spectral(self, u: np.ndarray) -> np.ndarray:
        axes = tuple(range(-self.dim, 0))
        return sfft.rfftn(u, axes=axes, norm="forward") * self._phase

    def to_physical(self, c: np.ndarray) -> np.ndarray:
        axes = tuple(range(-self.dim, 0))
        return sfft.irfftn(c * self._phase, s=self.shape, axes=axes, norm="forward")

    def to_spectral_full(self, u: np.ndarray) -> np.ndarray:
        axes = tuple(range(-self.dim, 0))
        return sfft.fftn(u, axes=axes, norm="forward") * self._phase_full

    def to_physical_full(self, c: np.ndarray) -> np.ndarray:
        axes = tuple(range(-self.dim, 0))
        return sfft.ifftn(c * self._phase_full, axes=axes, norm="forward")

    @property
    def _phase(self) -> np.ndarray:
        return _cached(self, "phase", lambda: self._origin_phase())

    @property
    def _phase_full(self) -> np.ndarray:
        return _cached(self, "phase_full", lambda: self._origin_phase(full=True))

    # -- dealiased evaluation ------------------------------------------
    def pad(self, c: np.ndarray) -> np.ndarray:
        """Zero-pad rfft-layout coefficients onto the ``padded_points`` grid.

        Nyquist coefficients are dropped.
        """
        n, m, d = self.points_per_axis, self.padded_points, self.dim
        h = n // 2
        lead = c.shape[: c.ndim - d]
        out = np.zeros(lead + (m,) * (d - 1) + (m // 2 + 1,), dtype=complex)
        src = [slice(None)] * len(lead)
        pieces = [[(slice(0, h), slice(0, h)), (slice(n - h + 1, n), slice(m - h + 1, m))]] * (d - 1)
        pieces = pieces + [[(slice(0, h), slice(0, h))]]
        for combo in _product(pieces):
            s_src = tuple(src + [p[0] for p in combo])
            s_dst = tuple(src + [p[1] for p in combo])
            out[s_dst] = c[s_src]
        return out

    def unpad(self, c: np.ndarray) -> np.ndarray:
        """Restrict padded rfft-layout coefficients to the base grid (Nyquist zeroed)."""
        n, m, d = self.points_per_axis, self.padded_points, self.dim
        h = n // 2
        lead = c.shape[: c.ndim - d]
        out = np.zeros(lead + self.spectral_shape, dtype=complex)
        src = [slice(None)] * len(lead)
        pieces = [[(slice(0, h), slice(0, h)), (slice(n - h + 1, n), slice(m - h + 1, m))]] * (d - 1)
        pieces = pieces + [[(slice(0, h), slice(0, h))]]
        for combo in _product(pieces):
            s_dst = tuple(src + [p[0] for p in combo])
            s_src = tuple(src + [p[1] for p in combo])
            out[s_dst] = c[s_src]
        return out

    def padded_physical(self, c: np.ndarray) -> np.ndarray:
        m = self.padded_points
        axes = tuple(range(-self.dim, 0))
        ph = _cached(self, "phase_pad", lambda: self._origin_phase(n=m))
        return sfft.irfftn(self.pad(c) * ph, s=(m,) * self.dim, axes=axes, norm="forward")

    def padded_spectral(self, u: np.ndarray) -> np.ndarray:
        m = self.padded_points
        axes = tuple(range(-self.dim, 0))
        ph = _cached(self, "phase_pad", lambda: self._origin_phase(n=m))
        return self.unpad(sfft.rfftn(u, axes=axes, norm="forward") * ph)

    def dealiased_product(self, *coeffs: np.ndarray) -> np.ndarray:
        """Spectral coefficients of the pointwise product of band-limited fields."""
        prod = self.padded_physical(coeffs[0])
        for c in coeffs[1:]:
            prod = prod * self.padded_physical(c)
        return self.padded_spectral(prod)


_CACHE: dict = {}


def _cached(grid: GridSpec, key: str, build: Callable[[], np.ndarray]) -> np.ndarray:
    k = (grid, key)
    if k not in _CACHE:
        _CACHE[k] = build()
    return _CACHE[k]


def _product(lists):
    if not lists:
        yield ()
        return
    for head in lists[0]:
        for tail in _product(lists[1:]):
            yield (head,) + tail


def make_grid(dim: int, points_per_axis: int, box_length: float,
              dealias_ratio: float = 1.0) -> GridSpec:
    return GridSpec(int(dim), int(points_per_axis), float(box_length), float(dealias_ratio))


# ----------------------------------------------------------------------
# Fields
# ----------------------------------------------------------------------
class Field:
    """A real scalar field held in physical and/or spectral representation."""

    __slots__ = ("grid", "_physical", "_spectral")

    def __init__(self, grid: GridSpec, physical: np.ndarray | None = None,
                 spectral: np.ndarray | None = None):
        if physical is None and spectral is None:
            raise InvalidParameter("a Field needs physical or spectral data")
        self.grid = grid
        self._physical = None if physical is None else np.asarray(physical, dtype=float)
        self._spectral = None if spectral is None else np.asarray(spectral, dtype=complex)
        if self._physical is not None and self._physical.shape != grid.shape:
            raise GridMismatch(f"physical shape {self._physical.shape} != {grid.shape}")
        if self._spectral is not None and self._spectral.shape != grid.spectral_shape:
            raise GridMismatch(
                f"spectral shape {self._spectral.shape} != {grid.spectral_shape}")

    @classmethod
    def from_physical(cls, grid: GridSpec, u) -> "Field":
        return cls(grid, physical=np.asarray(u, dtype=float))

    @classmethod
    def from_spectral(cls, grid: GridSpec, c) -> "Field":
        return cls(grid, spectral=c)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "Field":
        return cls(grid, spectral=np.zeros(grid.spectral_shape, dtype=complex))

    @property
    def physical(self) -> np.ndarray:
        if self._physical is None:
            self._physical = self.grid.to_physical(self._spectral)
        return self._physical

    @property
    def spectral(self) -> np.ndarray:
        if self._spectral is None:
            self._spectral = self.grid.to_spectral(self._physical)
        return self._spectral

    @property
    def is_physical_current(self) -> bool:
        return self._physical is not None

    @property
    def is_spectral_current(self) -> bool:
        return self._spectral is not None

    def apply(self, multiplier: "Multiplier") -> "Field":
        return Field(self.grid, spectral=self.spectral * multiplier.values(self.grid))

    def _check(self, other: "Field"):
        if other.grid != self.grid:
            raise GridMismatch("fields live on different grids")

    def __add__(self, other: "Field") -> "Field":
        self._check(other)
        return Field(self.grid, spectral=self.spectral + other.spectral)

    def __sub__(self, other: "Field") -> "Field":
        self._check(other)
        return Field(self.grid, spectral=self.spectral - other.spectral)

    def __mul__(self, a: float) -> "Field":
        return Field(self.grid, spectral=self.spectral * a)

    __rmul__ = __mul__

    def __neg__(self) -> "Field":
        return Field(self.grid, spectral=-self.spectral)

    def inner(self, other: "Field") -> float:
        """L^2 inner product (via Parseval)."""
        self._check(other)
        w = self.grid.parseval_weights()
        return float(self.grid.volume * np.sum(w * (self.spectral * other.spectral.conj()).real))

    def __repr__(self):
        return f"Field(grid={self.grid!r})"


class ComplexField:
    """Complex field in the full ``fftn`` layout; output of half-wave propagators."""

    __slots__ = ("grid", "_physical", "_spectral")

    def __init__(self, grid: GridSpec, physical=None, spectral=None):
        self.grid = grid
        self._physical = None if physical is None else np.asarray(physical, dtype=complex)
        self._spectral = None if spectral is None else np.asarray(spectral, dtype=complex)

    @classmethod
    def from_field(cls, f: Field) -> "ComplexField":
        return cls(f.grid, spectral=f.grid.to_spectral_full(f.physical))

    @property
    def physical(self) -> np.ndarray:
        if self._physical is None:
            self._physical = self.grid.to_physical_full(self._spectral)
        return self._physical

    @property
    def spectral(self) -> np.ndarray:
        if self._spectral is None:
            self._spectral = self.grid.to_spectral_full(self._physical)
        return self._spectral

    def apply(self, multiplier: "Multiplier") -> "ComplexField":
        return ComplexField(self.grid, spectral=self.spectral * multiplier.values(self.grid, full=True))

    def __add__(self, other):
        return ComplexField(self.grid, spectral=self.spectral + _as_full(other))

    def __sub__(self, other):
        return ComplexField(self.grid, spectral=self.spectral - _as_full(other))

    def __mul__(self, a):
        return ComplexField(self.grid, spectral=self.spectral * a)

    __rmul__ = __mul__

    def real(self) -> Field:
        return Field.from_physical(self.grid, self.physical.real)

    def inner(self, other) -> complex:
        """Hermitian L^2 inner product."""
        return complex(self.grid.volume * np.vdot(_as_full(other), self.spectral))


def _as_full(f) -> np.ndarray:
    if isinstance(f, ComplexField):
        return f.spectral
    return f.grid.to_spectral_full(f.physical)


@dataclass
class FieldPair:
    """A state ``(u, du/dt)``."""

    position: Field
    velocity: Field

    def __post_init__(self):
        if self.position.grid != self.velocity.grid:
            raise GridMismatch("position and velocity must share a grid")

    @property
    def grid(self) -> GridSpec:
        return self.position.grid

    @classmethod
    def zeros(cls, grid: GridSpec) -> "FieldPair":
        return cls(Field.zeros(grid), Field.zeros(grid))

    def __add__(self, other: "FieldPair") -> "FieldPair":
        return FieldPair(self.position + other.position, self.velocity + other.velocity)

    def __sub__(self, other: "FieldPair") -> "FieldPair":
        return FieldPair(self.position - other.position, self.velocity - other.velocity)

    def __mul__(self, a: float) -> "FieldPair":
        return FieldPair(self.position * a, self.velocity * a)

    __rmul__ = __mul__

    def apply(self, multiplier: "Multiplier") -> "FieldPair":
        return FieldPair(self.position.apply(multiplier), self.velocity.apply(multiplier))

    def energy_norm(self, s: float = 1.0, homogeneous: bool = False) -> float:
        """Norm in H^s x H^{s-1} (or the homogeneous version)."""
        a = sobolev_norm(self.position, s, homogeneous)
        b = sobolev_norm(self.velocity, s - 1, homogeneous)
        return math.hypot(a, b)


# ----------------------------------------------------------------------
# Multipliers
# ----------------------------------------------------------------------
@dataclass(eq=False)
class Multiplier:
    """A Fourier multiplier given by a symbol ``m(xi_1, ..., xi_d)``."""

    symbol: Callable[..., np.ndarray]
    descriptor: str
    _cache: dict = dc_field(default_factory=dict, repr=False)

    def values(self, grid: GridSpec, full: bool = False) -> np.ndarray:
        key = (grid, full)
        if key not in self._cache:
            xi = grid.wavevectors(full)
            shape = grid.shape if full else grid.spectral_shape
            self._cache[key] = np.broadcast_to(self.symbol(*xi), shape)
        return self._cache[key]

    def __matmul__(self, other: "Multiplier") -> "Multiplier":
        a, b = self.symbol, other.symbol
        return Multiplier(lambda *xi: a(*xi) * b(*xi), f"{self.descriptor}*{other.descriptor}")


def _norm(*xi) -> np.ndarray:
    return np.sqrt(sum(x * x for x in xi))


def _smooth_step(x: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for x <= 0, 1 for x >= 1."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        f = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        y = 1.0 - x
        g = np.where(y > 0, np.exp(-1.0 / np.where(y > 0, y, 1.0)), 0.0)
    return f / (f + g)


def lp_bump(r) -> np.ndarray:
    """Radial bump equal to 1 on [0, 5/4] and vanishing beyond 8/5."""
    r = np.abs(np.asarray(r, dtype=float))
    return _smooth_step((1.6 - r) / (1.6 - 1.25))


def lp_symbol(k: np.ndarray, N: int, mode: str = "exact") -> np.ndarray:
    """Littlewood-Paley symbol evaluated at |xi| = k."""
    _check_dyadic(N)
    if mode == "exact":
        if N == 1:
            return lp_bump(k)
        return lp_bump(k / N) - lp_bump(2 * k / N)
    if mode == "at-most":
        return lp_bump(k / N)
    if mode == "at-least":
        if N == 1:
            return np.ones_like(np.asarray(k, dtype=float))
        return 1.0 - lp_bump(2 * k / N)
    raise InvalidParameter(f"unknown Littlewood-Paley mode {mode!r}")


def _check_dyadic(N):
    if not (isinstance(N, (int, np.integer)) and N >= 1 and _is_power_of_two(int(N))):
        raise InvalidParameter(f"N must be a dyadic integer >= 1, got {N}")


def dyadic_range(k_max: float) -> list[int]:
    """Dyadic N = 1, 2, 4, ... whose exact-N pieces cover |xi| <= k_max."""
    out = [1]
    while 1.25 * out[-1] < k_max:
        out.append(out[-1] * 2)
    return out


def littlewood_paley(N: int, mode: str = "exact") -> Multiplier:
    mode = _lp_mode(mode)
    _check_dyadic(N)
    return Multiplier(lambda *xi: lp_symbol(_norm(*xi), N, mode), f"lp[{mode},{N}]")


def _lp_mode(mode: str) -> str:
    aliases = {"exact-N": "exact", "at-most-N": "at-most", "at-least-N": "at-least"}
    return aliases.get(mode, mode)


def littlewood_paley_project(field: Field, N: int, mode: str = "exact") -> Field:
    return field.apply(littlewood_paley(N, mode))


def _cube_bump_raw(t):
    t = np.asarray(t, dtype=float)
    inside = np.abs(t) < 1
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(inside, np.exp(-1.0 / np.where(inside, 1 - t * t, 1.0)), 0.0)


def cube_bump_1d(t) -> np.ndarray:
    """One-dimensional factor of the smooth cube cutoff.

    ``b(t) / sum_m b(t - m)`` with ``b(t) = exp(-1/(1-t^2))`` on (-1, 1); the
    integer translates sum to one exactly.
    """
    t = np.asarray(t, dtype=float)
    frac = t - np.floor(t)
    denom = _cube_bump_raw(frac) + _cube_bump_raw(frac - 1.0)
    return _cube_bump_raw(t) / denom


def sharp_cube_index(xi) -> np.ndarray:
    """Cube containing xi: ``sign(xi) floor(|xi| + 1/2)``, ties sent away from zero.

    The symmetric tie rule keeps cube(-xi) = -cube(xi), which realness needs.
    """
    xi = np.asarray(xi, dtype=float)
    return (np.sign(xi) * np.floor(np.abs(xi) + 0.5 + 1e-12)).astype(np.int64)


def _cube_factor(xi_i: np.ndarray, n_i: int, cutoff: str) -> np.ndarray:
    if cutoff == "smooth-psi":
        return cube_bump_1d(xi_i - n_i)
    if cutoff == "sharp-indicator":
        return (sharp_cube_index(xi_i) == n_i).astype(float)
    raise InvalidParameter(f"unknown cutoff {cutoff!r}")


def cube_multiplier(n: Sequence[int], cutoff: str = "smooth-psi") -> Multiplier:
    n = tuple(int(v) for v in n)

    def symbol(*xi):
        out = _cube_factor(xi[0], n[0], cutoff)
        for x, ni in zip(xi[1:], n[1:]):
            out = out * _cube_factor(x, ni, cutoff)
        return out

    return Multiplier(symbol, f"cube[{cutoff},{n}]")


def axis_cubes(grid: GridSpec, cutoff: str = "smooth-psi") -> np.ndarray:
    """Integer cube centres along one axis that see at least one lattice mode."""
    h = grid.points_per_axis // 2
    # symmetric frequency set so that the cube list is closed under n -> -n
    xi = grid.frequency_spacing * np.arange(-h, h + 1)
    bound = math.ceil(grid.band_limit) + 1
    cand = np.arange(-bound, bound + 1)
    keep = [m for m in cand if np.any(_cube_factor(xi, int(m), cutoff) > 0)]
    return np.array(keep, dtype=np.int64)


def cube_project(field: Field, n: Sequence[int], cutoff: str = "smooth-psi") -> ComplexField:
    """Frequency restriction to the cube around n.

    The symbol psi(xi - n) is even only for n = 0, so the projection of a real
    field is complex in general; use ``.real()`` when n = 0.
    """
    n = tuple(int(v) for v in n)
    if len(n) != field.grid.dim:
        raise CubeOutOfRange(f"cube index {n} has wrong dimension")
    active = axis_cubes(field.grid, cutoff)
    if any(v not in active for v in n):
        raise CubeOutOfRange(f"cube {n} contains no lattice frequency")
    return ComplexField.from_field(field).apply(cube_multiplier(n, cutoff))


def bessel(s: float) -> Multiplier:
    """<xi>^s = (1 + |xi|^2)^(s/2)."""
    return Multiplier(lambda *xi: (1.0 + sum(x * x for x in xi)) ** (s / 2), f"bessel[{s}]")


def homogeneous(s: float) -> Multiplier:
    """|xi|^s, set to zero at xi = 0."""
    def symbol(*xi):
        k = _norm(*xi)
        with np.errstate(divide="ignore"):
            return np.where(k > 0, np.where(k > 0, k, 1.0) ** s, 0.0)
    return Multiplier(symbol, f"homogeneous[{s}]")


# ----------------------------------------------------------------------
# Norms
# ----------------------------------------------------------------------
def spectral_l2_sq(grid: GridSpec, c: np.ndarray, weight: np.ndarray | None = None) -> np.ndarray:
    """V * sum_k w_k |c_k|^2 over the trailing grid axes (batched)."""
    p = np.abs(c) ** 2 * grid.parseval_weights()
    if weight is not None:
        p = p * weight
    axes = tuple(range(-grid.dim, 0))
    return grid.volume * p.sum(axis=axes)


def sobolev_norm(field: Field, s: float, homogeneous: bool = False) -> float:
    grid = field.grid
    c = field.spectral
    k = grid.kmag()
    if homogeneous:
        zero = c.flat[0]
        if s < 0 and abs(zero) > 0:
            raise UndefinedNorm("homogeneous norm with s < 0 needs a vanishing zero mode")
        with np.errstate(divide="ignore"):
            w = np.where(k > 0, np.where(k > 0, k, 1.0) ** (2 * s), 0.0 if s != 0 else 1.0)
    else:
        w = (1.0 + k * k) ** s
    return float(np.sqrt(spectral_l2_sq(grid, c, w)))


def lebesgue_norm(field, r: float) -> float:
    u = np.abs(field.physical)
    return _lebesgue(u, r, field.grid.cell_volume)


def _lebesgue(u: np.ndarray, r: float, cell: float) -> float:
    if r == np.inf:
        return float(u.max()) if u.size else 0.0
    if r < 1:
        raise InvalidParameter("r must lie in [1, inf]")
    m = float(u.max())
    if m == 0:
        return 0.0
    # scaled to avoid overflow for large r
    return m * float((np.sum((u / m) ** r) * cell) ** (1.0 / r))


def batched_lebesgue(u: np.ndarray, r: float, grid: GridSpec) -> np.ndarray:
    """L^r norms over the trailing grid axes of a stack of physical fields."""
    axes = tuple(range(-grid.dim, 0))
    a = np.abs(u)
    m = a.max(axis=axes)
    if r == np.inf:
        return m
    safe = np.where(m > 0, m, 1.0)
    scaled = a / safe.reshape(safe.shape + (1,) * grid.dim)
    if r == 2:
        s = np.sum(scaled * scaled, axis=axes)
    elif float(r).is_integer() and r <= 12:
        s = np.sum(scaled ** int(r), axis=axes)
    else:
        s = np.sum(scaled ** r, axis=axes)
    return np.where(m > 0, safe * (s * grid.cell_volume) ** (1.0 / r), 0.0)


def random_field(grid: GridSpec, rng: np.random.Generator, band: float | None = None,
                 decay: float = 0.0) -> Field:
    """Random real field with Nyquist modes removed (and optional band limit)."""
    shape = grid.spectral_shape
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    k = grid.kmag()
    c = c * (1.0 + k * k) ** (-decay / 2)
    c = c * grid.nyquist_mask()
    if band is not None:
        c = c * (k <= band)
    # projecting through physical space enforces Hermitian symmetry of the stored half
    u = grid.to_physical(c)
    return Field.from_spectral(grid, grid.to_spectral(u) * grid.nyquist_mask())
