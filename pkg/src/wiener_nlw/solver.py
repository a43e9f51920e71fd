"""Defocusing quintic wave equation and its perturbed form.

Both equations are advanced with Lawson's integrating-factor RK4: the linear
wave flow is applied exactly through its Fourier symbols and only the
quintic term is integrated numerically.  For the perturbed equation

    v_tt - lap v + (v + z)^5 = 0,   z(t) = S(t)(u0, u1)

the stage values of ``z`` are evaluated exactly, which makes ``u = z + v``
stage-for-stage identical to integrating the full equation for ``u``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path
from typing import Callable, Union

import numpy as np
from scipy.interpolate import CubicSpline

from .grid import (
    Field,
    FieldPair,
    GridSpec,
    InvalidParameter,
    littlewood_paley,
    make_grid,
    spectral_l2_sq,
)
from .propagator import linear_flow_spectral, wave_symbols

__all__ = [
    "SolverConfig",
    "Trajectory",
    "EnergyComponents",
    "EnergyTrace",
    "BlowupError",
    "IncompatibleScale",
    "LinearForcing",
    "TrajectoryForcing",
    "energy",
    "energy_trace",
    "energy_norm_trace",
    "evolve_nlw",
    "evolve_perturbed",
    "truncate_data",
    "nonlinearity_split",
    "split_energy_terms",
    "scaling_transform",
]


class BlowupError(FloatingPointError):
    """Non-finite values in the discrete solution (time step too large)."""

    def __init__(self, time: float):
        super().__init__(f"nan-detected at t={time:.6g}")
        self.time = time


class IncompatibleScale(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    scheme: str = "integrating-factor-rk4"
    snapshot_stride: int = 1
    nonlinear: bool = True
    spectral_filter: bool | None = None   # None: on for d = 3 with padding below 3

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidParameter("dt must be positive")
        if self.scheme != "integrating-factor-rk4":
            raise InvalidParameter(f"unknown scheme {self.scheme!r}")
        if self.snapshot_stride < 1:
            raise InvalidParameter("snapshot_stride must be >= 1")

    def check_grid(self, grid: GridSpec):
        if self.dt > 0.5 * grid.spacing * (1 + 1e-12):
            raise InvalidParameter(
                f"dt={self.dt} exceeds half the grid spacing {0.5 * grid.spacing:.4g}")

    def filter_enabled(self, grid: GridSpec) -> bool:
        if self.spectral_filter is None:
            return grid.dim == 3 and grid.dealias_ratio < 3
        return bool(self.spectral_filter)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Trajectory:
    """Snapshots of ``(u, u_t)`` in spectral form, aligned with ``times``."""

    grid: GridSpec
    times: np.ndarray
    positions: np.ndarray     # (S, *spectral_shape)
    velocities: np.ndarray
    metadata: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1 or np.any(np.diff(self.times) <= 0):
            raise InvalidParameter("trajectory times must be strictly increasing")
        if self.positions.shape != (len(self.times),) + self.grid.spectral_shape:
            raise InvalidParameter("snapshot array does not match times/grid")

    def __len__(self) -> int:
        return len(self.times)

    def snapshot(self, i: int) -> FieldPair:
        return FieldPair(Field.from_spectral(self.grid, self.positions[i]),
                         Field.from_spectral(self.grid, self.velocities[i]))

    @property
    def final(self) -> FieldPair:
        return self.snapshot(-1)

    def physical_positions(self) -> np.ndarray:
        return self.grid.to_physical(self.positions)

    def __sub__(self, other: "Trajectory") -> "Trajectory":
        if other.grid != self.grid or not np.array_equal(other.times, self.times):
            raise InvalidParameter("trajectories must share grid and times")
        return Trajectory(self.grid, self.times, self.positions - other.positions,
                          self.velocities - other.velocities, {"source": "difference"})

    def __add__(self, other: "Trajectory") -> "Trajectory":
        if other.grid != self.grid or not np.array_equal(other.times, self.times):
            raise InvalidParameter("trajectories must share grid and times")
        return Trajectory(self.grid, self.times, self.positions + other.positions,
                          self.velocities + other.velocities, {"source": "sum"})

    # -- binary container -----------------------------------------------
    def save(self, path) -> None:
        g = self.grid
        header = {
            "grid": {"dim": g.dim, "points_per_axis": g.points_per_axis,
                     "box_length": g.box_length, "dealias_ratio": g.dealias_ratio},
            "config_hash": self.metadata.get("config_hash", ""),
            "metadata": _jsonable(self.metadata),
        }
        with open(path, "wb") as fh:
            np.savez(fh, header=np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8),
                     times=self.times, positions=self.positions, velocities=self.velocities)

    @classmethod
    def load(cls, path) -> "Trajectory":
        with np.load(path) as z:
            header = json.loads(z["header"].tobytes().decode())
            return cls(make_grid(**header["grid"]), z["times"], z["positions"],
                       z["velocities"], header["metadata"])


def _jsonable(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, (str, int, float, bool)) or v is None:
            out[k] = v
        elif isinstance(v, dict):
            out[k] = _jsonable(v)
        else:
            out[k] = str(v)
    return out


# ----------------------------------------------------------------------
# Energy
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class EnergyComponents:
    kinetic: float
    gradient: float
    potential: float

    @property
    def total(self) -> float:
        return self.kinetic + self.gradient + self.potential


@dataclass
class EnergyTrace:
    times: np.ndarray
    kinetic: np.ndarray
    gradient: np.ndarray
    potential: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.kinetic + self.gradient + self.potential

    def relative_drift(self) -> float:
        tot = self.total
        return float(np.max(np.abs(tot - tot[0])) / abs(tot[0]))


def _energy_arrays(grid: GridSpec, u: np.ndarray, ut: np.ndarray, dealiased: bool):
    k = grid.kmag()
    kin = 0.5 * spectral_l2_sq(grid, ut)
    grad = 0.5 * spectral_l2_sq(grid, u, k * k)
    axes = tuple(range(-grid.dim, 0))
    if dealiased:
        to_phys, m = grid.padded_physical, grid.padded_points
    else:
        to_phys, m = grid.to_physical, grid.points_per_axis
    cell = (grid.box_length / m) ** grid.dim
    if u.ndim == grid.dim:
        return kin, grad, np.sum(to_phys(u) ** 6) * cell / 6.0
    # bound the padded working set to about 64 MB per batch
    step = max(1, (1 << 23) // m ** grid.dim)
    pot = np.concatenate([np.sum(to_phys(u[i:i + step]) ** 6, axis=axes)
                          for i in range(0, len(u), step)]) * cell / 6.0
    return kin, grad, pot


def energy(pair: FieldPair, dealiased: bool = True) -> EnergyComponents:
    """Kinetic, gradient and potential parts of the conserved energy.

    The u^6 integral is a quadrature on the padded grid when ``dealiased``
    (the quantity the dealiased scheme conserves), else on the base grid.
    """
    grid = pair.grid
    kin, grad, pot = _energy_arrays(grid, pair.position.spectral, pair.velocity.spectral, dealiased)
    return EnergyComponents(float(kin), float(grad), float(pot))


def energy_trace(traj: Trajectory, dealiased: bool = True) -> EnergyTrace:
    kin, grad, pot = _energy_arrays(traj.grid, traj.positions, traj.velocities, dealiased)
    return EnergyTrace(traj.times.copy(), kin, grad, pot)


def energy_norm_trace(traj: Trajectory, homogeneous: bool = False) -> np.ndarray:
    """||(u(t), u_t(t))||_{H^1 x L^2} (or its homogeneous version) per snapshot."""
    grid = traj.grid
    k2 = grid.kmag() ** 2
    w = k2 if homogeneous else 1.0 + k2
    return np.sqrt(spectral_l2_sq(grid, traj.positions, w) + spectral_l2_sq(grid, traj.velocities))


# ----------------------------------------------------------------------
# Forcings
# ----------------------------------------------------------------------
class LinearForcing:
    """z(t) = S(t)(u0, u1), evaluated exactly at any time."""

    def __init__(self, pair: FieldPair):
        self.grid = pair.grid
        self.a = pair.position.spectral * self.grid.nyquist_mask()
        self.b = pair.velocity.spectral * self.grid.nyquist_mask()
        self._k = self.grid.kmag()
        self._memo: dict[float, np.ndarray] = {}

    def __call__(self, t: float) -> np.ndarray:
        hit = self._memo.get(t)
        if hit is None:
            c, s, _ = wave_symbols(self._k, t)
            hit = c * self.a + s * self.b
            if len(self._memo) > 4:
                self._memo.pop(next(iter(self._memo)))
            self._memo[t] = hit
        return hit

    def trajectory(self, times) -> Trajectory:
        u, ut = linear_flow_spectral(self.grid, self.a, self.b, np.asarray(times, dtype=float))
        return Trajectory(self.grid, times, u, ut, {"source": "linear"})

    descriptor = "linear"


class TrajectoryForcing:
    """Cubic-spline interpolation in time of a stored trajectory's position."""

    def __init__(self, traj: Trajectory):
        self.grid = traj.grid
        self._spline = CubicSpline(traj.times, traj.positions, axis=0)
        self.span = (traj.times[0], traj.times[-1])

    def __call__(self, t: float) -> np.ndarray:
        return self._spline(t)

    descriptor = "interpolated-trajectory"


Forcing = Union[LinearForcing, TrajectoryForcing, Callable[[float], np.ndarray]]


# ----------------------------------------------------------------------
# Time stepping
# ----------------------------------------------------------------------
def _hou_li_filter(grid: GridSpec) -> np.ndarray:
    n = grid.points_per_axis
    out = 1.0
    for i, k in enumerate(grid.axis_indices()):
        f = np.exp(-36.0 * (np.abs(k) / (n // 2)) ** 36)
        out = out * f.reshape((1,) * i + (-1,) + (1,) * (grid.dim - 1 - i))
    return out


def _quintic(grid: GridSpec, c: np.ndarray, filt) -> np.ndarray:
    u = grid.padded_physical(c)
    with np.errstate(over="ignore", invalid="ignore"):  # caught as BlowupError
        out = grid.padded_spectral(u * u * u * u * u)
    if filt is not None:
        out = out * filt
    return out


def _integrate(grid: GridSpec, a: np.ndarray, b: np.ndarray, T: float, config: SolverConfig,
               forcing: Forcing | None, metadata: dict) -> Trajectory:
    if not T > 0:
        raise InvalidParameter("T must be positive")
    config.check_grid(grid)
    steps = max(1, int(math.ceil(T / config.dt - 1e-9)))
    h = T / steps
    k = grid.kmag()
    half = wave_symbols(k, h / 2)
    full = wave_symbols(k, h)
    ch, sh, kh = half
    c1, s1, k1s = full
    filt = _hou_li_filter(grid) if config.filter_enabled(grid) else None
    mask = grid.nyquist_mask()
    a = a * mask
    b = b * mask

    def rhs(pos, t):
        if forcing is not None:
            pos = pos + forcing(t)
        return -_quintic(grid, pos, filt)

    stride = config.snapshot_stride
    times, us, uts = [0.0], [a.copy()], [b.copy()]
    for n in range(steps):
        t = n * h
        if config.nonlinear:
            f1 = rhs(a, t)
            f2 = rhs(ch * a + sh * (b + 0.5 * h * f1), t + h / 2)
            pos3 = ch * a + sh * b
            f3 = rhs(pos3, t + h / 2)
            f4 = rhs(c1 * a + s1 * b + h * sh * f3, t + h)
            f23 = f2 + f3
            a, b = (c1 * a + s1 * b + h / 6 * (s1 * f1 + 2 * sh * f23),
                    -k1s * a + c1 * b + h / 6 * (c1 * f1 + 2 * ch * f23 + f4))
        else:
            a, b = c1 * a + s1 * b, -k1s * a + c1 * b
        if not (np.isfinite(a).all() and np.isfinite(b).all()):
            raise BlowupError((n + 1) * h)
        if (n + 1) % stride == 0 or n + 1 == steps:
            times.append((n + 1) * h)
            us.append(a.copy())
            uts.append(b.copy())
    meta = {"dt": h, "steps": steps, "config_hash": config.hash(),
            "filter": filt is not None, "padded_points": grid.padded_points}
    meta.update(metadata)
    return Trajectory(grid, np.array(times), np.array(us), np.array(uts), meta)


def evolve_nlw(data: FieldPair, T: float, config: SolverConfig) -> Trajectory:
    """Solve u_tt - lap u + u^5 = 0 from ``data`` up to time T."""
    return _integrate(data.grid, data.position.spectral, data.velocity.spectral, T, config,
                      None, {"forcing": "none", "equation": "nlw"})


def evolve_perturbed(forcing: Forcing | Trajectory | None, T: float, config: SolverConfig,
                     data: FieldPair | None = None, grid: GridSpec | None = None) -> Trajectory:
    """Solve v_tt - lap v + (v + f)^5 = 0 with v(0) = v_t(0) = 0 unless ``data`` is given."""
    if isinstance(forcing, Trajectory):
        forcing = TrajectoryForcing(forcing)
    if grid is None:
        grid = data.grid if data is not None else forcing.grid
    if data is None:
        data = FieldPair.zeros(grid)
    desc = getattr(forcing, "descriptor", "callable") if forcing is not None else "zero"
    span = getattr(forcing, "span", None)
    if span is not None and T > span[1] + 1e-12:
        raise InvalidParameter("forcing trajectory does not cover [0, T]")
    return _integrate(grid, data.position.spectral, data.velocity.spectral, T, config,
                      forcing, {"forcing": desc, "equation": "perturbed"})


# ----------------------------------------------------------------------
# Data manipulation
# ----------------------------------------------------------------------
def truncate_data(pair: FieldPair, N: int, sharp: bool = False) -> FieldPair:
    """P_{<=N} applied to both components (sharp: indicator of |xi| <= N)."""
    if sharp:
        grid = pair.grid
        m = (grid.kmag() <= N).astype(float)
        return FieldPair(Field.from_spectral(grid, pair.position.spectral * m),
                         Field.from_spectral(grid, pair.velocity.spectral * m))
    return pair.apply(littlewood_paley(N, "at-most"))


def nonlinearity_split(z: Field, v: Field) -> tuple[Field, Field]:
    """(5 z v^4, 10 z^2 v^3 + 10 z^3 v^2 + 5 z^4 v + z^5), evaluated on the padded grid."""
    if z.grid != v.grid:
        raise InvalidParameter("z and v must share a grid")
    grid = z.grid
    zp = grid.padded_physical(z.spectral)
    vp = grid.padded_physical(v.spectral)
    z2, v2 = zp * zp, vp * vp
    lead = 5 * zp * v2 * v2
    rem = 10 * z2 * v2 * vp + 10 * z2 * zp * v2 + 5 * z2 * z2 * vp + z2 * z2 * zp
    return (Field.from_spectral(grid, grid.padded_spectral(lead)),
            Field.from_spectral(grid, grid.padded_spectral(rem)))


def split_energy_terms(v: Trajectory, forcing: Forcing) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative ``I(t)`` and ``II(t)`` with ``E(v)(t) - E(v)(0) = I(t) + II(t)``.

    I = -int_0^t int v_t 5 z v^4,  II = -int_0^t int v_t N(z, v), both by the
    trapezoid rule over the stored snapshots.
    """
    grid = v.grid
    cell = (grid.box_length / grid.padded_points) ** grid.dim
    axes = tuple(range(-grid.dim, 0))
    lead, rest = np.empty(len(v)), np.empty(len(v))
    for i, t in enumerate(v.times):
        zp = grid.padded_physical(forcing(t))
        vp = grid.padded_physical(v.positions[i])
        vtp = grid.padded_physical(v.velocities[i])
        z2, v2 = zp * zp, vp * vp
        lead[i] = -np.sum(vtp * 5 * zp * v2 * v2, axis=axes) * cell
        nzv = 10 * z2 * v2 * vp + 10 * z2 * zp * v2 + 5 * z2 * z2 * vp + z2 * z2 * zp
        rest[i] = -np.sum(vtp * nzv, axis=axes) * cell
    from scipy.integrate import cumulative_trapezoid
    return (cumulative_trapezoid(lead, v.times, initial=0.0),
            cumulative_trapezoid(rest, v.times, initial=0.0))


def scaling_transform(obj, lam: float, tol: float = 1e-12):
    """u -> lam^(1/2) u(lam t, lam x) for a FieldPair or a Trajectory.

    The mode numbers are unchanged; the box shrinks to L/lam and the grid to
    n/lam points, so content beyond the new band raises IncompatibleScale.
    """
    if not lam > 0:
        raise IncompatibleScale("lambda must be positive")
    grid = obj.grid
    n_new = grid.points_per_axis / lam
    if abs(n_new - round(n_new)) > 1e-9:
        raise IncompatibleScale(f"lambda={lam} does not map {grid.points_per_axis} points to an integer")
    try:
        new = make_grid(grid.dim, int(round(n_new)), grid.box_length / lam, grid.dealias_ratio)
    except InvalidParameter as exc:
        raise IncompatibleScale(str(exc)) from exc

    def remap(c: np.ndarray, factor: float) -> np.ndarray:
        lead = c.shape[: c.ndim - grid.dim]
        src_idx = grid.axis_indices()
        dst_idx = new.axis_indices()
        out = np.zeros(lead + new.spectral_shape, dtype=complex)
        m_new, m_old = new.points_per_axis // 2, grid.points_per_axis // 2
        keep = min(m_new, m_old)
        sel_src, sel_dst = [], []
        for ks, kd in zip(src_idx, dst_idx):
            common = [int(v) for v in ks if abs(v) < keep]
            pos_s = {int(v): i for i, v in enumerate(ks)}
            pos_d = {int(v): i for i, v in enumerate(kd)}
            sel_src.append(np.array([pos_s[v] for v in common]))
            sel_dst.append(np.array([pos_d[v] for v in common]))
        src = c[(Ellipsis,) + np.ix_(*sel_src)]
        out[(Ellipsis,) + np.ix_(*sel_dst)] = factor * src
        lost = spectral_l2_sq(grid, c) - spectral_l2_sq(grid, _embed(grid, sel_src, src, lead))
        if np.any(lost > tol * (1 + spectral_l2_sq(grid, c))):
            raise IncompatibleScale("data has content outside the rescaled band")
        return out

    # c' = lam^(1/2) c for u; the time derivative picks up another lam
    if isinstance(obj, FieldPair):
        a = remap(obj.position.spectral, lam ** 0.5)
        b = remap(obj.velocity.spectral, lam ** 1.5)
        return FieldPair(Field.from_spectral(new, a), Field.from_spectral(new, b))
    if isinstance(obj, Trajectory):
        a = remap(obj.positions, lam ** 0.5)
        b = remap(obj.velocities, lam ** 1.5)
        meta = dict(obj.metadata, scaled_by=lam)
        return Trajectory(new, obj.times / lam, a, b, meta)
    raise TypeError(f"cannot rescale {type(obj).__name__}")


def _embed(grid: GridSpec, sel, values, lead) -> np.ndarray:
    out = np.zeros(lead + grid.spectral_shape, dtype=complex)
    out[(Ellipsis,) + np.ix_(*sel)] = values
    return out
