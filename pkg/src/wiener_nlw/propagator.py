"""Exact Fourier-side propagators of the linear wave equation."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .grid import ComplexField, Field, FieldPair, GridSpec, batched_lebesgue

__all__ = [
    "PropagatorKind",
    "wave_symbols",
    "linear_propagate",
    "tilde_propagate",
    "half_wave_propagate",
    "sine_over_gradient",
    "linear_flow_spectral",
    "linear_trajectory",
    "DyadicSup",
    "dyadic_time_sup",
]


class PropagatorKind(str, Enum):
    FULL_WAVE = "full-wave-S"
    TILDE = "tilde-S"
    HALF_WAVE_PLUS = "half-wave-plus"
    HALF_WAVE_MINUS = "half-wave-minus"
    SINE_OVER_GRADIENT = "sine-over-gradient"


def sinc_t(k: np.ndarray, t) -> np.ndarray:
    """sin(t k)/k with the value t at k = 0."""
    t = np.asarray(t, dtype=float)
    return t * np.sinc(t * k / np.pi)


def wave_symbols(k: np.ndarray, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(cos(tk), sin(tk)/k, k sin(tk)) evaluated at |xi| = k.

    ``t`` may be an array; it is broadcast against leading axes.
    """
    t = np.asarray(t, dtype=float)
    tt = t.reshape(t.shape + (1,) * k.ndim)
    return np.cos(tt * k), sinc_t(k, tt), k * np.sin(tt * k)


def linear_flow_spectral(grid: GridSpec, a: np.ndarray, b: np.ndarray, t) -> tuple[np.ndarray, np.ndarray]:
    """S(t)(a, b) and its time derivative, in rfft coefficients."""
    c, s, ks = wave_symbols(grid.kmag(), t)
    return c * a + s * b, -ks * a + c * b


def linear_propagate(pair: FieldPair, t: float) -> FieldPair:
    grid = pair.grid
    u, ut = linear_flow_spectral(grid, pair.position.spectral, pair.velocity.spectral, t)
    return FieldPair(Field.from_spectral(grid, u), Field.from_spectral(grid, ut))


def tilde_symbols(k: np.ndarray, t) -> tuple[np.ndarray, np.ndarray]:
    jb = np.sqrt(1.0 + k * k)
    t = np.asarray(t, dtype=float)
    tt = t.reshape(t.shape + (1,) * k.ndim)
    return -(k / jb) * np.sin(tt * k), np.cos(tt * k) / jb


def tilde_propagate(pair: FieldPair, t: float) -> Field:
    """-(|D|/<D>) sin(t|D|) u0 + cos(t|D|)/<D> u1, so that d/dt S(t) = <D> S~(t)."""
    grid = pair.grid
    m0, m1 = tilde_symbols(grid.kmag(), t)
    return Field.from_spectral(grid, m0 * pair.position.spectral + m1 * pair.velocity.spectral)


def half_wave_propagate(field, t: float, sign: int = 1) -> ComplexField:
    """exp(+- i t |D|) applied to a real or complex field."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    grid = field.grid
    c = field.spectral if isinstance(field, ComplexField) else ComplexField.from_field(field).spectral
    return ComplexField(grid, spectral=c * np.exp(sign * 1j * t * grid.kmag(full=True)))


def sine_over_gradient(field: Field, t: float) -> Field:
    """sin(t|D|)/|D| with its limit t on the zero mode."""
    return Field.from_spectral(field.grid, sinc_t(field.grid.kmag(), t) * field.spectral)


def linear_trajectory(pair: FieldPair, times, kind: str = PropagatorKind.FULL_WAVE):
    """Free evolution sampled at ``times`` as a Trajectory.

    For ``tilde-S`` the position slot holds S~(t) and the velocity slot is zero.
    """
    from .solver import Trajectory

    grid = pair.grid
    times = np.asarray(times, dtype=float)
    a, b = pair.position.spectral, pair.velocity.spectral
    kind = PropagatorKind(kind)
    if kind is PropagatorKind.FULL_WAVE:
        u, ut = linear_flow_spectral(grid, a, b, times)
    elif kind is PropagatorKind.TILDE:
        m0, m1 = tilde_symbols(grid.kmag(), times)
        u = m0 * a + m1 * b
        ut = np.zeros_like(u)
    else:
        raise ValueError(f"trajectory not available for {kind.value}")
    return Trajectory(grid, times, u, ut, {"kind": kind.value, "source": "linear"})


@dataclass
class DyadicSup:
    sup: float
    times: np.ndarray
    norms: np.ndarray
    increments: np.ndarray   # increments[k-1] = max over level-k points, k = 1..K


def _lowbit(l: np.ndarray) -> np.ndarray:
    return l & (-l)


def dyadic_time_sup(pair: FieldPair, interval=(0.0, 1.0), depth: int = 10, r: float = 6,
                    kind: str = PropagatorKind.FULL_WAVE, increments: bool = True,
                    chunk: int = 128) -> DyadicSup:
    """Max of ||S(t) pair||_{L^r} over the dyadic points a + l (b-a) 2^-K.

    The increment at a level-k point is measured against its binary
    truncation, the level-(k-1) point obtained by clearing the lowest set bit
    of its index; these are the differences chained in the time-sup bound.
    """
    if depth > 16:
        raise ValueError("depth must be <= 16")
    a, b = map(float, interval)
    grid = pair.grid
    count = 2 ** depth + 1
    idx = np.arange(count)
    times = a + (b - a) * idx / 2 ** depth
    c0, c1 = pair.position.spectral, pair.velocity.spectral
    kind = PropagatorKind(kind)
    # the symbols depend on |xi| only; evaluate them on the distinct values and gather
    ku, inv = np.unique(grid.kmag(), return_inverse=True)
    inv = inv.reshape(c0.shape)

    def flow(ts):
        if kind is PropagatorKind.FULL_WAVE:
            cc, ss, _ = wave_symbols(ku, ts)
        elif kind is PropagatorKind.TILDE:
            cc, ss = tilde_symbols(ku, ts)
        else:
            raise ValueError(f"time sup not available for {kind.value}")
        return cc[:, inv] * c0 + ss[:, inv] * c1

    norms = np.empty(count)
    level_max = np.zeros(depth)
    for start in range(0, count, chunk):
        sl = idx[start:start + chunk]
        spec = flow(times[sl])
        norms[sl] = batched_lebesgue(grid.to_physical(spec), r, grid)
        if increments:
            # the right endpoint sits on the coarsest grid and is not a chain increment
            inner = sl[(sl > 0) & (sl < 2 ** depth)]
            if inner.size == 0:
                continue
            lb = _lowbit(inner)
            prev = inner - lb
            diff = flow(times[inner]) - flow(times[prev])
            inc = batched_lebesgue(grid.to_physical(diff), r, grid)
            level = depth - np.log2(lb).astype(int)
            np.maximum.at(level_max, level - 1, inc)
    return DyadicSup(float(norms.max()), times, norms, level_max)
