"""Classical reference transport solvers.

Eulerian finite-volume WENO5 with SSP-RK3, the conservative semi-Lagrangian
WENO update, and the backward characteristic tracer producing normalized shifts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import kernels
from .mesh import CellField, UniformGrid1D, UniformGrid2D

XI_MAX = 2.5
EULERIAN_CFL_MAX = 0.6
SPEED_SAMPLES = 64


class ShiftCapError(ValueError):
    """A traced shift exceeded the configured cap (time step too large)."""


class CFLError(ValueError):
    """An Eulerian step was requested with a time step above the CFL limit."""


@dataclass(frozen=True)
class VelocityField1D:
    a: Callable  # a(x, t)
    lipschitz: float = 1.0


@dataclass(frozen=True)
class VelocityField2D:
    a: Callable  # a(x, y, t)
    b: Callable  # b(x, y, t)
    lipschitz: float = 1.0

    def frozen(self, t0: float) -> "VelocityField2D":
        a, b = self.a, self.b
        return VelocityField2D(lambda x, y, t: a(x, y, t0), lambda x, y, t: b(x, y, t0),
                               self.lipschitz)


VelocityField = Union[VelocityField1D, VelocityField2D]


def constant_velocity(c: float = 1.0) -> VelocityField1D:
    return VelocityField1D(lambda x, t: np.full_like(np.asarray(x, dtype=float), c), 0.0)


def sine_velocity() -> VelocityField1D:
    """a(x, t) = sin(x + t)."""
    return VelocityField1D(lambda x, t: np.sin(x + t), 1.0)


def deformation_velocity(period: float = 2.0) -> VelocityField2D:
    """Periodic swirling flow that reverses at period/2 and returns at ``period``."""

    def a(x, y, t):
        return np.sin(np.pi * x) ** 2 * np.sin(2 * np.pi * y) * np.cos(np.pi * t / period)

    def b(x, y, t):
        return -np.sin(np.pi * y) ** 2 * np.sin(2 * np.pi * x) * np.cos(np.pi * t / period)

    return VelocityField2D(a, b, 2.0 * np.pi)


def constant_velocity_2d(ca: float, cb: float) -> VelocityField2D:
    return VelocityField2D(lambda x, y, t: np.full(np.broadcast(x, y).shape, float(ca)),
                           lambda x, y, t: np.full(np.broadcast(x, y).shape, float(cb)), 0.0)


@dataclass(frozen=True)
class ShiftField:
    """Normalized backward displacements.

    1D: one value per cell at its right interface.  2D: a pair of arrays
    (x-shift, y-shift) at cell centers.
    """
    grid: Union[UniformGrid1D, UniformGrid2D]
    xi: Union[np.ndarray, tuple]

    def channels(self) -> list:
        return [self.xi] if self.grid.ndim == 1 else list(self.xi)

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(c))) for c in self.channels())


def check_shift_cap(xi_arrays: Sequence[np.ndarray], xi_max: float = XI_MAX) -> None:
    for c in xi_arrays:
        if not np.all(np.isfinite(c)):
            raise ShiftCapError("non-finite normalized shift")
        m = float(np.max(np.abs(c)))
        if m > xi_max:
            raise ShiftCapError(f"normalized shift {m:.4g} exceeds cap {xi_max}")


def _substeps(dt: float, lipschitz: float) -> int:
    return max(4, int(math.ceil(dt * lipschitz * 8)))


def rk4_backward(rhs: Callable, y: np.ndarray, t_next: float, dt: float, n_sub: int) -> np.ndarray:
    """Integrate dy/dt = rhs(y, t) from t_next down to t_next - dt."""
    k = -dt / n_sub
    t = t_next
    for _ in range(n_sub):
        k1 = rhs(y, t)
        k2 = rhs(y + 0.5 * k * k1, t + 0.5 * k)
        k3 = rhs(y + 0.5 * k * k2, t + 0.5 * k)
        k4 = rhs(y + k * k3, t + k)
        y = y + (k / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t = t + k
    return y


def trace_shifts_1d(v: VelocityField1D, g: UniformGrid1D, t_next: float, dt: float,
                    xi_max: float = XI_MAX, n_sub: Optional[int] = None) -> ShiftField:
    if dt < 0:
        raise ValueError("dt must be non-negative")
    x0 = g.interfaces
    if dt == 0:
        return ShiftField(g, np.zeros_like(x0))
    n = n_sub or _substeps(dt, v.lipschitz)
    foot = rk4_backward(lambda x, t: v.a(x, t), x0, t_next, dt, n)
    xi = (foot - x0) / g.h
    check_shift_cap([xi], xi_max)
    return ShiftField(g, xi)


def trace_shifts_2d(v: VelocityField2D, g: UniformGrid2D, t_next: float, dt: float,
                    xi_max: float = XI_MAX, n_sub: Optional[int] = None) -> ShiftField:
    """Backward trace of the coupled 2D characteristic from every cell center."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    X, Y = np.meshgrid(g.x.centers, g.y.centers, indexing="ij")
    if dt == 0:
        return ShiftField(g, (np.zeros_like(X), np.zeros_like(Y)))
    n = n_sub or _substeps(dt, v.lipschitz)

    def rhs(p, t):
        return np.stack([v.a(p[0], p[1], t), v.b(p[0], p[1], t)])

    foot = rk4_backward(rhs, np.stack([X, Y]), t_next, dt, n)
    xi = ((foot[0] - X) / g.x.h, (foot[1] - Y) / g.y.h)
    check_shift_cap(xi, xi_max)
    return ShiftField(g, xi)


def weno5_face_values(stencil: Sequence[float]) -> float:
    """Left-biased WENO5 value at the right interface of the middle cell."""
    s = np.asarray(stencil, dtype=np.float64)
    if s.shape != (5,):
        raise ValueError("WENO5 needs exactly 5 cell averages")
    # Embedding the 5 values in a periodic row of 5 yields the same neighbourhood.
    return float(kernels.weno5_faces(np.roll(s, -2)[None, :])[0, 0])


def weno5_faces_both(u: np.ndarray):
    """(left-biased, right-biased) face values at right interfaces, along the last axis."""
    rows = np.ascontiguousarray(u.reshape(-1, u.shape[-1]))
    left = kernels.weno5_faces(rows)
    right = np.roll(kernels.weno5_faces(np.ascontiguousarray(rows[:, ::-1]))[:, ::-1], -1, axis=-1)
    return left.reshape(u.shape), right.reshape(u.shape)


def max_speed_1d(v: VelocityField1D, g: UniformGrid1D, t: float) -> float:
    xs = np.linspace(g.lo, g.hi, SPEED_SAMPLES)
    return float(np.max(np.abs(v.a(xs, t))))


def max_speed_2d(v: VelocityField2D, g: UniformGrid2D, t: float):
    xs = np.linspace(g.x.lo, g.x.hi, SPEED_SAMPLES)
    ys = np.linspace(g.y.lo, g.y.hi, SPEED_SAMPLES)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return float(np.max(np.abs(v.a(X, Y, t)))), float(np.max(np.abs(v.b(X, Y, t))))


def cfl_dt(v: VelocityField, g, t: float, cfl: float) -> float:
    """dt = CFL * min_d h_d / max|velocity_d| over a sampled velocity grid."""
    if g.ndim == 1:
        return cfl * g.h / max(max_speed_1d(v, g, t), 1e-300)
    sa, sb = max_speed_2d(v, g, t)
    return cfl * min(g.x.h / max(sa, 1e-300), g.y.h / max(sb, 1e-300))


def _upwind_flux(vel, left, right):
    return np.maximum(vel, 0.0) * left + np.minimum(vel, 0.0) * right


def _rhs_1d(u: np.ndarray, v: VelocityField1D, g: UniformGrid1D, t: float) -> np.ndarray:
    left, right = weno5_faces_both(u)
    flux = _upwind_flux(v.a(g.interfaces, t), left, right)
    return -(flux - np.roll(flux, 1)) / g.h


def _rhs_2d(u: np.ndarray, v: VelocityField2D, g: UniformGrid2D, t: float) -> np.ndarray:
    xc, yc = g.x.centers, g.y.centers
    # x-direction: reconstruct along axis 0.
    lx, rx = weno5_faces_both(u.T)
    ax = v.a(g.x.interfaces[None, :], yc[:, None], t)
    fx = _upwind_flux(ax, lx, rx).T
    # y-direction: reconstruct along axis 1.
    ly, ry = weno5_faces_both(u)
    by = v.b(xc[:, None], g.y.interfaces[None, :], t)
    fy = _upwind_flux(by, ly, ry)
    return -(fx - np.roll(fx, 1, axis=0)) / g.x.h - (fy - np.roll(fy, 1, axis=1)) / g.y.h


def _ssp_rk3(u, rhs, t, dt):
    u1 = u + dt * rhs(u, t)
    u2 = 0.75 * u + 0.25 * (u1 + dt * rhs(u1, t + dt))
    return u / 3.0 + 2.0 / 3.0 * (u2 + dt * rhs(u2, t + 0.5 * dt))


def _check_cfl(v, g, t, dt, cfl_max):
    limit = cfl_dt(v, g, t, cfl_max)
    if dt > limit * (1 + 1e-9):
        raise CFLError(f"dt={dt:.4g} exceeds the CFL-{cfl_max} limit {limit:.4g}")


def eulerian_step_1d(u: CellField, v: VelocityField1D, t: float, dt: float,
                     cfl_max: float = EULERIAN_CFL_MAX) -> CellField:
    g = u.grid
    _check_cfl(v, g, t, dt, cfl_max)
    vals = _ssp_rk3(u.values, lambda w, s: _rhs_1d(w, v, g, s), t, dt)
    return CellField(g, vals)


def eulerian_step_2d(u: CellField, v: VelocityField2D, t: float, dt: float,
                     cfl_max: float = EULERIAN_CFL_MAX) -> CellField:
    g = u.grid
    _check_cfl(v, g, t, dt, cfl_max)
    vals = _ssp_rk3(u.values, lambda w, s: _rhs_2d(w, v, g, s), t, dt)
    return CellField(g, vals)


def eulerian_advance(u: CellField, v: VelocityField, t: float, dt: float,
                     cfl: float = 0.5) -> CellField:
    """Advance by exactly ``dt`` with equal Eulerian substeps of CFL at most ``cfl``."""
    step = eulerian_step_1d if u.grid.ndim == 1 else eulerian_step_2d
    if dt == 0:
        return u
    n_sub = max(1, int(math.ceil(dt / cfl_dt(v, u.grid, t, cfl) - 1e-12)))
    # The speed may grow within the interval; re-split until the check passes.
    while True:
        sub = dt / n_sub
        try:
            w = u
            for k in range(n_sub):
                w = step(w, v, t + k * sub, sub, cfl_max=EULERIAN_CFL_MAX)
            return w
        except CFLError:
            n_sub *= 2


def sl_sweep(u: np.ndarray, xi: np.ndarray, axis: int = -1) -> np.ndarray:
    """One conservative SL update along ``axis``; ``xi`` holds right-interface shifts."""
    un = np.moveaxis(u, axis, -1)
    xn = np.moveaxis(np.broadcast_to(xi, u.shape), axis, -1)
    shape = un.shape
    rows = np.ascontiguousarray(un.reshape(-1, shape[-1]))
    G = kernels.sl_fluxes(rows, np.ascontiguousarray(xn.reshape(-1, shape[-1])))
    out = rows + np.roll(G, 1, axis=-1) - G
    return np.moveaxis(out.reshape(shape), -1, axis)


def sl_weno_step_1d(u: CellField, xi: ShiftField, xi_max: float = XI_MAX) -> CellField:
    check_shift_cap([xi.xi], xi_max)
    return CellField(u.grid, sl_sweep(u.values, xi.xi))


def _row_shifts(vel_1d: Callable, centers_cross: np.ndarray, g1: UniformGrid1D, dt: float,
                lipschitz: float, xi_max: float) -> np.ndarray:
    """Frozen 1D traces along one axis for every transverse coordinate."""
    x0 = np.broadcast_to(g1.interfaces[None, :], (centers_cross.size, g1.n_cells))
    c = centers_cross[:, None]
    foot = rk4_backward(lambda x, t: vel_1d(x, c), x0, 0.0, dt, _substeps(dt, lipschitz))
    xi = (foot - x0) / g1.h
    check_shift_cap([xi], xi_max)
    return xi


def sl_weno_step_2d_split(u: CellField, v: VelocityField2D, dt: float, t_frozen: float = 0.0,
                          xi_max: float = XI_MAX) -> CellField:
    """Strang split x(dt/2) - y(dt) - x(dt/2) with the velocity frozen at ``t_frozen``."""
    g = u.grid
    if dt == 0:
        return u
    ax = lambda x, y: v.a(x, y, t_frozen)  # noqa: E731
    by = lambda x, y: v.b(x, y, t_frozen)  # noqa: E731
    xi_x = _row_shifts(lambda x, c: ax(x, c), g.y.centers, g.x, 0.5 * dt, v.lipschitz, xi_max)
    xi_y = _row_shifts(lambda y, c: by(c, y), g.x.centers, g.y, dt, v.lipschitz, xi_max)
    w = sl_sweep(u.values, xi_x.T, axis=0)
    w = sl_sweep(w, xi_y, axis=1)
    w = sl_sweep(w, xi_x.T, axis=0)
    return CellField(g, w)


def observed_order(errors: Sequence[float], hs: Optional[Sequence[float]] = None) -> float:
    """Least-squares slope of log(error) against log(h).

    Without ``hs`` the grids are taken to halve h at each entry.
    """
    e = np.asarray(errors, dtype=np.float64)
    if e.size < 2:
        raise ValueError("need at least two errors")
    if np.any(e <= 0) or not np.all(np.isfinite(e)):
        raise ValueError("errors must be positive and finite")
    h = np.asarray(hs, dtype=np.float64) if hs is not None else 0.5 ** np.arange(e.size)
    slope = np.polyfit(np.log(h), np.log(e), 1)[0]
    return float(slope)
