"""Vlasov-Poisson machinery: density, field, energy, frozen-field shifts, RKEI stepping.

An SL *advector* is any callable ``advect(f, e, dt) -> CellField`` evolving the
phase-space field under the frozen electric field ``e`` for a time ``dt``.  Both
the classical split SL-WENO advector and the learned one fit this contract.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .mesh import CellField, UniformGrid1D, UniformGrid2D, total_mass
from .transport import XI_MAX, ShiftField, check_shift_cap, sl_sweep

log = logging.getLogger(__name__)

NEUTRALITY_TOL = 1e-6


class VPStepError(RuntimeError):
    def __init__(self, step: int, cause: Exception):
        super().__init__(f"VP step {step} failed: {cause}")
        self.step = step
        self.cause = cause


@dataclass(frozen=True)
class ElectricField:
    grid_x: UniformGrid1D
    e: np.ndarray  # E_{i+1/2}, i = 0..n_x-1
    e_boundary: float = 0.0  # E_{-1/2}

    def at(self, x) -> np.ndarray:
        """Periodic linear interpolation of the interface values."""
        g = self.grid_x
        s = (np.asarray(x, dtype=np.float64) - g.lo) / g.h - 1.0
        i0 = np.floor(s)
        w = s - i0
        i0 = i0.astype(np.int64) % g.n_cells
        return (1.0 - w) * self.e[i0] + w * self.e[(i0 + 1) % g.n_cells]

    def centers(self) -> np.ndarray:
        return 0.5 * (self.e + np.roll(self.e, 1))


@dataclass(frozen=True)
class VPState:
    f: CellField
    t: float = 0.0


Advector = Callable[[CellField, ElectricField, float], CellField]


def compute_density(f: CellField) -> np.ndarray:
    return f.grid.y.h * np.sum(f.values, axis=1)


def solve_field(f: CellField, e_boundary: float = 0.0, background: float = 1.0) -> ElectricField:
    """Cumulative-sum field from E_x = rho - background on the periodic x-grid."""
    gx = f.grid.x
    rho = compute_density(f)
    charge = gx.h * np.sum(rho - background)
    if abs(charge) / gx.length > NEUTRALITY_TOL:
        log.warning("plasma not neutral: relative net charge %.3e", charge / gx.length)
    e = e_boundary + gx.h * np.cumsum(rho - background)
    return ElectricField(gx, e, e_boundary)


def electric_energy(e: ElectricField) -> float:
    return float(0.5 * e.grid_x.h * np.sum(e.e ** 2))


def vp_shifts(e: ElectricField, g: UniformGrid2D, dt: float, xi_max: float = XI_MAX) -> ShiftField:
    """Cell-centered normalized shifts of the frozen-field characteristics.

    The x-shift is -v dt/h_x; the v-shift takes E at the midpoint of the x path.
    """
    X, V = np.meshgrid(g.x.centers, g.y.centers, indexing="ij")
    xi_x = -V * dt / g.x.h
    xi_v = -e.at(X - 0.5 * dt * V) * dt / g.y.h
    check_shift_cap([xi_x, xi_v], xi_max)
    return ShiftField(g, (xi_x, xi_v))


def split_sl_advect(f: CellField, e: ElectricField, dt: float, xi_max: float = XI_MAX) -> CellField:
    """Classical frozen-field advector: Strang x(dt/2) - v(dt) - x(dt/2) SL-WENO sweeps."""
    g = f.grid
    if dt == 0:
        return f
    v = g.y.centers
    xi_x = np.broadcast_to((-0.5 * dt * v / g.x.h)[None, :], g.shape)
    xi_v = np.broadcast_to((-dt * e.centers() / g.y.h)[:, None], g.shape)
    check_shift_cap([xi_x[0], xi_v[:, 0]], xi_max)
    w = sl_sweep(f.values, xi_x, axis=0)
    w = sl_sweep(w, xi_v, axis=1)
    w = sl_sweep(w, xi_x, axis=0)
    return CellField(g, w)


def _field(f: CellField, field_kwargs: Optional[dict]) -> ElectricField:
    return solve_field(f, **(field_kwargs or {}))


def rkei1_step(s: VPState, advect: Advector, dt: float, field_kwargs: Optional[dict] = None) -> VPState:
    if dt == 0:
        return s
    e = _field(s.f, field_kwargs)
    return VPState(advect(s.f, e, dt), s.t + dt)


def rkei2_step(s: VPState, advect: Advector, dt: float, field_kwargs: Optional[dict] = None) -> VPState:
    if dt == 0:
        return s
    e0 = _field(s.f, field_kwargs)
    f_half = advect(s.f, e0, 0.5 * dt)
    e_half = _field(f_half, field_kwargs)
    return VPState(advect(s.f, e_half, dt), s.t + dt)


def vp_cfl_dt(f: CellField, e: ElectricField, cfl: float) -> float:
    """dt = CFL / (V_c/h_x + max|E|/h_v)."""
    g = f.grid
    vc = max(abs(g.y.lo), abs(g.y.hi))
    return cfl / (vc / g.x.h + float(np.max(np.abs(e.e))) / g.y.h)


class DiagnosticsCSV:
    """Row sink writing ``step,t,total_mass,electric_energy``."""

    header = ("step", "t", "total_mass", "electric_energy")

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(self.header)

    def __call__(self, row: dict) -> None:
        self._w.writerow([row["step"], repr(row["t"]), repr(row["total_mass"]),
                          repr(row["electric_energy"])])

    def close(self) -> None:
        self._fh.close()


def run_vp(s0: VPState, advect: Advector, rkei_order: int, dt_policy: Union[float, Callable],
           t_end: float, sink: Optional[Callable] = None, field_kwargs: Optional[dict] = None,
           max_steps: Optional[int] = None, on_step: Optional[Callable] = None):
    """Step the VP system to ``t_end``.

    ``dt_policy`` is a fixed step or ``callable(state, e) -> dt``.  Returns the
    diagnostics history (list of dicts) and the final state.
    """
    stepper = {1: rkei1_step, 2: rkei2_step}.get(rkei_order)
    if stepper is None:
        raise ValueError(f"unsupported RKEI order {rkei_order}")
    history = []
    s = s0
    step = 0

    def record(state):
        e = _field(state.f, field_kwargs)
        row = {"step": step, "t": state.t, "total_mass": total_mass(state.f),
               "electric_energy": electric_energy(e)}
        history.append(row)
        if sink is not None:
            sink(row)
        return e

    e = record(s)
    while s.t < t_end - 1e-12 * max(1.0, abs(t_end)):
        if max_steps is not None and step >= max_steps:
            break
        dt = dt_policy(s, e) if callable(dt_policy) else float(dt_policy)
        dt = min(dt, t_end - s.t)
        try:
            s = stepper(s, advect, dt, field_kwargs)
        except Exception as exc:  # abort with the failing step index
            raise VPStepError(step, exc) from exc
        step += 1
        e = record(s)
        if on_step is not None:
            on_step(step, s)
    return history, s


def steps_for(t_end: float, dt: float) -> int:
    return int(math.ceil(t_end / dt - 1e-9))
