"""Preset-driven experiment building blocks shared by the CLI and the acceptance suite."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from . import data as D
from . import learned as L
from . import training as T
from .mesh import CellField, mse, project_ic
from .presets import ExperimentPreset
from .vlasov import VPState, run_vp, split_sl_advect


def datasets(p: ExperimentPreset, seed: Optional[int] = None, n_low: Optional[int] = None,
             n_high: Optional[int] = None):
    """(low, high) trajectories at the preset's sizes unless overridden."""
    s = p.sampler(seed)
    n_low = p.n_low if n_low is None else n_low
    n_high = p.n_high if n_high is None else n_high
    coarse_cfl = p.cfl if p.problem == "vp" else p.fine_cfl
    low = D.generate_lowfi(s, p.grid, p.dynamics(), n_low, p.low_steps, p.dt, coarse_cfl) if n_low else []
    high = (D.generate_hifi(s, p.fine_grid, p.dynamics(), p.factor, n_high, p.high_steps, p.dt,
                            p.fine_cfl) if n_high else [])
    return low, high


def train_config(p: ExperimentPreset, **over) -> T.TrainConfig:
    cfg = dict(lam1=p.lam1, lam2=p.lam2, lr=p.lr, epochs=p.epochs, batch=p.batch, unroll=p.unroll,
               seed=p.seed, rkei_order=p.rkei_order, background=p.background)
    cfg.update(over)
    return T.TrainConfig(**cfg)


def train(p: ExperimentPreset, low, high, mode: str = "mf", cfg: Optional[T.TrainConfig] = None,
          sink: Optional[Callable] = None, on_epoch: Optional[Callable] = None,
          state: Optional[T.TrainState] = None, time_budget: Optional[float] = None) -> T.TrainState:
    cfg = cfg or train_config(p)
    st = state or T.new_state(p.build_model(mode), cfg)
    if st.model.mode != mode:
        raise ValueError(f"state holds a {st.model.mode} model, asked to train {mode}")
    need_low = mode in ("mf", "lowfi")
    need_high = mode in ("mf", "hifi")
    if p.problem == "vp":
        lo = T.vp_windows(low, cfg.unroll) if need_low else None
        hi = T.vp_windows(high, cfg.unroll) if need_high else None
        return T.train_unrolled(st, lo, hi, p.grid, cfg, sink, on_epoch, time_budget=time_budget)
    v = p.velocity_field()
    lo = T.linear_pairs(low, v) if need_low else None
    hi = T.linear_pairs(high, v) if need_high else None
    return T.train_onestep(st, lo, hi, cfg, sink, on_epoch)


def test_params(p: ExperimentPreset, seed: int = 0, n: Optional[int] = None) -> List[dict]:
    if p.test_params:
        return [dict(tp) for tp in p.test_params]
    return p.sampler(seed).draws(p.n_test if n is None else n, D.STREAM_TEST)


def initial_field(p: ExperimentPreset, params: dict, grid=None) -> CellField:
    return project_ic(grid or p.grid, D.ic_function(p.ic_kind, params))


def reference(p: ExperimentPreset, params: dict, n_steps: int) -> D.Trajectory:
    """Coarsened fine-grid classical solution at the model cadence."""
    return D.reference_solution(p.ic_kind, params, p.fine_grid, p.dynamics(), p.factor, n_steps,
                                p.dt, p.fine_cfl)


@dataclass
class Timed:
    fields: List[CellField]
    seconds: float
    intermediates: Optional[List[CellField]] = None


def model_rollout(p: ExperimentPreset, model: L.CompositeModel, params: dict, n_steps: int) -> Timed:
    u0 = initial_field(p, params)
    t0 = time.perf_counter()
    r = L.rollout(model, u0, p.velocity_field(), n_steps, p.dt)
    return Timed(r.fields, time.perf_counter() - t0, r.intermediates)


def weno_rollout(p: ExperimentPreset, params: dict, n_steps: int, refine: int = 1) -> Timed:
    """Eulerian WENO5 + RK3 at the comparison CFL; snapshots coarsened to the model grid."""
    grid = p.grid.refine(refine) if refine > 1 else p.grid
    u0 = initial_field(p, params, grid)
    snap = (lambda f: D.coarsen(f, refine)) if refine > 1 else None
    t0 = time.perf_counter()
    fields = D.simulate(p.dynamics(), u0, n_steps, p.dt, p.eulerian_cfl, snapshot=snap)
    return Timed(fields, time.perf_counter() - t0)


def vp_rollout(p: ExperimentPreset, params: dict, advect=None, rkei_order: Optional[int] = None,
               t_end: Optional[float] = None, sink=None, grid=None, n_sub: int = 1):
    """Run the VP system at the preset cadence; returns (history, final state, seconds)."""
    g = grid or p.grid
    f0 = initial_field(p, params, g)
    t_end = p.test_t_end if t_end is None else t_end
    t0 = time.perf_counter()
    hist, s = run_vp(VPState(f0), advect or split_sl_advect, rkei_order or p.rkei_order,
                     p.dt / n_sub, t_end, sink, {"background": p.background})
    return hist, s, time.perf_counter() - t0


def final_mse(fields: List[CellField], ref: D.Trajectory) -> float:
    return mse(fields[-1], ref.fields[-1])


def relative_l2(a, b) -> float:
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))
