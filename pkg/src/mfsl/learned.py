"""Learned semi-Lagrangian finite-volume steps.

A coefficient network maps (U, xi[, U_t]) to per-cell stencil weights; a
constraint layer projects them so every source cell distributes exactly its own
mass, and the stencil update ``U'_i = sum_o c[o, i] U_{i+o}`` follows.

The batched primitives (:func:`coeff_step` / :func:`coeff_step_backward`) work
on bare arrays and carry a tape for training.  The CellField-level functions
wrap them for inference.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from . import kernels
from . import nn
from .mesh import CellField, Grid, grid_from_dict, grid_to_dict
from .transport import XI_MAX, ShiftField, trace_shifts_1d, trace_shifts_2d
from .vlasov import ElectricField, vp_shifts

DEBUG = bool(os.environ.get("MFSL_DEBUG"))
CONSTRAINT_TOL = 1e-12
DIVERGENCE_FACTOR = 1e3
MODEL_KIND = "mfsl-composite"
MODES = ("mf", "lowfi", "hifi")


class ConventionError(ValueError):
    """A stored model does not follow the conventions the caller expects."""


class RolloutDivergence(RuntimeError):
    def __init__(self, step: int, ratio: float):
        super().__init__(f"rollout diverged at step {step}: max|u| grew by {ratio:.3g}x")
        self.step = step


@dataclass(frozen=True)
class StencilConfig:
    size: int
    ndim: int = 1

    def __post_init__(self):
        if self.size < 1 or self.size % 2 == 0:
            raise ValueError(f"stencil size must be odd and positive, got {self.size}")
        if self.size > 2 * XI_MAX + 1:
            raise ValueError(f"stencil size {self.size} exceeds the shift-cap width")
        if self.ndim not in (1, 2):
            raise ValueError("stencils are 1D or 2D")

    @property
    def radius(self) -> int:
        return self.size // 2

    @property
    def total(self) -> int:
        return self.size ** self.ndim


@dataclass(frozen=True)
class CoeffField:
    """Entry ``coeffs[o, i]`` weighs source cell ``i + (o - r)`` for target ``i``.

    In 2D the offset channel is ``o = (ox + r) * S + (oy + r)``.
    """
    grid: Grid
    coeffs: np.ndarray
    stencil: StencilConfig


@dataclass
class CompositeModel:
    f_L: nn.Network
    g_H: Optional[nn.Network]
    stencil: StencilConfig
    mode: str = "mf"

    def __post_init__(self):
        d, st = self.stencil.ndim, self.stencil.total
        if self.mode not in MODES:
            raise ValueError(f"unknown model mode {self.mode!r}")
        if self.f_L.ndim != d or self.f_L.in_channels != d + 1 or self.f_L.out_channels != st:
            raise ValueError("f_L channel layout does not match the stencil")
        if (self.g_H is None) != (self.mode != "mf"):
            raise ValueError("g_H is required exactly in mf mode")
        if self.g_H is not None and (self.g_H.ndim != d or self.g_H.in_channels != d + 2
                                     or self.g_H.out_channels != st):
            raise ValueError("g_H channel layout does not match the stencil")
        for net in self.networks():
            if net.specs[-1].activation != "identity":
                raise ValueError("coefficient networks must end with an identity layer")

    @property
    def ndim(self) -> int:
        return self.stencil.ndim

    def networks(self) -> List[nn.Network]:
        return [self.f_L] if self.g_H is None else [self.f_L, self.g_H]

    def parameters(self) -> List[np.ndarray]:
        return [p for net in self.networks() for p in net.parameters()]

    def copy(self) -> "CompositeModel":
        return CompositeModel(self.f_L.copy(), None if self.g_H is None else self.g_H.copy(),
                              self.stencil, self.mode)


def build_model(stencil: StencilConfig, mode: str = "mf", n_layers: int = 6, width: int = 32,
                kernel: int = 5, seed: int = 0) -> CompositeModel:
    d, st = stencil.ndim, stencil.total
    f_L = nn.init_weights(nn.conv_stack(d + 1, st, n_layers, width, kernel), seed, ndim=d)
    g_H = None
    if mode == "mf":
        g_H = nn.init_weights(nn.conv_stack(d + 2, st, n_layers, width, kernel), seed + 1, ndim=d)
    return CompositeModel(f_L, g_H, stencil, mode)


# --- constraint layer -------------------------------------------------------

def _colsum(c: np.ndarray, stencil: StencilConfig) -> np.ndarray:
    return kernels.column_sums_1d(c) if stencil.ndim == 1 else kernels.column_sums_2d(c)


def _spread(v: np.ndarray, stencil: StencilConfig) -> np.ndarray:
    fn = kernels.spread_1d if stencil.ndim == 1 else kernels.spread_2d
    return fn(v, stencil.size)


def constrain_array(c: np.ndarray, stencil: StencilConfig) -> np.ndarray:
    """Uniform affine projection making every source-cell column sum exactly 1.

    ``c`` is batched: (B, S_total, *spatial).
    """
    s = _colsum(c, stencil)
    out = c - (_spread(s, stencil) - 1.0) / stencil.total
    if DEBUG:
        err = np.max(np.abs(_colsum(out, stencil) - 1.0))
        assert err <= CONSTRAINT_TOL, f"constraint violated by {err:.3e}"
    return out


def constrain_adjoint(g: np.ndarray, stencil: StencilConfig) -> np.ndarray:
    """Transpose of the linear part of :func:`constrain_array`."""
    return g - _spread(_colsum(g, stencil), stencil) / stencil.total


def _apply(u: np.ndarray, c: np.ndarray, stencil: StencilConfig) -> np.ndarray:
    fn = kernels.stencil_apply_1d if stencil.ndim == 1 else kernels.stencil_apply_2d
    return fn(u, c)


def _apply_adjoint(u, c, g, stencil: StencilConfig):
    fn = kernels.stencil_adjoint_1d if stencil.ndim == 1 else kernels.stencil_adjoint_2d
    return fn(u, c, g)


# --- batched differentiable step ----------------------------------------------

@dataclass
class StepTape:
    u: np.ndarray
    coeffs: np.ndarray          # constrained, (B, S_total, *spatial)
    cache: nn.ForwardCache
    has_extra: bool


def _features(u: np.ndarray, xis, extra: Optional[np.ndarray]) -> np.ndarray:
    chans = [u] + list(xis) + ([] if extra is None else [extra])
    return np.stack(chans, axis=-1)


def raw_coeffs(net: nn.Network, u: np.ndarray, xis, extra=None):
    """Unconstrained coefficients (B, S_total, *spatial) and the network cache."""
    x = _features(u, xis, extra)
    if x.shape[-1] != net.in_channels:
        raise ValueError(f"network expects {net.in_channels} channels, got {x.shape[-1]}")
    y, cache = nn.forward_cl(net, x)
    return np.ascontiguousarray(np.moveaxis(y, -1, 1)), cache


def coeff_step(net: nn.Network, stencil: StencilConfig, u: np.ndarray, xis,
               extra: Optional[np.ndarray] = None):
    """One learned step on a batch; ``u`` is (B, *spatial), ``xis`` one array per dim."""
    c, cache = raw_coeffs(net, u, xis, extra)
    c = constrain_array(c, stencil)
    return _apply(u, c, stencil), StepTape(u, c, cache, extra is not None)


def coeff_step_backward(net: nn.Network, stencil: StencilConfig, tape: StepTape, g: np.ndarray):
    """Reverse pass of :func:`coeff_step`.

    Returns (parameter grads, dL/du, dL/dextra or None).  Shift channels are
    treated as data and receive no gradient.
    """
    dc, du = _apply_adjoint(tape.u, tape.coeffs, g, stencil)
    dc = constrain_adjoint(dc, stencil)
    grads, gx = nn.backward_cl(net, tape.cache, np.moveaxis(dc, 1, -1))
    du = du + gx[..., 0]
    dextra = gx[..., -1] if tape.has_extra else None
    return grads, du, dextra


def model_step(model: CompositeModel, u: np.ndarray, xis):
    """Batched (u_next, u_intermediate, tapes).  Without g_H the intermediate is None."""
    ut, tape_l = coeff_step(model.f_L, model.stencil, u, xis)
    if model.g_H is None:
        return ut, None, (tape_l, None)
    un, tape_h = coeff_step(model.g_H, model.stencil, u, xis, extra=ut)
    return un, ut, (tape_l, tape_h)


def model_step_backward(model: CompositeModel, tapes, g_next: np.ndarray,
                        g_inter: Optional[np.ndarray] = None):
    """Reverse pass of :func:`model_step`; returns (flat param grads, dL/du).

    ``g_inter`` adds a direct loss gradient on the intermediate solution.
    """
    tape_l, tape_h = tapes
    if model.g_H is None:
        gl, du, _ = coeff_step_backward(model.f_L, model.stencil, tape_l, g_next)
        return gl, du
    gh, du_h, d_ut = coeff_step_backward(model.g_H, model.stencil, tape_h, g_next)
    if g_inter is not None:
        d_ut = d_ut + g_inter
    gl, du_l, _ = coeff_step_backward(model.f_L, model.stencil, tape_l, d_ut)
    return gl + gh, du_l + du_h


# --- CellField-level API ---------------------------------------------------

def _shift_arrays(xi: ShiftField) -> list:
    return [np.asarray(c, dtype=np.float64)[None] for c in xi.channels()]


def _check_grid(model: CompositeModel, u: CellField, xi: ShiftField):
    if u.grid.ndim != model.ndim:
        raise ValueError(f"{u.grid.ndim}D field given to a {model.ndim}D model")
    if xi.grid != u.grid:
        raise ValueError("shift field and solution live on different grids")


def infer_coeffs(net: nn.Network, stencil: StencilConfig, u: CellField, xi: ShiftField,
                 extra: Optional[CellField] = None) -> CoeffField:
    ex = None if extra is None else extra.values[None]
    c, _ = raw_coeffs(net, u.values[None], _shift_arrays(xi), ex)
    return CoeffField(u.grid, c[0], stencil)


def constrain(c: CoeffField) -> CoeffField:
    return CoeffField(c.grid, constrain_array(c.coeffs[None], c.stencil)[0], c.stencil)


def column_sums(c: CoeffField) -> np.ndarray:
    return _colsum(c.coeffs[None], c.stencil)[0]


def apply_stencil(u: CellField, c: CoeffField) -> CellField:
    if c.grid != u.grid or c.coeffs.shape[1:] != u.values.shape:
        raise ValueError("coefficient field does not match the solution grid")
    if DEBUG:
        err = np.max(np.abs(column_sums(c) - 1.0))
        assert err <= CONSTRAINT_TOL, f"unconstrained coefficients (column error {err:.3e})"
    return CellField(u.grid, _apply(u.values[None], c.coeffs[None], c.stencil)[0])


def lowfi_step(model: CompositeModel, u: CellField, xi: ShiftField) -> CellField:
    _check_grid(model, u, xi)
    out, _ = coeff_step(model.f_L, model.stencil, u.values[None], _shift_arrays(xi))
    return CellField(u.grid, out[0])


def mf_step(model: CompositeModel, u: CellField, xi: ShiftField):
    """Returns (u_next, u_intermediate).  Single-network models return u_next twice."""
    _check_grid(model, u, xi)
    un, ut, _ = model_step(model, u.values[None], _shift_arrays(xi))
    nxt = CellField(u.grid, un[0])
    return nxt, (nxt if ut is None else CellField(u.grid, ut[0]))


def step(model: CompositeModel, u: CellField, xi: ShiftField) -> CellField:
    return mf_step(model, u, xi)[0]


# --- rollouts ---------------------------------------------------------------

@dataclass
class Rollout:
    fields: List[CellField]
    times: List[float]
    intermediates: List[CellField]


def _guard(u0_max: float, u: np.ndarray, step_idx: int) -> None:
    m = float(np.max(np.abs(u)))
    ref = max(u0_max, np.finfo(float).tiny)
    if not np.isfinite(m) or m > DIVERGENCE_FACTOR * ref:
        raise RolloutDivergence(step_idx, m / ref)


def rollout(model: CompositeModel, u0: CellField, velocity, n_steps: int, dt: float,
            t0: float = 0.0, on_step: Optional[Callable] = None) -> Rollout:
    """Autoregressive model rollout for a linear transport velocity field.

    Shifts are traced from the exact velocity each step; ``dt`` is the model
    cadence.  Aborts with :class:`RolloutDivergence` when the solution blows up.
    """
    g = u0.grid
    tracer = trace_shifts_1d if g.ndim == 1 else trace_shifts_2d
    fields, times, inter = [u0], [t0], []
    u = u0
    u0_max = float(np.max(np.abs(u0.values)))
    for m in range(n_steps):
        t_next = t0 + (m + 1) * dt
        xi = tracer(velocity, g, t_next, dt)
        u, ut = mf_step(model, u, xi)
        _guard(u0_max, u.values, m + 1)
        fields.append(u)
        inter.append(ut)
        times.append(t_next)
        if on_step is not None:
            on_step(m + 1, u)
    return Rollout(fields, times, inter)


def learned_vp_advector(model: CompositeModel, xi_max: float = XI_MAX):
    """Frozen-field advector ``advect(f, e, dt)`` backed by the model."""
    if model.ndim != 2:
        raise ValueError("VP advection needs a 2D model")

    def advect(f: CellField, e: ElectricField, dt: float) -> CellField:
        if dt == 0:
            return f
        return step(model, f, vp_shifts(e, f.grid, dt, xi_max))

    return advect


# --- persistence ------------------------------------------------------------

def model_conventions(model: CompositeModel) -> dict:
    d = model.ndim
    chans = ["U", "xi"] if d == 1 else ["U", "xi_x", "xi_v"]
    return {
        "kind": MODEL_KIND,
        "mode": model.mode,
        "ndim": d,
        "stencil_size": model.stencil.size,
        "offset_order": "o=(ox+r)*S+(oy+r)" if d == 2 else "o=ox+r",
        "xi_convention": "right-interface" if d == 1 else "cell-center",
        "f_L_channels": chans,
        "g_H_channels": chans + ["U_t"],
    }


def model_extra(model: CompositeModel, grid: Optional[Grid] = None, **meta) -> dict:
    extra = dict(meta)
    extra["conventions"] = model_conventions(model)
    if grid is not None:
        extra["grid"] = grid_to_dict(grid)
    return extra


def model_from_checkpoint(nets, extra: dict, expect: Optional[dict] = None) -> CompositeModel:
    conv = extra.get("conventions")
    if not conv or conv.get("kind") != MODEL_KIND:
        raise ConventionError("checkpoint carries no composite-model conventions")
    stencil = StencilConfig(int(conv["stencil_size"]), int(conv["ndim"]))
    mode = conv["mode"]
    if mode not in MODES or len(nets) != (2 if mode == "mf" else 1):
        raise ConventionError(f"network count {len(nets)} inconsistent with mode {mode!r}")
    model = CompositeModel(nets[0], nets[1] if mode == "mf" else None, stencil, mode)
    if model_conventions(model) != conv:
        raise ConventionError("checkpoint conventions differ from this library's")
    for key, want in (expect or {}).items():
        if conv.get(key) != want:
            raise ConventionError(f"checkpoint {key}={conv.get(key)!r}, expected {want!r}")
    return model


def save_model(path, model: CompositeModel, adam: Optional[nn.AdamState] = None,
               grid: Optional[Grid] = None, **meta) -> None:
    nn.save_checkpoint(path, model.networks(), adam, model_extra(model, grid, **meta))


def load_model(path, expect: Optional[dict] = None):
    """Returns (model, adam state or None, extra metadata)."""
    nets, adam, extra = nn.load_checkpoint(path)
    return model_from_checkpoint(nets, extra, expect), adam, extra


def checkpoint_grid(extra: dict) -> Optional[Grid]:
    return grid_from_dict(extra["grid"]) if "grid" in extra else None
