"""Experiment presets for the seven benchmark problems."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from typing import Optional, Tuple

from .data import ICSampler, LinearProblem, VPProblem
from .learned import StencilConfig, build_model
from .mesh import Grid, make_grid_1d, make_grid_2d
from .transport import constant_velocity, deformation_velocity, sine_velocity

TWO_PI = 2.0 * math.pi
FOUR_PI = 4.0 * math.pi


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    problem: str                      # "linear" or "vp"
    ic_kind: str
    domain: Tuple[tuple, ...]         # ((lo, hi, n), ...) on the coarse grid
    cfl: float
    stencil: int
    lam1: float
    lam2: float
    n_low: int
    low_steps: int
    n_high: int
    high_steps: int
    factor: int = 8
    velocity: Optional[str] = None    # constant / sine / deformation
    max_speed: float = 1.0
    period: float = 2.0               # deformation period T
    fixed_dt: Optional[float] = None  # overrides the CFL cadence
    n_layers: int = 6
    width: int = 32
    kernel: int = 5
    epochs: int = 2000
    batch: int = 8
    lr: float = 1e-3
    unroll: int = 1
    rkei_order: int = 2
    background: float = 1.0
    test_steps: int = 0
    test_t_end: Optional[float] = None
    test_params: Tuple[dict, ...] = ()
    n_test: int = 3
    seed: int = 0
    fine_cfl: float = 0.5
    eulerian_cfl: float = 0.6         # classical comparison runs

    @property
    def ndim(self) -> int:
        return len(self.domain)

    @property
    def grid(self) -> Grid:
        if self.ndim == 1:
            return make_grid_1d(*self.domain[0])
        return make_grid_2d(*self.domain)

    @property
    def fine_grid(self) -> Grid:
        return self.grid.refine(self.factor)

    @property
    def dt(self) -> float:
        """Model cadence."""
        if self.fixed_dt is not None:
            return self.fixed_dt
        g = self.grid
        if self.problem == "vp":
            vc = max(abs(g.y.lo), abs(g.y.hi))
            return self.cfl * g.x.h / vc
        h = g.h if g.ndim == 1 else min(g.x.h, g.y.h)
        return self.cfl * h / self.max_speed

    @property
    def stencil_config(self) -> StencilConfig:
        return StencilConfig(self.stencil, self.ndim)

    def velocity_field(self):
        if self.velocity == "constant":
            return constant_velocity(1.0)
        if self.velocity == "sine":
            return sine_velocity()
        if self.velocity == "deformation":
            return deformation_velocity(self.period)
        raise ValueError(f"preset {self.name} has no velocity field")

    def dynamics(self, rkei_order: Optional[int] = None):
        if self.problem == "vp":
            return VPProblem(rkei_order or self.rkei_order, self.background)
        return LinearProblem(self.velocity_field())

    def sampler(self, seed: Optional[int] = None, **fixed) -> ICSampler:
        return ICSampler(self.ic_kind, self.seed if seed is None else seed, fixed)

    def build_model(self, mode: str = "mf", seed: Optional[int] = None):
        return build_model(self.stencil_config, mode, self.n_layers, self.width, self.kernel,
                           self.seed if seed is None else seed)

    def n_test_steps(self) -> int:
        if self.test_t_end is not None:
            return int(math.ceil(self.test_t_end / self.dt - 1e-9))
        return self.test_steps

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))


_LINEAR_1D = dict(problem="linear", domain=((0.0, 1.0, 32),), velocity="constant", cfl=1.8,
                  n_low=30, low_steps=54, n_high=15, high_steps=15, lam2=1.0, test_steps=512)
_VP = dict(problem="vp", domain=((0.0, FOUR_PI, 32), (-TWO_PI, TWO_PI, 64)), cfl=1.8,
           stencil=5, lam2=1.0, n_layers=9, epochs=500, unroll=16, n_test=1,
           lr=1e-4)  # unrolled windows amplify the first Adam steps

PRESETS = {
    "ex1_square": ExperimentPreset(name="ex1_square", ic_kind="square", stencil=5, lam1=0.1,
                                   **_LINEAR_1D),
    "ex2_triangle_square": ExperimentPreset(name="ex2_triangle_square", ic_kind="triangle_square",
                                            stencil=3, lam1=0.05, **_LINEAR_1D),
    "ex3_variable": ExperimentPreset(
        name="ex3_variable", problem="linear", ic_kind="square_on_2pi",
        domain=((0.0, TWO_PI, 32),), velocity="sine", cfl=0.5, stencil=5, lam1=1.0, lam2=1.0,
        n_low=90, low_steps=4, n_high=90, high_steps=4, test_steps=20),
    "ex4_deformation": ExperimentPreset(
        name="ex4_deformation", problem="linear", ic_kind="cosine_bell_2d",
        domain=((0.0, 1.0, 32), (0.0, 1.0, 32)), velocity="deformation", cfl=1.8,
        fixed_dt=2.0 / 214, stencil=5, lam1=0.1, lam2=1.0, n_low=18, low_steps=214,
        n_high=4, high_steps=214, test_steps=214),
    "ex5_landau": ExperimentPreset(
        name="ex5_landau", ic_kind="landau", lam1=0.1, n_low=6, low_steps=356, n_high=2,
        high_steps=356, test_t_end=40.0, test_params=({"alpha": 0.5},), **_VP),
    "ex6_two_stream": ExperimentPreset(
        name="ex6_two_stream", ic_kind="two_stream", lam1=0.2, n_low=5, low_steps=472, n_high=2,
        high_steps=472, test_t_end=53.0, test_params=({"alpha": 0.01},), **_VP),
    "ex7_three_mode": ExperimentPreset(
        name="ex7_three_mode", ic_kind="two_stream_3modes", lam1=0.1, n_low=6, low_steps=472,
        n_high=2, high_steps=472, test_t_end=53.0, background=12.0 / 7.0,
        test_params=({"alpha1": 0.01, "alpha2": 0.01 / 1.2, "alpha3": 0.01 / 1.2},), **_VP),
}


class PresetError(ValueError):
    pass


def get_preset(name: str) -> ExperimentPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise PresetError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def _coerce(current, text: str):
    if isinstance(current, bool):
        if text.lower() in ("1", "true", "yes"):
            return True
        if text.lower() in ("0", "false", "no"):
            return False
        raise PresetError(f"not a boolean: {text!r}")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float) or current is None:
        try:
            return float(text)
        except ValueError:
            if current is None:
                return text
            raise
    if isinstance(current, str):
        return text
    return json.loads(text)


def with_overrides(p: ExperimentPreset, assignments) -> ExperimentPreset:
    """Apply ``key=value`` strings (the CLI's ``--set``) to a preset."""
    names = {f.name: f for f in dataclasses.fields(p)}
    changes = {}
    for item in assignments or ():
        if "=" not in item:
            raise PresetError(f"--set expects key=value, got {item!r}")
        key, text = item.split("=", 1)
        key = key.strip()
        if key not in names or key == "name":
            raise PresetError(f"unknown preset key {key!r}")
        try:
            changes[key] = _coerce(getattr(p, key), text.strip())
        except (ValueError, json.JSONDecodeError) as exc:
            raise PresetError(f"bad value for {key}: {text!r}") from exc
    try:
        return dataclasses.replace(p, **changes)
    except (TypeError, ValueError) as exc:
        raise PresetError(str(exc)) from exc
