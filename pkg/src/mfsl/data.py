"""Initial-condition samplers, trajectory generation, coarsening and dataset I/O."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .mesh import (CellField, FieldFormatError, Grid, UniformGrid1D, UniformGrid2D,
                   field_to_bytes, grid_from_dict, grid_to_dict, project_ic, values_from_bytes)
from .transport import eulerian_advance
from .vlasov import VPState, rkei1_step, rkei2_step, split_sl_advect

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
DATASET_FORMAT = "mfsl-dataset"
DATASET_VERSION = 1
CADENCE_TOL = 1e-12
FINE_CFL = 0.5
K_WAVE = 0.5
SQRT_2PI = math.sqrt(2.0 * math.pi)

# Sampled parameter intervals per initial-condition kind.
IC_RANGES: Dict[str, Dict[str, tuple]] = {
    "square": {"height": (0.1, 1.0), "width": (0.2, 0.4), "center": (0.0, 1.0)},
    "triangle_square": {"tri_height": (0.2, 0.8), "tri_width": (0.2, 0.3),
                        "sq_height": (0.2, 0.8), "sq_width": (0.2, 0.3)},
    "square_on_2pi": {"height": (0.1, 1.0), "width": (2.5, 3.5), "center": (0.0, 2.0 * math.pi)},
    "cosine_bell_2d": {"rx": (0.25, 0.75), "ry": (0.25, 0.75)},
    "landau": {"alpha": (0.05, 0.45)},
    "two_stream": {"alpha": (0.01, 0.05)},
    "two_stream_3modes": {"alpha1": (0.01, 0.02), "alpha2": (0.01, 0.02), "alpha3": (0.01, 0.02)},
}
TRIANGLE_CENTER, SQUARE_CENTER = 0.25, 0.75


class DatasetError(ValueError):
    pass


class TrajectoryError(RuntimeError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"trajectory {index} failed: {cause}")
        self.index = index
        self.cause = cause


# --- initial conditions --------------------------------------------------------

@dataclass(frozen=True)
class ICSampler:
    kind: str
    seed: int = 0
    fixed: dict = field(default_factory=dict)  # parameters pinned instead of drawn

    def __post_init__(self):
        if self.kind not in IC_RANGES:
            raise ValueError(f"unknown initial-condition kind {self.kind!r}")
        unknown = set(self.fixed) - set(IC_RANGES[self.kind]) - {"n_bells"}
        if unknown:
            raise ValueError(f"unknown parameters for {self.kind}: {sorted(unknown)}")

    def draw(self, rng: np.random.Generator) -> dict:
        """One parameter set; pinned values still consume their draws so streams stay aligned."""
        params = {}
        n_bells = int(self.fixed.get("n_bells", 1)) if self.kind == "cosine_bell_2d" else 1
        for rep in range(n_bells):
            for name, (lo, hi) in IC_RANGES[self.kind].items():
                key = name if rep == 0 else f"{name}_{rep}"
                val = float(rng.uniform(lo, hi))
                params[key] = float(self.fixed.get(key, val))
        if n_bells > 1:
            params["n_bells"] = n_bells
        return params

    def draws(self, n: int, stream: int = 0) -> List[dict]:
        rng = np.random.default_rng([self.seed, stream])
        return [self.draw(rng) for _ in range(n)]


def _periodic_dist(x, c, length):
    d = np.mod(x - c, length)
    return np.minimum(d, length - d)


def ic_function(kind: str, params: dict) -> Callable:
    """Pointwise initial condition for a kind and a parameter set."""
    p = params
    if kind == "square":
        return lambda x: np.where(_periodic_dist(x, p["center"], 1.0) < 0.5 * p["width"],
                                  p["height"], 0.0)
    if kind == "square_on_2pi":
        return lambda x: np.where(_periodic_dist(x, p["center"], 2.0 * math.pi) < 0.5 * p["width"],
                                  p["height"], 0.0)
    if kind == "triangle_square":
        def u(x):
            dt_ = _periodic_dist(x, TRIANGLE_CENTER, 1.0)
            tri = p["tri_height"] * np.maximum(0.0, 1.0 - dt_ / (0.5 * p["tri_width"]))
            sq = np.where(_periodic_dist(x, SQUARE_CENTER, 1.0) < 0.5 * p["sq_width"],
                          p["sq_height"], 0.0)
            return tri + sq
        return u
    if kind == "cosine_bell_2d":
        n = int(p.get("n_bells", 1))
        centers = [(p["rx"], p["ry"])] + [(p[f"rx_{k}"], p[f"ry_{k}"]) for k in range(1, n)]

        def u(x, y):
            total = 0.0
            for rx, ry in centers:
                r = np.minimum(1.0, 6.0 * np.sqrt((x - rx) ** 2 + (y - ry) ** 2))
                total = total + 0.5 * (1.0 + np.cos(np.pi * r))
            return total
        return u
    if kind == "landau":
        return lambda x, v: (1.0 + p["alpha"] * np.cos(K_WAVE * x)) * np.exp(-0.5 * v * v) / SQRT_2PI
    if kind == "two_stream":
        return lambda x, v: ((1.0 + p["alpha"] * np.cos(K_WAVE * x)) * v * v
                             * np.exp(-0.5 * v * v) / SQRT_2PI)
    if kind == "two_stream_3modes":
        def f(x, v):
            pert = (1.0 + p["alpha1"] * np.cos(K_WAVE * x) + p["alpha2"] * np.cos(2 * K_WAVE * x)
                    + p["alpha3"] * np.cos(3 * K_WAVE * x))
            return 2.0 / (7.0 * SQRT_2PI) * (1.0 + 5.0 * v * v) * pert * np.exp(-0.5 * v * v)
        return f
    raise ValueError(f"unknown initial-condition kind {kind!r}")


def sample_ic(s: ICSampler, index: int = 0, stream: int = 0):
    """(u0, params) for draw ``index`` of the sampler's stream; deterministic per seed."""
    params = s.draws(index + 1, stream)[index]
    log.info("ic %s seed=%d stream=%d index=%d params=%s", s.kind, s.seed, stream, index, params)
    return ic_function(s.kind, params), params


# --- dynamics ---------------------------------------------------------------

@dataclass(frozen=True)
class LinearProblem:
    """Transport u_t + div(a u) = 0 advanced by Eulerian WENO5 + SSP-RK3."""
    velocity: object  # VelocityField1D / VelocityField2D
    scheme: str = "weno5-rk3"

    def advance(self, u: CellField, t: float, dt: float, cfl: float) -> CellField:
        return eulerian_advance(u, self.velocity, t, dt, cfl)


@dataclass(frozen=True)
class VPProblem:
    """Vlasov-Poisson advanced by RKEI with the split SL-WENO frozen-field advector."""
    rkei_order: int = 2
    background: float = 1.0
    scheme: str = "sl-weno-rkei"

    def advance(self, f: CellField, t: float, dt: float, cfl: float) -> CellField:
        g = f.grid
        vc = max(abs(g.y.lo), abs(g.y.hi))
        n_sub = max(1, int(math.ceil(dt * vc / (g.x.h * cfl) - 1e-9)))
        stepper = rkei2_step if self.rkei_order == 2 else rkei1_step
        s = VPState(f, t)
        kw = {"background": self.background}
        for k in range(n_sub):
            s = stepper(s, split_sl_advect, dt / n_sub, kw)
        return s.f


# --- trajectories ------------------------------------------------------------

@dataclass
class Trajectory:
    fields: List[CellField]
    times: np.ndarray
    fidelity: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        if len(self.fields) != len(self.times) or not self.fields:
            raise ValueError("a trajectory needs one time stamp per field")
        g = self.fields[0].grid
        if any(f.grid != g for f in self.fields):
            raise ValueError("trajectory fields must share one grid")
        if len(self.times) > 1:
            steps = np.diff(self.times)
            if np.any(steps <= 0):
                raise ValueError("trajectory times must increase strictly")
            if np.max(np.abs(steps - steps[0])) > CADENCE_TOL * max(1.0, abs(self.times[-1])):
                raise ValueError("trajectory cadence is not uniform")

    @property
    def grid(self) -> Grid:
        return self.fields[0].grid

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    @property
    def n_steps(self) -> int:
        return len(self.fields) - 1

    def values(self) -> np.ndarray:
        return np.stack([f.values for f in self.fields])


def coarsen(f: CellField, factor: int) -> CellField:
    """Block mean of ``factor`` (per dimension) fine cells."""
    if factor < 1 or int(factor) != factor:
        raise ValueError("coarsening factor must be a positive integer")
    g = f.grid
    axes = g.grids if g.ndim == 2 else (g,)
    if any(a.n_cells % factor for a in axes):
        raise ValueError(f"grid {g.shape} not divisible by {factor}")
    coarse_axes = [UniformGrid1D(a.lo, a.hi, a.n_cells // factor) for a in axes]
    v = f.values
    if g.ndim == 1:
        return CellField(coarse_axes[0], v.reshape(-1, factor).mean(axis=1))
    nx, ny = coarse_axes[0].n_cells, coarse_axes[1].n_cells
    return CellField(UniformGrid2D(*coarse_axes), v.reshape(nx, factor, ny, factor).mean(axis=(1, 3)))


def simulate(problem, u0: CellField, n_steps: int, dt: float, cfl: float = FINE_CFL,
             t0: float = 0.0, snapshot: Optional[Callable] = None) -> List[CellField]:
    """Snapshots at ``t0 + m dt`` for m = 0..n_steps; ``snapshot`` maps each stored field."""
    keep = snapshot or (lambda f: f)
    out = [keep(u0)]
    u = u0
    for m in range(n_steps):
        u = problem.advance(u, t0 + m * dt, dt, cfl)
        out.append(keep(u))
    return out


def _one_trajectory(job):
    (index, kind, params, grid, problem, n_steps, dt, cfl, factor, fidelity, meta) = job
    try:
        u0 = project_ic(grid, ic_function(kind, params))
        snap = (lambda f: coarsen(f, factor)) if factor > 1 else None
        fields = simulate(problem, u0, n_steps, dt, cfl, snapshot=snap)
    except Exception as exc:
        raise TrajectoryError(index, exc) from exc
    m = dict(meta, params=params, index=index)
    return Trajectory(fields, dt * np.arange(n_steps + 1), fidelity, m)


def _workers(n_jobs: int) -> int:
    try:
        cap = int(os.environ.get("MFSL_THREADS", "1"))
    except ValueError:
        cap = 1
    return max(1, min(cap, n_jobs))


def _run_jobs(jobs) -> List[Trajectory]:
    n = _workers(len(jobs))
    if n == 1:
        return [_one_trajectory(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as ex:
        return list(ex.map(_one_trajectory, jobs))


def _describe(problem) -> dict:
    d = {"scheme": problem.scheme}
    if isinstance(problem, VPProblem):
        d.update(rkei_order=problem.rkei_order, background=problem.background)
    return d


STREAM_LOW, STREAM_HIGH, STREAM_TEST = 0, 1, 2


def generate_lowfi(sampler: ICSampler, grid: Grid, problem, n_traj: int, n_steps: int,
                   dt: float, cfl: float = FINE_CFL) -> List[Trajectory]:
    """Trajectories solved directly on the coarse grid, snapshotted at the cadence ``dt``."""
    params = sampler.draws(n_traj, STREAM_LOW)
    meta = dict(_describe(problem), cfl=cfl, seed=sampler.seed, kind=sampler.kind,
                solver_grid=grid_to_dict(grid))
    jobs = [(i, sampler.kind, p, grid, problem, n_steps, dt, cfl, 1, "low", meta)
            for i, p in enumerate(params)]
    return _run_jobs(jobs)


def generate_hifi(sampler: ICSampler, grid_fine: Grid, problem, factor: int, n_traj: int,
                  n_steps: int, dt: float, cfl: float = FINE_CFL) -> List[Trajectory]:
    """Fine-grid trajectories coarsened by ``factor`` and snapshotted at the coarse cadence."""
    axes = grid_fine.grids if grid_fine.ndim == 2 else (grid_fine,)
    if any(a.n_cells % factor for a in axes):
        raise ValueError(f"fine grid {grid_fine.shape} not divisible by factor {factor}")
    params = sampler.draws(n_traj, STREAM_HIGH)
    meta = dict(_describe(problem), cfl=cfl, seed=sampler.seed, kind=sampler.kind,
                solver_grid=grid_to_dict(grid_fine), factor=factor)
    jobs = [(i, sampler.kind, p, grid_fine, problem, n_steps, dt, cfl, factor, "high", meta)
            for i, p in enumerate(params)]
    return _run_jobs(jobs)


def reference_solution(kind: str, params: dict, grid_fine: Grid, problem, factor: int,
                       n_steps: int, dt: float, cfl: float = FINE_CFL) -> Trajectory:
    """Coarsened fine-grid reference built the same way as the high-fidelity data."""
    job = (0, kind, params, grid_fine, problem, n_steps, dt, cfl, factor, "reference", {})
    return _one_trajectory(job)


# --- persistence ------------------------------------------------------------

def _traj_dir(fidelity: str, i: int) -> str:
    return f"{fidelity}_{i:04d}"


def save_dataset(directory, trajectories: Sequence[Trajectory], sampler: Optional[ICSampler] = None,
                 extra: Optional[dict] = None) -> dict:
    """Write one field file per snapshot plus ``manifest.json``; returns the manifest."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    counters: Dict[str, int] = {}
    entries = []
    for traj in trajectories:
        i = counters.get(traj.fidelity, 0)
        counters[traj.fidelity] = i + 1
        sub = _traj_dir(traj.fidelity, i)
        (root / sub).mkdir(exist_ok=True)
        files, crcs = [], []
        for m, f in enumerate(traj.fields):
            rel = f"{sub}/{m:05d}.fld"
            blob = field_to_bytes(f)
            (root / rel).write_bytes(blob)
            files.append(rel)
            crcs.append(zlib.crc32(blob))
        entries.append({"fidelity": traj.fidelity, "dir": sub, "grid": grid_to_dict(traj.grid),
                        "times": [float(t) for t in traj.times], "dt": traj.dt,
                        "files": files, "crc32": crcs, "meta": traj.meta})
    manifest = {
        "format": DATASET_FORMAT, "version": DATASET_VERSION,
        "sampler": None if sampler is None else {"kind": sampler.kind, "seed": sampler.seed,
                                                 "fixed": sampler.fixed},
        "counts": dict(sorted(counters.items())),
        "trajectories": entries,
        "extra": extra or {},
    }
    (root / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


def load_dataset(directory, fidelity: Optional[str] = None):
    """Returns (manifest, trajectories); validates checksums, shapes and directory contents.

    ``fidelity`` restricts which trajectories are read (others are not opened).
    """
    root = Path(directory)
    try:
        manifest = json.loads((root / MANIFEST).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read manifest in {root}: {exc}") from exc
    if manifest.get("format") != DATASET_FORMAT or manifest.get("version") != DATASET_VERSION:
        raise DatasetError("not an mfsl dataset manifest (or unsupported version)")
    entries = manifest["trajectories"]
    counts: Dict[str, int] = {}
    for e in entries:
        counts[e["fidelity"]] = counts.get(e["fidelity"], 0) + 1
    if counts != manifest["counts"]:
        raise DatasetError(f"manifest counts {manifest['counts']} disagree with entries {counts}")
    on_disk = sorted(p.name for p in root.iterdir() if p.is_dir())
    if on_disk != sorted(e["dir"] for e in entries):
        raise DatasetError("trajectory directories on disk do not match the manifest")
    out = []
    for e in entries:
        if fidelity is not None and e["fidelity"] != fidelity:
            continue
        grid = grid_from_dict(e["grid"])
        fields = []
        for rel, crc in zip(e["files"], e["crc32"]):
            try:
                blob = (root / rel).read_bytes()
            except OSError as exc:
                raise DatasetError(f"missing field file {rel}") from exc
            if zlib.crc32(blob) != crc:
                raise DatasetError(f"checksum mismatch in {rel}")
            try:
                vals = values_from_bytes(blob)
            except FieldFormatError as exc:
                raise DatasetError(f"{rel}: {exc}") from exc
            if vals.shape != grid.shape:
                raise DatasetError(f"{rel}: shape {vals.shape} != grid {grid.shape}")
            fields.append(CellField(grid, vals))
        out.append(Trajectory(fields, e["times"], e["fidelity"], e.get("meta", {})))
    return manifest, out


def trajectory_to_csv(traj: Trajectory, path, extra_columns: Optional[Dict[str, List[CellField]]] = None):
    """Long-format CSV: ``step,t,x[,y],u[,extra...]``, one row per cell per snapshot."""
    g = traj.grid
    extra_columns = extra_columns or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        coords = ["x"] if g.ndim == 1 else ["x", "y"]
        w.writerow(["step", "t"] + coords + ["u"] + list(extra_columns))
        if g.ndim == 1:
            pts = [(x,) for x in g.centers]
        else:
            pts = [(x, y) for x in g.x.centers for y in g.y.centers]
        for m, (f, t) in enumerate(zip(traj.fields, traj.times)):
            flat = f.values.ravel()
            cols = [extra_columns[k][m].values.ravel() if m < len(extra_columns[k]) else None
                    for k in extra_columns]
            for j, p in enumerate(pts):
                row = [m, repr(float(t))] + [repr(float(c)) for c in p] + [repr(float(flat[j]))]
                row += ["" if c is None else repr(float(c[j])) for c in cols]
                w.writerow(row)
