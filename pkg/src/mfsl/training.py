"""Multi-fidelity losses and training loops for the composite model."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from . import learned as L
from . import nn
from .mesh import CellField
from .transport import XI_MAX, ShiftCapError, trace_shifts_1d, trace_shifts_2d
from .vlasov import solve_field, vp_shifts

log = logging.getLogger(__name__)

DIVERGENCE_LOSS = 1e6
HISTORY_HEADER = ("epoch", "L_LF", "L_HF", "L_MF")


class TrainingDivergence(RuntimeError):
    def __init__(self, epoch: int, loss: float, history):
        super().__init__(f"training diverged at epoch {epoch} (loss {loss:.3e})")
        self.epoch = epoch
        self.history = history


@dataclass
class TrainConfig:
    lam1: float = 0.1
    lam2: float = 1.0
    lr: float = 1e-3
    decay: float = 0.5           # multiplies lr every third of the epochs
    epochs: int = 2000
    batch: int = 8
    unroll: int = 1
    seed: int = 0
    rkei_order: int = 2
    background: float = 1.0
    max_iters_per_epoch: Optional[int] = None

    def __post_init__(self):
        if self.lam1 < 0 or self.lam2 < 0:
            raise ValueError("loss weights must be non-negative")
        if self.unroll < 1 or self.batch < 1 or self.epochs < 0:
            raise ValueError("unroll, batch and epochs must be positive")

    def lr_at(self, epoch: int) -> float:
        if self.epochs <= 0:
            return self.lr
        stage = min(2, (3 * epoch) // self.epochs)
        return self.lr * self.decay ** stage


# --- one-step pairs -------------------------------------------------------------

@dataclass
class PairSet:
    """Stacked one-step training pairs ``(u_m, xi_m) -> u_{m+1}``."""
    u: np.ndarray
    xis: List[np.ndarray]
    target: np.ndarray

    def __len__(self) -> int:
        return len(self.u)

    def take(self, idx) -> "PairSet":
        return PairSet(self.u[idx], [x[idx] for x in self.xis], self.target[idx])

    @classmethod
    def empty_like(cls, other: "PairSet") -> "PairSet":
        return other.take(np.arange(0))


def linear_pairs(trajectories, velocity, xi_max: float = XI_MAX) -> PairSet:
    """Pairs from linear-transport trajectories; shifts traced on the coarse grid."""
    if not trajectories:
        raise ValueError("no trajectories")
    g = trajectories[0].grid
    tracer = trace_shifts_1d if g.ndim == 1 else trace_shifts_2d
    cache = {}
    us, xis, tg = [], [], []
    for tr in trajectories:
        if tr.grid != g:
            raise ValueError("pairs need trajectories on a single grid")
        vals = tr.values()
        dt = tr.dt
        for m in range(tr.n_steps):
            key = round(float(tr.times[m + 1]), 12)
            if key not in cache:
                cache[key] = [np.asarray(c) for c in
                              tracer(velocity, g, float(tr.times[m + 1]), dt, xi_max).channels()]
            us.append(vals[m])
            xis.append(cache[key])
            tg.append(vals[m + 1])
    nd = g.ndim
    return PairSet(np.stack(us), [np.stack([x[d] for x in xis]) for d in range(nd)], np.stack(tg))


# --- losses -----------------------------------------------------------------

def _mse_grad(pred: np.ndarray, target: np.ndarray):
    r = pred - target
    return float(np.mean(r * r)), 2.0 * r / r.size


def _zeros(model: L.CompositeModel) -> List[np.ndarray]:
    return [np.zeros_like(p) for p in model.parameters()]


def loss_lowfi(model: L.CompositeModel, batch: PairSet):
    """MSE of the low-fidelity network's one-step predictions; grads over all params."""
    if len(batch) == 0:
        raise ValueError("empty low-fidelity batch")
    pred, tape = L.coeff_step(model.f_L, model.stencil, batch.u, batch.xis)
    loss, g = _mse_grad(pred, batch.target)
    gl, _, _ = L.coeff_step_backward(model.f_L, model.stencil, tape, g)
    grads = _zeros(model)
    grads[:len(gl)] = gl
    return loss, grads


def loss_hifi(model: L.CompositeModel, batch: PairSet):
    """MSE of the composite prediction on high-fidelity pairs.

    In mf mode the intermediate comes from f_L and gradients reach both
    networks; single-network models are scored directly.
    """
    if len(batch) == 0:
        raise ValueError("empty high-fidelity batch")
    pred, _, tapes = L.model_step(model, batch.u, batch.xis)
    loss, g = _mse_grad(pred, batch.target)
    grads, _ = L.model_step_backward(model, tapes, g)
    return loss, grads


def loss_mf(model: L.CompositeModel, low: PairSet, high: PairSet, lam1: float, lam2: float):
    """(L_MF, L_LF, L_HF, grads) with L_MF = lam1 L_LF + lam2 L_HF."""
    if lam1 < 0 or lam2 < 0:
        raise ValueError("loss weights must be non-negative")
    l_lf, g_lf = loss_lowfi(model, low)
    l_hf, g_hf = loss_hifi(model, high)
    grads = [lam1 * a + lam2 * b for a, b in zip(g_lf, g_hf)]
    return lam1 * l_lf + lam2 * l_hf, l_lf, l_hf, grads


# --- history -----------------------------------------------------------------

class HistoryCSV:
    def __init__(self, path, append: bool = False):
        self._fh = open(path, "a" if append else "w", newline="")
        self._w = csv.writer(self._fh)
        if not append:
            self._w.writerow(HISTORY_HEADER)

    def __call__(self, row: dict) -> None:
        self._w.writerow([row["epoch"]] + ["" if row[k] is None else repr(row[k])
                                           for k in HISTORY_HEADER[1:]])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def read_history(path) -> List[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{"epoch": int(r["epoch"]),
             **{k: (float(r[k]) if r[k] != "" else None) for k in HISTORY_HEADER[1:]}}
            for r in rows]


# --- training state / checkpoints ---------------------------------------------

@dataclass
class TrainState:
    model: L.CompositeModel
    adam: nn.AdamState
    epoch: int = 0
    history: List[dict] = field(default_factory=list)


def new_state(model: L.CompositeModel, cfg: TrainConfig) -> TrainState:
    return TrainState(model, nn.AdamState.zeros_like(model.parameters(), cfg.lr), 0, [])


def save_training(path, st: TrainState, grid=None, **meta) -> None:
    L.save_model(path, st.model, st.adam, grid, epoch=st.epoch, **meta)


def restore_training(path, expect: Optional[dict] = None) -> TrainState:
    model, adam, extra = L.load_model(path, expect)
    if adam is None:
        adam = nn.AdamState.zeros_like(model.parameters())
    return TrainState(model, adam, int(extra.get("epoch", 0)), [])


def _epoch_batches(n: int, batch: int, rng: np.random.Generator, n_iters: int) -> List[np.ndarray]:
    """``n_iters`` batches cycling through fresh permutations of ``range(n)``."""
    out = []
    perm = rng.permutation(n)
    pos = 0
    for _ in range(n_iters):
        idx = []
        while len(idx) < min(batch, n):
            if pos == n:
                perm, pos = rng.permutation(n), 0
            take = min(batch - len(idx), n - pos)
            idx.extend(perm[pos:pos + take])
            pos += take
        out.append(np.asarray(idx))
    return out


def _check(loss: float, epoch: int, history):
    if not math.isfinite(loss) or loss > DIVERGENCE_LOSS:
        raise TrainingDivergence(epoch, loss, history)


def _finish_epoch(st: TrainState, epoch: int, sums: dict, n: int, sink, on_epoch):
    row = {"epoch": epoch}
    for k in HISTORY_HEADER[1:]:
        row[k] = None if sums.get(k) is None else sums[k] / n
    st.history.append(row)
    if sink is not None:
        sink(row)
    st.epoch = epoch + 1
    if on_epoch is not None:
        on_epoch(st)


def train_onestep(st: TrainState, low: Optional[PairSet], high: Optional[PairSet],
                  cfg: TrainConfig, sink: Optional[Callable] = None,
                  on_epoch: Optional[Callable] = None, until_epoch: Optional[int] = None) -> TrainState:
    """Shuffled mini-batch Adam on one-step pairs.

    mf mode uses both sets; lowfi uses only ``low``; hifi only ``high``.  Batch
    order depends only on (seed, epoch), so a restored state resumes the
    identical run.
    """
    mode = st.model.mode
    use_low = mode in ("mf", "lowfi")
    use_high = mode in ("mf", "hifi")
    if use_low and (low is None or len(low) == 0):
        raise ValueError(f"{mode} training needs low-fidelity pairs")
    if use_high and (high is None or len(high) == 0):
        raise ValueError(f"{mode} training needs high-fidelity pairs")
    params = st.model.parameters()
    stop = cfg.epochs if until_epoch is None else min(until_epoch, cfg.epochs)
    for epoch in range(st.epoch, stop):
        rng = np.random.default_rng([cfg.seed, epoch])
        n_iters = max(math.ceil(len(low) / cfg.batch) if use_low else 0,
                      math.ceil(len(high) / cfg.batch) if use_high else 0)
        if cfg.max_iters_per_epoch:
            n_iters = min(n_iters, cfg.max_iters_per_epoch)
        lo_b = _epoch_batches(len(low), cfg.batch, rng, n_iters) if use_low else None
        hi_b = _epoch_batches(len(high), cfg.batch, rng, n_iters) if use_high else None
        lr = cfg.lr_at(epoch)
        sums = {"L_LF": 0.0 if use_low else None, "L_HF": 0.0 if use_high else None, "L_MF": 0.0}
        for it in range(n_iters):
            if mode == "mf":
                total, l_lf, l_hf, grads = loss_mf(st.model, low.take(lo_b[it]), high.take(hi_b[it]),
                                                   cfg.lam1, cfg.lam2)
                sums["L_LF"] += l_lf
                sums["L_HF"] += l_hf
            elif mode == "lowfi":
                total, grads = loss_lowfi(st.model, low.take(lo_b[it]))
                sums["L_LF"] += total
            else:
                total, grads = loss_hifi(st.model, high.take(hi_b[it]))
                sums["L_HF"] += total
            sums["L_MF"] += total
            _check(total, epoch, st.history)
            nn.adam_step(params, grads, st.adam, lr)
        _finish_epoch(st, epoch, sums, max(n_iters, 1), sink, on_epoch)
    return st


# --- unrolled VP training -------------------------------------------------------

@dataclass
class WindowSet:
    """Windows of ``unroll + 1`` consecutive VP snapshots, shape (W, unroll+1, NX, NV)."""
    states: np.ndarray
    dt: float


def vp_windows(trajectories, unroll: int) -> WindowSet:
    if not trajectories:
        raise ValueError("no trajectories")
    dt = trajectories[0].dt
    wins = []
    for tr in trajectories:
        if abs(tr.dt - dt) > 1e-12:
            raise ValueError("windows need a common cadence")
        vals = tr.values()
        for s in range(0, tr.n_steps - unroll + 1, unroll):
            wins.append(vals[s:s + unroll + 1])
    if not wins:
        raise ValueError("trajectories shorter than the unroll length")
    return WindowSet(np.stack(wins), dt)


def _shift_batch(F: np.ndarray, grid, dt: float, background: float, xi_max: float = XI_MAX):
    xs, vs = [], []
    for f in F:
        cf = CellField(grid, f)
        xi = vp_shifts(solve_field(cf, background=background), grid, dt, xi_max)
        xs.append(xi.xi[0])
        vs.append(xi.xi[1])
    return [np.stack(xs), np.stack(vs)]


def _vp_step(model, net_only_low: bool, F, grid, dt, cfg: TrainConfig):
    """One RKEI step with the learned advector; fields and shifts are data (no gradient)."""
    if cfg.rkei_order == 2:
        xi0 = _shift_batch(F, grid, 0.5 * dt, cfg.background)
        if net_only_low:
            F_half, _ = L.coeff_step(model.f_L, model.stencil, F, xi0)
        else:
            F_half, _, _ = L.model_step(model, F, xi0)
        xi = _shift_batch(F_half, grid, dt, cfg.background)
    else:
        xi = _shift_batch(F, grid, dt, cfg.background)
    if net_only_low:
        out, tape = L.coeff_step(model.f_L, model.stencil, F, xi)
        return out, ("low", tape)
    out, _, tapes = L.model_step(model, F, xi)
    return out, ("model", tapes)


def unrolled_loss(model: L.CompositeModel, windows: np.ndarray, grid, dt: float,
                  cfg: TrainConfig, low_network: bool):
    """Mean per-step MSE over an unrolled window batch; returns (loss, grads, states).

    ``low_network`` unrolls f_L alone (the low-fidelity term); otherwise the
    full model step is unrolled.  If the rollout breaks down part way (a shift
    past the cap), the loss covers the steps before the failure, so an unstable
    model still gets a gradient back toward the data.  A failure on the first
    step is re-raised.
    """
    if len(windows) == 0:
        raise ValueError("empty window batch")
    F = windows[:, 0]
    tapes, preds = [], [F]
    for k in range(1, windows.shape[1]):
        try:
            F, tape = _vp_step(model, low_network, F, grid, dt, cfg)
        except (ShiftCapError, FloatingPointError) as exc:
            if k == 1:
                raise
            log.debug("unroll truncated at step %d: %s", k, exc)
            break
        tapes.append(tape)
        preds.append(F)
    n = len(tapes)
    loss = 0.0
    gs = []
    for k in range(1, n + 1):
        lk, gk = _mse_grad(preds[k], windows[:, k])
        loss += lk / n
        gs.append(gk / n)
    grads = _zeros(model)
    g = np.zeros_like(F)
    for k in range(n, 0, -1):
        g = g + gs[k - 1]
        kind, tape = tapes[k - 1]
        if kind == "low":
            gl, g, _ = L.coeff_step_backward(model.f_L, model.stencil, tape, g)
            for i, a in enumerate(gl):
                grads[i] += a
        else:
            gm, g = L.model_step_backward(model, tape, g)
            for i, a in enumerate(gm):
                grads[i] += a
    return loss, grads, preds


def train_unrolled(st: TrainState, low: Optional[WindowSet], high: Optional[WindowSet], grid,
                   cfg: TrainConfig, sink: Optional[Callable] = None,
                   on_epoch: Optional[Callable] = None, until_epoch: Optional[int] = None,
                   time_budget: Optional[float] = None) -> TrainState:
    """Unrolled training for Vlasov-Poisson data.

    A window whose rollout diverges is skipped and logged.  ``time_budget``
    (seconds) ends training early after the current epoch.
    """
    mode = st.model.mode
    use_low = mode in ("mf", "lowfi")
    use_high = mode in ("mf", "hifi")
    if use_low and low is None:
        raise ValueError(f"{mode} training needs low-fidelity windows")
    if use_high and high is None:
        raise ValueError(f"{mode} training needs high-fidelity windows")
    params = st.model.parameters()
    start = time.monotonic()
    stop = cfg.epochs if until_epoch is None else min(until_epoch, cfg.epochs)
    for epoch in range(st.epoch, stop):
        rng = np.random.default_rng([cfg.seed, epoch])
        n_iters = max(math.ceil(len(low.states) / cfg.batch) if use_low else 0,
                      math.ceil(len(high.states) / cfg.batch) if use_high else 0)
        if cfg.max_iters_per_epoch:
            n_iters = min(n_iters, cfg.max_iters_per_epoch)
        lo_b = _epoch_batches(len(low.states), cfg.batch, rng, n_iters) if use_low else None
        hi_b = _epoch_batches(len(high.states), cfg.batch, rng, n_iters) if use_high else None
        lr = cfg.lr_at(epoch)
        sums = {"L_LF": 0.0 if use_low else None, "L_HF": 0.0 if use_high else None, "L_MF": 0.0}
        done = 0
        for it in range(n_iters):
            try:
                l_lf = l_hf = 0.0
                if mode == "mf":
                    l_lf, g_lf, _ = unrolled_loss(st.model, low.states[lo_b[it]], grid, low.dt, cfg, True)
                    l_hf, g_hf, _ = unrolled_loss(st.model, high.states[hi_b[it]], grid, high.dt, cfg, False)
                    grads = [cfg.lam1 * a + cfg.lam2 * b for a, b in zip(g_lf, g_hf)]
                    total = cfg.lam1 * l_lf + cfg.lam2 * l_hf
                elif mode == "lowfi":
                    total, grads, _ = unrolled_loss(st.model, low.states[lo_b[it]], grid, low.dt, cfg, True)
                    l_lf = total
                else:
                    total, grads, _ = unrolled_loss(st.model, high.states[hi_b[it]], grid, high.dt, cfg, False)
                    l_hf = total
            except (L.RolloutDivergence, ValueError, FloatingPointError) as exc:
                log.warning("epoch %d window batch %d skipped: %s", epoch, it, exc)
                continue
            if not math.isfinite(total):
                log.warning("epoch %d window batch %d skipped: non-finite loss", epoch, it)
                continue
            _check(total, epoch, st.history)
            nn.adam_step(params, grads, st.adam, lr)
            if use_low:
                sums["L_LF"] += l_lf
            if use_high:
                sums["L_HF"] += l_hf
            sums["L_MF"] += total
            done += 1
        if done == 0:
            raise TrainingDivergence(epoch, math.inf, st.history)
        _finish_epoch(st, epoch, sums, done, sink, on_epoch)
        if time_budget is not None and time.monotonic() - start > time_budget:
            log.info("time budget reached after epoch %d", epoch)
            break
    return st
