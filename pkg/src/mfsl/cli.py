"""Command-line front end: ``mfsl <datagen|train|rollout|vp|evaluate|plot>``.

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 training
divergence, 5 rollout divergence.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as D
from . import experiments as X
from . import learned as L
from . import training as T
from .mesh import save_field
from .nn import CheckpointError
from .presets import PRESETS, PresetError, get_preset, with_overrides
from .svgplot import contour_svg, grid_from_long, line_svg
from .vlasov import DiagnosticsCSV, VPStepError, split_sl_advect

log = logging.getLogger("mfsl")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_TRAIN, EXIT_ROLLOUT = 0, 2, 3, 4, 5


class ConfigError(ValueError):
    pass


def _preset(args):
    return with_overrides(get_preset(args.preset), args.set)


def _load_model(path, p):
    model, _, extra = L.load_model(path, {"ndim": p.ndim, "stencil_size": p.stencil})
    return model, extra


# --- subcommands ---------------------------------------------------------------

def cmd_datagen(args) -> int:
    p = _preset(args)
    seed = p.seed if args.seed is None else args.seed
    low, high = X.datasets(p, seed, args.n_low, args.n_high)
    D.save_dataset(args.out, low + high, p.sampler(seed),
                   extra={"preset": p.to_dict(), "dt": p.dt})
    print(f"wrote {len(low)} low + {len(high)} high trajectories to {args.out}")
    return EXIT_OK


def _dataset_for(args, p, mode):
    manifest, low = D.load_dataset(args.data, "low") if mode != "hifi" else (None, [])
    _, high = D.load_dataset(args.data, "high") if mode != "lowfi" else (None, [])
    for tr in low + high:
        if tr.grid != p.grid or abs(tr.dt - p.dt) > 1e-12:
            raise ConfigError("dataset grid or cadence does not match the preset")
    if mode == "lowfi":
        assert not high, "lowfi training must not read high-fidelity data"
    return low, high


def cmd_train(args) -> int:
    p = _preset(args)
    over = {}
    if args.epochs is not None:
        over["epochs"] = args.epochs
    cfg = X.train_config(p, **over)
    low, high = _dataset_for(args, p, args.mode)
    loss_csv = args.loss_csv or str(Path(args.out).with_suffix(".loss.csv"))
    sink = T.HistoryCSV(loss_csv)
    try:
        st = X.train(p, low, high, args.mode, cfg, sink)
    finally:
        sink.close()
    T.save_training(args.out, st, p.grid, preset=p.name)
    last = st.history[-1] if st.history else {}
    print(f"trained {args.mode} model for {st.epoch} epochs; final L_MF={last.get('L_MF')}")
    return EXIT_OK


def cmd_rollout(args) -> int:
    p = _preset(args)
    if p.problem == "vp":
        raise ConfigError("use `mfsl vp` for Vlasov-Poisson presets")
    model, _ = _load_model(args.ckpt, p)
    params = X.test_params(p, args.ic_seed, 1)[0]
    steps = p.n_test_steps() if args.steps is None else args.steps
    run = X.model_rollout(p, model, params, steps)
    ref = X.reference(p, params, steps)
    traj = D.Trajectory(run.fields, p.dt * np.arange(steps + 1), "model", {"params": params})
    cols = {"reference": ref.fields}
    if args.emit_intermediate:
        cols["intermediate"] = [run.fields[0]] + list(run.intermediates)
    D.trajectory_to_csv(traj, args.out, cols)
    if args.plot:
        _plot_file(args.out, "line" if p.ndim == 1 else "contour", args.plot, None)
    print(f"rollout of {steps} steps: final MSE vs reference {X.final_mse(run.fields, ref):.4e}")
    return EXIT_OK


def _alpha_params(p, args):
    if args.alphas:
        vals = [float(v) for v in args.alphas.split(",")]
        keys = sorted(D.IC_RANGES[p.ic_kind])
        if len(vals) != len(keys):
            raise ConfigError(f"{p.ic_kind} takes {len(keys)} amplitudes")
        return dict(zip(keys, vals))
    if args.alpha is not None:
        if "alpha" not in D.IC_RANGES[p.ic_kind]:
            raise ConfigError(f"{p.ic_kind} takes --alphas")
        return {"alpha": args.alpha}
    return X.test_params(p)[0]


def _write_field_csv(f, path):
    g = f.grid
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "u"])
        for i, x in enumerate(g.x.centers):
            for j, y in enumerate(g.y.centers):
                w.writerow([repr(float(x)), repr(float(y)), repr(float(f.values[i, j]))])


def cmd_vp(args) -> int:
    p = _preset(args)
    if p.problem != "vp":
        raise ConfigError(f"preset {p.name} is not a Vlasov-Poisson preset")
    advect = split_sl_advect
    label = "sl-weno"
    if args.ckpt:
        model, _ = _load_model(args.ckpt, p)
        advect = L.learned_vp_advector(model)
        label = model.mode
    params = _alpha_params(p, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sink = DiagnosticsCSV(out / "diagnostics.csv")
    try:
        hist, s, secs = X.vp_rollout(p, params, advect, args.rkei, args.t_end, sink)
    finally:
        sink.close()
    save_field(out / "final.fld", s.f)
    _write_field_csv(s.f, out / "final.csv")
    (out / "run.json").write_text(json.dumps(
        {"preset": p.name, "advector": label, "rkei": args.rkei, "params": params,
         "t_end": s.t, "steps": len(hist) - 1}, indent=1, sort_keys=True))
    print(f"{label} + RKEI{args.rkei}: {len(hist) - 1} steps to t={s.t:.4g}, "
          f"final energy {hist[-1]['electric_energy']:.4e}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    p = _preset(args)
    models = []
    for path in args.ckpts or []:
        model, extra = _load_model(path, p)
        models.append((f"{model.mode}:{Path(path).name}", model))
    params_list = X.test_params(p, args.seed, args.samples)
    rows = []
    for k, params in enumerate(params_list):
        if p.problem == "vp":
            _, ref, _ = X.vp_rollout(p, params, grid=p.fine_grid, n_sub=_fine_substeps(p))
            ref_f = D.coarsen(ref.f, p.factor)
            runs = [("sl-weno", X.vp_rollout(p, params))]
            runs += [(name, X.vp_rollout(p, params, L.learned_vp_advector(m))) for name, m in models]
            for name, (_, s, secs) in runs:
                rows.append([k, name, float(np.mean((s.f.values - ref_f.values) ** 2)), secs])
        else:
            steps = p.n_test_steps() if args.steps is None else args.steps
            ref = X.reference(p, params, steps)
            runs = [(f"weno5-{'x'.join(map(str, p.grid.shape))}", X.weno_rollout(p, params, steps))]
            for r in args.refine or []:
                shape = "x".join(str(n * r) for n in p.grid.shape)
                runs.append((f"weno5-{shape}", X.weno_rollout(p, params, steps, r)))
            runs += [(name, X.model_rollout(p, m, params, steps)) for name, m in models]
            for name, run in runs:
                rows.append([k, name, X.final_mse(run.fields, ref), run.seconds])
    base = {r[0]: r[3] for r in rows if r[1] == rows[0][1]}
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "method", "mse", "seconds", "time_ratio_vs_" + rows[0][1]])
        for r in rows:
            w.writerow([r[0], r[1], repr(r[2]), repr(r[3]), repr(r[3] / base[r[0]])])
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def _fine_substeps(p) -> int:
    return max(1, int(np.ceil(p.factor * p.cfl / p.fine_cfl - 1e-9)))


def _read_csv(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if len(rows) < 2:
        raise ConfigError(f"{path}: CSV needs a header and at least one row")
    header, body = rows[0], rows[1:]
    if any(len(r) != len(header) for r in body):
        raise ConfigError(f"{path}: ragged CSV")
    cols = {}
    for j, name in enumerate(header):
        try:
            cols[name] = np.array([float(r[j]) if r[j] != "" else np.nan for r in body])
        except ValueError as exc:
            raise ConfigError(f"{path}: non-numeric value in column {name!r}") from exc
    return header, cols


def _plot_file(path_in, kind, path_out, step, value=None, title=None) -> None:
    header, cols = _read_csv(path_in)
    if "step" in cols:
        s = cols["step"].max() if step is None else step
        keep = cols["step"] == s
        if not keep.any():
            raise ConfigError(f"no rows for step {s}")
        cols = {k: v[keep] for k, v in cols.items()}
    title = title if title is not None else Path(path_in).stem
    if kind == "line":
        xkey = "x" if "x" in cols else header[0]
        skip = {xkey, "step", "t", "y"} if xkey == "x" else {xkey}
        series = {k: (cols[k], cols[k]) for k in header if k not in skip}
        series = {k: (cols[xkey][~np.isnan(v)], v[~np.isnan(v)])
                  for k, (_, v) in series.items() if (~np.isnan(v)).any()}
        svg = line_svg(series, title)
    else:
        if "x" not in cols or "y" not in cols:
            raise ConfigError("contour plots need x and y columns")
        vkey = value or ("u" if "u" in cols else header[-1])
        x, y, z = grid_from_long(cols["x"], cols["y"], cols[vkey])
        svg = contour_svg(x, y, z, title)
    Path(path_out).write_text(svg)


def cmd_plot(args) -> int:
    try:
        _plot_file(args.input, args.kind, args.out, args.step, args.value, args.title)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return EXIT_OK


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mfsl", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def with_preset(sp):
        sp.add_argument("--preset", required=True, choices=sorted(PRESETS))
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a preset constant")

    sp = sub.add_parser("datagen", help="generate low/high-fidelity training trajectories")
    with_preset(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--n-low", type=int)
    sp.add_argument("--n-high", type=int)
    sp.set_defaults(func=cmd_datagen)

    sp = sub.add_parser("train", help="train a model on a generated dataset")
    with_preset(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--mode", choices=L.MODES, default="mf")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--loss-csv")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("rollout", help="roll a trained model forward against the reference")
    with_preset(sp)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--ic-seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--emit-intermediate", action="store_true")
    sp.add_argument("--plot", metavar="SVG")
    sp.set_defaults(func=cmd_rollout)

    sp = sub.add_parser("vp", help="run a Vlasov-Poisson simulation")
    with_preset(sp)
    sp.add_argument("--ckpt", help="learned advector (default: classical SL-WENO)")
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--alphas", help="comma-separated amplitudes")
    sp.add_argument("--t-end", type=float)
    sp.add_argument("--rkei", type=int, choices=(1, 2), default=2)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_vp)

    sp = sub.add_parser("evaluate", help="MSE and run-time table against on-demand references")
    with_preset(sp)
    sp.add_argument("--ckpts", nargs="*")
    sp.add_argument("--samples", type=int)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--refine", type=int, action="append",
                    help="also time WENO5 on a grid refined by this factor")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("plot", help="render a CSV as an SVG line or contour plot")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--kind", choices=("line", "contour"), default="line")
    sp.add_argument("--out", required=True)
    sp.add_argument("--step", type=int)
    sp.add_argument("--value")
    sp.add_argument("--title")
    sp.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except T.TrainingDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except L.RolloutDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ROLLOUT
    except VPStepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ROLLOUT if args.command in ("vp", "evaluate") else EXIT_SOLVER
    except D.TrajectoryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, PresetError, D.DatasetError, L.ConventionError, CheckpointError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
