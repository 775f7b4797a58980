import csv
import json
import math
import time

import numpy as np
import pytest

from mfsl import cli
from mfsl import data as D
from mfsl import learned as L
from mfsl.mesh import load_field
from mfsl.presets import get_preset
from mfsl.transport import trace_shifts_1d


def run(*argv):
    return cli.main([str(a) for a in argv])


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    t0 = time.perf_counter()
    assert run("datagen", "--preset", "ex1_square", "--out", data, "--n-low", 2, "--n-high", 1,
               "--seed", 3) == 0
    elapsed = time.perf_counter() - t0
    ckpts = {}
    for mode in ("mf", "lowfi", "hifi"):
        ckpts[mode] = root / f"{mode}.ckpt"
        assert run("train", "--preset", "ex1_square", "--data", data, "--out", ckpts[mode],
                   "--mode", mode, "--epochs", 1) == 0
    # one epoch on eight pairs is not a stable long-run model; the untrained
    # moving average is, so the 512-step rollout uses it
    ckpts["init"] = root / "init.ckpt"
    assert run("train", "--preset", "ex1_square", "--data", data, "--out", ckpts["init"],
               "--epochs", 0) == 0
    return root, data, ckpts, elapsed


def test_datagen_smoke_and_determinism(small, tmp_path):
    root, data, _, elapsed = small
    assert elapsed < 60
    man = json.loads((data / D.MANIFEST).read_text())
    assert man["counts"] == {"high": 1, "low": 2}
    assert run("datagen", "--preset", "ex1_square", "--out", tmp_path, "--n-low", 2, "--n-high", 1,
               "--seed", 3) == 0
    assert (tmp_path / D.MANIFEST).read_text() == (data / D.MANIFEST).read_text()
    for f in sorted(data.rglob("*.fld")):
        assert (tmp_path / f.relative_to(data)).read_bytes() == f.read_bytes()


def test_datagen_default_counts(tmp_path):
    assert run("datagen", "--preset", "ex1_square", "--out", tmp_path) == 0
    assert json.loads((tmp_path / D.MANIFEST).read_text())["counts"] == {"high": 15, "low": 30}


def test_train_three_modes(small):
    root, _, ckpts, _ = small
    assert all(p.exists() for p in ckpts.values())
    modes = {L.load_model(ckpts[m])[0].mode for m in ("mf", "lowfi", "hifi")}
    assert modes == {"mf", "lowfi", "hifi"}
    rows = read_rows(ckpts["mf"].with_suffix(".loss.csv"))
    assert list(rows[0]) == ["epoch", "L_LF", "L_HF", "L_MF"]
    assert rows[0]["L_LF"] != "" and rows[0]["L_HF"] != ""
    lo = read_rows(ckpts["lowfi"].with_suffix(".loss.csv"))
    assert lo[0]["L_HF"] == ""


def test_train_lowfi_ignores_high_files(small, tmp_path):
    import shutil
    _, data, _, _ = small
    copy = tmp_path / "d"
    shutil.copytree(data, copy)
    # corrupting only the high-fidelity trajectory leaves lowfi training untouched
    for f in (copy / "high_0000").glob("*.fld"):
        f.write_bytes(b"garbage")
    assert run("train", "--preset", "ex1_square", "--data", copy, "--out", tmp_path / "m.ckpt",
               "--mode", "lowfi", "--epochs", 1) == 0
    assert run("train", "--preset", "ex1_square", "--data", copy, "--out", tmp_path / "n.ckpt",
               "--mode", "mf", "--epochs", 1) == 2


def test_rollout_512_and_intermediate(small, tmp_path):
    _, _, ckpts, _ = small
    out = tmp_path / "r.csv"
    assert run("rollout", "--preset", "ex1_square", "--ckpt", ckpts["init"], "--out", out,
               "--emit-intermediate", "--plot", tmp_path / "r.svg") == 0
    rows = read_rows(out)
    assert sorted({int(r["step"]) for r in rows}) == list(range(513))
    assert set(rows[0]) == {"step", "t", "x", "u", "reference", "intermediate"}
    assert (tmp_path / "r.svg").read_text().startswith("<svg")
    # the intermediate column is the low-fidelity step applied to the previous state
    p = get_preset("ex1_square")
    model = L.load_model(ckpts["init"])[0]
    g = p.grid
    u = {s: np.array([float(r["u"]) for r in rows if int(r["step"]) == s]) for s in (3, 4)}
    inter = np.array([float(r["intermediate"]) for r in rows if int(r["step"]) == 4])
    from mfsl.mesh import CellField
    xi = trace_shifts_1d(p.velocity_field(), g, 4 * p.dt, p.dt)
    hand = L.lowfi_step(model, CellField(g, u[3]), xi).values
    np.testing.assert_allclose(inter, hand, atol=1e-15)


def test_rollout_zero_steps_echoes_ic(small, tmp_path):
    _, _, ckpts, _ = small
    out = tmp_path / "r0.csv"
    assert run("rollout", "--preset", "ex1_square", "--ckpt", ckpts["lowfi"], "--steps", 0,
               "--out", out) == 0
    rows = read_rows(out)
    p = get_preset("ex1_square")
    from mfsl import experiments as X
    u0 = X.initial_field(p, X.test_params(p, 0, 1)[0]).values
    assert len(rows) == 32 and [float(r["u"]) for r in rows] == u0.tolist()


def test_rollout_divergence_exit_code(tmp_path):
    p = get_preset("ex1_square")
    m = L.build_model(p.stencil_config, "lowfi", 2, 4, 3)
    m.f_L.biases[-1][:] = [3.0, -5.0, 5.0, -5.0, 3.0]
    L.save_model(tmp_path / "bad.ckpt", m, grid=p.grid)
    assert run("rollout", "--preset", "ex1_square", "--ckpt", tmp_path / "bad.ckpt", "--out",
               tmp_path / "x.csv") == 5


def test_vp_runs(tmp_path):
    common = ["vp", "--preset", "ex5_landau", "--alpha", 0.5, "--t-end", 0.45]
    assert run(*common, "--rkei", 1, "--out", tmp_path / "a") == 0
    assert run(*common, "--rkei", 2, "--out", tmp_path / "b") == 0
    g = get_preset("ex5_landau").grid
    fa, fb = (load_field(tmp_path / d / "final.fld", g) for d in "ab")
    assert not np.array_equal(fa.values, fb.values)
    rows = read_rows(tmp_path / "b" / "diagnostics.csv")
    assert len(rows) == 5
    mass = [float(r["total_mass"]) for r in rows]
    assert max(abs(m - mass[0]) for m in mass) <= 1e-11 * mass[0]
    # E(x, 0) = (alpha / k) sin(k x) with k = 1/2, so half its square integrates to 4 pi alpha^2
    e0 = float(rows[0]["electric_energy"])
    assert e0 == pytest.approx(4 * math.pi * 0.5 ** 2, rel=1e-2)
    run_meta = json.loads((tmp_path / "b" / "run.json").read_text())
    assert run_meta["steps"] == 4 and run_meta["params"] == {"alpha": 0.5}
    assert len((tmp_path / "b" / "final.csv").read_text().splitlines()) == 1 + 32 * 64


def test_vp_energy_scaling(tmp_path):
    energies = []
    for a in (0.05, 0.1):
        assert run("vp", "--preset", "ex5_landau", "--alpha", a, "--t-end", 0.1,
                   "--out", tmp_path / str(a)) == 0
        energies.append(float(read_rows(tmp_path / str(a) / "diagnostics.csv")[0]["electric_energy"]))
    assert energies[0] == pytest.approx(0.01 * math.pi, rel=1e-2)
    assert energies[1] / energies[0] == pytest.approx(4.0, rel=1e-6)


def test_vp_with_learned_model(tmp_path):
    p = get_preset("ex5_landau")
    m = L.build_model(p.stencil_config, "mf", 2, 4, 3)
    L.save_model(tmp_path / "m.ckpt", m, grid=p.grid)
    assert run("vp", "--preset", "ex7_three_mode", "--alphas", "0.01,0.01,0.01", "--ckpt",
               tmp_path / "m.ckpt", "--t-end", 0.2, "--out", tmp_path / "v") == 0
    meta = json.loads((tmp_path / "v" / "run.json").read_text())
    assert meta["advector"] == "mf" and meta["steps"] == 2


def test_evaluate_table(small, tmp_path):
    _, _, ckpts, _ = small
    out = tmp_path / "e.csv"
    assert run("evaluate", "--preset", "ex1_square", "--ckpts", ckpts["mf"], ckpts["lowfi"],
               "--samples", 2, "--steps", 4, "--refine", 2, "--out", out) == 0
    rows = read_rows(out)
    assert len(rows) == 2 * 4
    assert [r["method"] for r in rows[:4]] == ["weno5-32", "weno5-64", "mf:mf.ckpt", "lowfi:lowfi.ckpt"]
    assert all(float(r["time_ratio_vs_weno5-32"]) == 1.0 for r in rows if r["method"] == "weno5-32")


def test_identical_fields_mse_zero():
    from mfsl import experiments as X
    p = get_preset("ex1_square")
    ref = X.reference(p, {"height": 0.5, "width": 0.3, "center": 0.5}, 2)
    assert X.final_mse(ref.fields, ref) == 0.0


def test_plot_line_and_contour(tmp_path):
    (tmp_path / "a.csv").write_text("x,u\n0,1\n1,2\n")
    assert run("plot", "--in", tmp_path / "a.csv", "--out", tmp_path / "a.svg") == 0
    assert (tmp_path / "a.svg").read_text().count("<polyline") == 1
    rows = ["x,y,u"] + [f"{x},{y},0.5" for x in range(4) for y in range(4)]
    (tmp_path / "c.csv").write_text("\n".join(rows) + "\n")
    assert run("plot", "--in", tmp_path / "c.csv", "--kind", "contour", "--out",
               tmp_path / "c.svg") == 0
    assert "<path" not in (tmp_path / "c.svg").read_text()
    first = (tmp_path / "c.svg").read_bytes()
    run("plot", "--in", tmp_path / "c.csv", "--kind", "contour", "--out", tmp_path / "c.svg")
    assert (tmp_path / "c.svg").read_bytes() == first


@pytest.mark.parametrize("body", ["x,u\n0,1\n1\n", "x,u\n", "x,u\n0,abc\n"])
def test_plot_malformed(tmp_path, body):
    (tmp_path / "b.csv").write_text(body)
    assert run("plot", "--in", tmp_path / "b.csv", "--out", tmp_path / "b.svg") == 2


def test_config_exit_codes(small, tmp_path):
    _, data, ckpts, _ = small
    assert run("datagen", "--preset", "ex99", "--out", tmp_path) == 2
    assert run("datagen", "--preset", "ex1_square", "--set", "nope=1", "--out", tmp_path) == 2
    assert run("rollout", "--preset", "ex5_landau", "--ckpt", ckpts["mf"], "--out", tmp_path / "x") == 2
    assert run("vp", "--preset", "ex1_square", "--out", tmp_path / "v") == 2
    assert run("vp", "--preset", "ex7_three_mode", "--alpha", 0.1, "--out", tmp_path / "v") == 2
    # a 1D checkpoint against a 2D preset violates the model conventions
    assert run("vp", "--preset", "ex5_landau", "--ckpt", ckpts["mf"], "--out", tmp_path / "v") == 2
    assert run("train", "--preset", "ex3_variable", "--data", data, "--out",
               tmp_path / "m.ckpt", "--epochs", 1) == 2
    assert run("train", "--preset", "ex1_square", "--data", tmp_path / "none", "--out",
               tmp_path / "m.ckpt") == 2
    assert run() == 2


def test_solver_failure_exit_code(tmp_path):
    # a far-from-neutral background drives a field whose velocity shifts exceed the cap
    assert run("datagen", "--preset", "ex5_landau", "--set", "background=1000", "--set", "low_steps=1",
               "--n-low", 1, "--n-high", 0, "--out", tmp_path) == 3


def test_training_divergence_exit_code(small, tmp_path):
    _, data, _, _ = small
    assert run("train", "--preset", "ex1_square", "--set", "lr=1e4", "--data", data,
               "--out", tmp_path / "m.ckpt", "--mode", "lowfi", "--epochs", 3) == 4
