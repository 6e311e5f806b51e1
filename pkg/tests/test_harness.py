import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import furnace_scene
from semigrad.cache import CacheParams, EncodingConfig, checkpoint, constant_params, parameter_count
from semigrad.cli import main, parse_estimator, UsageError
from semigrad.errors import ConfigurationError
from semigrad.harness.compare import compare
from semigrad.harness.metrics import compute_metrics
from semigrad.harness.render import render
from semigrad.harness.scenefile import (BUNDLED, SceneFileError, load_scene, parse_scene, save_scene,
                                        serialize_scene)
from semigrad.harness.verify import SUITES, verify
from semigrad.image import Image, read_pfm, write_pfm, write_ppm
from semigrad.trainer import TrainConfig
from semigrad.transport import Camera, Material, Primitive, Quad, Scene

SMALL = dict(N=32, M=2, width=8, layers=2, frequencies=1, chunk=32)

SCENE_TEXT = """\
format_version: 1
name: tiny
camera:
  position: [0, 0, 0]
  look_at: [0, 0, 1]
  vfov: 60
  resolution: [4, 4]
materials:
- name: wall
  albedo: [0.5, 0.5, 0.5]
primitives:
- quad: {origin: [-5, -5, 1], edge1: [0, 10, 0], edge2: [10, 0, 0]}
  material: wall
  emission: [1, 1, 1]
"""


# ---------------------------------------------------------------- scene files

@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_scene_round_trip(name, tmp_path):
    sc = load_scene(name)
    again = parse_scene(serialize_scene(sc))
    assert again == sc
    save_scene(tmp_path / "s.yaml", sc)
    assert load_scene(str(tmp_path / "s.yaml")) == sc


def test_parse_scene_text():
    sc = parse_scene(SCENE_TEXT)
    assert sc.name == "tiny" and sc.camera.width == 4
    assert sc.primitives[0].emission == (1.0, 1.0, 1.0)


@pytest.mark.parametrize("old,new,needle", [
    ("format_version: 1", "format_version: 2", "format_version"),
    ("vfov: 60", "vfov: 60\n  zoom: 2", "zoom"),
    ("material: wall", "material: brick", "primitives[0]"),
    ("emission: [1, 1, 1]", "emission: [1, -1, 1]", "primitives[0]"),
    ("albedo: [0.5, 0.5, 0.5]", "albedo: [0.5, 0.5]", "materials[0]"),
])
def test_scene_diagnostics_name_line_and_field(old, new, needle):
    text = SCENE_TEXT.replace(old, new)
    with pytest.raises(SceneFileError) as info:
        parse_scene(text, "bad.yaml")
    msg = str(info.value)
    assert msg.startswith("bad.yaml:") and needle in msg
    line = int(msg.split(":")[1])
    assert 1 <= line <= text.count("\n") + 1


def test_scene_syntax_error():
    with pytest.raises(SceneFileError, match="YAML"):
        parse_scene("camera: [1, 2", "x.yaml")
    with pytest.raises(ConfigurationError):
        load_scene("/nonexistent/scene.yaml")


# ---------------------------------------------------------------- images and metrics

def test_pfm_bit_exact_and_ppm_lossy(tmp_path):
    px = np.random.default_rng(0).normal(size=(3, 5, 3))
    write_pfm(tmp_path / "a.pfm", Image(px))
    assert np.array_equal(read_pfm(tmp_path / "a.pfm").pixels, px)
    write_pfm(tmp_path / "b.pfm", Image(px), dtype="<f4")
    np.testing.assert_allclose(read_pfm(tmp_path / "b.pfm").pixels, px, rtol=1e-7)
    write_ppm(tmp_path / "a.ppm", Image(px))
    data = (tmp_path / "a.ppm").read_bytes()
    assert data.startswith(b"P6\n5 3\n255\n") and len(data) == len(b"P6\n5 3\n255\n") + 45


def test_metrics_examples():
    one, two = Image(np.ones((1, 1, 3))), Image(np.full((1, 1, 3), 2.0))
    m = compute_metrics(two, one, 0.01)
    assert m.mse == 1.0
    np.testing.assert_allclose([m.mape, m.relmse], 1 / 1.01, rtol=1e-15)
    np.testing.assert_allclose(m.mape, 0.9901, atol=1e-4)
    z = compute_metrics(one, one)
    assert z.mse == z.mape == z.relmse == 0.0


def test_metrics_shape_mismatch():
    with pytest.raises(ConfigurationError):
        compute_metrics(Image(np.ones((2, 2, 3))), Image(np.ones((2, 3, 3))))


pix = arrays(np.float64, (3, 4, 3), elements=st.floats(0, 10))
lit = arrays(np.float64, (3, 4, 3), elements=st.floats(0.1, 10))


@settings(max_examples=50, deadline=None)
@given(pix, lit)
def test_metric_properties(a, b):
    ab, ba = compute_metrics(a, b, error_map=True), compute_metrics(b, a)
    assert ab.mse == ba.mse
    assert ab.mse >= 0 and ab.mape >= 0 and ab.relmse >= 0
    assert ab.error_map.shape == (3, 4)
    # MAPE is scale invariant up to the epsilon in its denominator
    s = compute_metrics(2 * a, 2 * b, eps_metric=1e-9)
    u = compute_metrics(a, b, eps_metric=1e-9)
    assert abs(s.mape - u.mape) <= 1e-7 * max(1.0, u.mape)


# ---------------------------------------------------------------- render

def emitter_wall(E=5.0, albedo=0.0):
    wall = Primitive(Quad((-10, -10, 1), (0, 20, 0), (20, 0, 0)), 0, (E,) * 3)
    cam = Camera((0, 0, 0), (0, 0, 1), (0, 1, 0), 60.0, 6, 5)
    return Scene([wall], [Material(albedo=(albedo,) * 3)], cam)


def zero_params():
    return CacheParams(np.zeros(parameter_count((18, 4, 3))), (18, 4, 3), EncodingConfig(1))


def test_lhs_zero_theta_on_emitter():
    img = render("lhs", emitter_wall(), zero_params(), seed=3)
    np.testing.assert_array_equal(img.pixels, 5.0)


def test_reference_equals_zero_cache_on_emitter():
    sc = emitter_wall(2.0)
    ref = render("reference", sc, spp=3, seed=1)
    lhs = render("lhs", sc, zero_params(), seed=1)
    assert np.array_equal(ref.pixels, lhs.pixels)


def test_rhs_with_exact_cache_on_furnace():
    sc = furnace_scene(0.5, 1.0, res=8)
    img = render("rhs", sc, constant_params(1.0), spp=16, M=16, seed=2)
    assert abs(img.pixels.mean() - 2.0) < 0.02


def test_render_errors_and_workers():
    sc = furnace_scene(0.5, 1.0, res=20)
    with pytest.raises(ConfigurationError):
        render("lhs", sc)
    with pytest.raises(ConfigurationError):
        render("depth", sc, zero_params())
    p = constant_params(0.3)
    a = render("rhs", sc, p, spp=2, seed=4, workers=1)
    b = render("rhs", sc, p, spp=2, seed=4, workers=4)
    assert np.array_equal(a.pixels, b.pixels)


# ---------------------------------------------------------------- verify

@pytest.mark.parametrize("suite", SUITES)
def test_verify_suites_pass(suite, tmp_path):
    report = verify(suite, seed=3)
    assert report.ok, report.first_failure()
    report.write_csv(tmp_path / "r.csv")
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert len(rows) == len(report.rows)
    assert {"seed", "estimator", "bias_norm", "variance", "lam", "M"} <= set(rows[0])


def test_verify_rejects_expanding_system():
    rows = verify("appendix-a", seed=0).rows
    guard = [r for r in rows if r.lam is not None and r.lam > 1.0]
    assert guard and all(r.passed for r in guard)


# ---------------------------------------------------------------- compare

def test_compare_identical_runs(tmp_path):
    sc = furnace_scene(0.5, 1.0, res=4)
    ref = Image(np.full((4, 4, 3), 2.0))
    cfg = TrainConfig(total_steps=4, **SMALL)
    curves = compare(sc, [cfg, cfg], ref, tmp_path, eval_every=2)
    a, b = curves
    assert a.steps == b.steps == [2, 4]
    assert a.relmse == b.relmse and a.mape == b.mape
    assert (tmp_path / "curves.csv").exists() and (tmp_path / "reference.pfm").exists()
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["seed"] == 0 and len(summary["runs"]) == 2
    with pytest.raises(ConfigurationError):
        compare(sc, [cfg], ref)


# ---------------------------------------------------------------- CLI

def test_parse_estimator():
    assert parse_estimator("wdb:0.5") == {"estimator": "wdb", "w": 0.5}
    assert parse_estimator("generic:huber:full")["generic_mode"] == "full"
    for bad in ("xx", "wdb", "wdb:a", "sg:1", "generic:l7"):
        with pytest.raises(UsageError):
            parse_estimator(bad)


def test_cli_train_render_metrics(tmp_path, capsys):
    ck = str(tmp_path / "c.sgnc")
    flags = ["--scene", "furnace", "--steps", "3", "--batch-size", "32", "--samples", "2",
             "--width", "8", "--layers", "2", "--frequencies", "1", "--seed", "5"]
    assert main(["train", *flags, "--checkpoint", ck, "--log", str(tmp_path / "log.csv")]) == 0
    meta = json.loads(open(ck + ".json").read())
    assert meta["seed"] == 5 and meta["steps"] == 3
    params, adam, step = checkpoint.load(ck)
    assert step == 3 and adam.step == 3
    # resuming to the same total is a no-op
    assert main(["train", *flags, "--checkpoint", ck + "2", "--resume", ck]) == 0
    assert np.array_equal(checkpoint.load(ck + "2")[0].theta, params.theta)

    out = str(tmp_path / "lhs.pfm")
    assert main(["render", "--scene", "furnace", "--mode", "lhs", "--checkpoint", ck, "--out", out]) == 0
    ref = str(tmp_path / "ref.pfm")
    write_pfm(ref, Image(np.full((16, 16, 3), 2.0)))
    capsys.readouterr()
    assert main(["metrics", "--image", out, "--reference", ref]) == 0
    m = json.loads(capsys.readouterr().out)
    assert set(m) == {"mse", "mape", "relmse", "eps_metric"}


def test_cli_exit_codes(tmp_path, capsys):
    out = str(tmp_path / "x.pfm")
    assert main(["render", "--scene", "furnace", "--mode", "lhs", "--checkpoint",
                 str(tmp_path / "missing"), "--out", out]) == 1
    assert main(["render", "--scene", "nosuch.yaml", "--mode", "reference", "--out", out]) == 1
    with pytest.raises(SystemExit) as info:
        main(["train", "--bogus"])
    assert info.value.code == 1
    assert main(["verify", "--suite", "appendix-c", "--seed", "1"]) == 0
    bad = tmp_path / "bad.sgnc"
    bad.write_bytes(b"SGNC\x01")
    assert main(["render", "--scene", "furnace", "--mode", "lhs", "--checkpoint", str(bad),
                 "--out", out]) == 1


def test_cli_verify_failure_exit(monkeypatch, capsys):
    from semigrad import cli
    from semigrad.harness.verify import Row, VerifyReport

    def failing(suite, seed):
        return VerifyReport(seed, [Row(suite, "forced", seed, "db", 2, 1, 0.5, 0.0, 0.0, 1.0, 1e-12, False,
                                 "forced failure")])

    monkeypatch.setattr(cli, "verify", failing)
    assert main(["verify", "--suite", "appendix-c"]) == 2
    assert "forced" in capsys.readouterr().out


def test_cli_divergence_exit(tmp_path, monkeypatch):
    from semigrad import cli
    from semigrad.errors import DivergenceError

    def boom(*a, **k):
        raise DivergenceError("nan", {"step": 0})

    monkeypatch.setattr(cli, "train_step", boom)
    ck = str(tmp_path / "c.sgnc")
    assert main(["train", "--scene", "furnace", "--steps", "1", "--checkpoint", ck]) == 3
    assert json.loads(open(ck + ".divergence.json").read()) == {"step": 0}
