import math

import numpy as np
import pytest

import tirelearn as tl


def test_exptanh_extrema_match_grid():
    a = (50.0, -6000.0, 1.5, 12.0, 0.01)
    assert tl.extrema_on_branch(*a)
    z_plus, z_minus = tl.exptanh_extrema(*a)
    zs = np.linspace(-1.0, 1.0, 200001)
    ys = np.array([tl.exptanh_eval(z, *a) for z in zs])
    assert abs(zs[ys.argmin()] - z_plus) < 2e-5
    assert abs(zs[ys.argmax()] - z_minus) < 2e-5


def test_curves_are_odd_with_lateral_sign():
    for s in (0.01, 0.1, 0.4):
        mf = tl.magic_formula_force(s, 10.0, 1.5, 7000.0, 0.3)
        assert mf < 0.0
        assert tl.magic_formula_force(-s, 10.0, 1.5, 7000.0, 0.3) == pytest.approx(-mf)
        fi = tl.fiala_force(s, 1.0e5, 1.0, 7000.0)
        assert fi < 0.0
        assert tl.fiala_force(s, 1.0e5, 1.0, 7000.0, lateral=False) == pytest.approx(-fi, rel=1e-2)


def test_plant_tires():
    front, rear = tl.plant_tires("a")
    assert front.kind == "magic_formula"
    assert front.regime == "pure_lateral"
    assert rear.regime == "combined"
    fx, fy = front.evaluate(0.05)
    assert fx == 0.0 and fy < 0.0
    fx, fy = rear.evaluate(0.0, 0.05)
    assert fx > 0.0 and abs(fy) < 1e-9
    with pytest.raises(tl.TirelearnError):
        tl.plant_tires("z")


def test_config_errors():
    cfg = tl.merge_config({"fit": {"epochs": 3}})
    assert cfg["fit"]["epochs"] == 3
    assert cfg["seed"] == tl.default_config()["seed"]
    with pytest.raises(tl.TirelearnError, match="fit.wings"):
        tl.merge_config({"fit": {"wings": 2}})
    with pytest.raises(ValueError):
        tl.run("frobnicate")


def test_drift_equilibrium():
    eq = tl.drift_equilibrium(1.0 / 12.0, 8.0, plant="a", branch="drift")
    assert eq["residual"] < 1e-6
    assert eq["beta"] < -0.2
    assert eq["r"] == pytest.approx(8.0 / 12.0)


def test_gen_data_fit_round_trip(tmp_path):
    summary = tl.run("gen-data", {"gen_data": {"duration": 2.0}}, tmp_path / "data")
    data = tl.read_dataset(tmp_path / "data" / "dataset.csv")
    assert len(data["fyf"]) == summary["rows"]
    assert all(math.isfinite(v) for v in data["fyf"])

    fit = tl.run(
        "fit",
        {"fit": {"kind": "exptanh_pure", "axle": "front", "epochs": 2, "dataset": str(tmp_path / "data" / "dataset.csv")}},
        tmp_path / "fit",
    )
    assert fit["kind"] == "exptanh_pure"
    model = tl.load_model(str(tmp_path / "fit" / "model.json"))
    assert model.kind == "exptanh_pure"
    fx, fy = model.evaluate(0.02, v=8.0)
    assert fx == 0.0 and math.isfinite(fy)
    assert model.peak_force(v=8.0) > 0.0
