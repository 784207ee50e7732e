import json

import numpy as np
import pytest

from fishlen.cli import InputError, main, parse_groups
from fishlen.geometry import BoardSpec, CameraModel
from fishlen.synth import SynthCamera, generate_calibration_views


@pytest.fixture(scope="module")
def cams(synth_tree, tmp_path_factory):
    src, _ = synth_tree
    out = tmp_path_factory.mktemp("cams")
    assert main(["calibrate", str(src / "calibration"), "--out", str(out)]) == 0
    return out


def run(*argv):
    return main([str(a) for a in argv])


def test_parse_groups():
    assert parse_groups("1,3,5-8") == [1, 3, 5, 6, 7, 8]
    assert parse_groups(None) is None
    for bad in ("x", "5-3", "1,,2"):
        with pytest.raises(InputError):
            parse_groups(bad)


def test_usage_errors_exit_2(tmp_path, capsys):
    assert run("skl") == 2
    assert run("nonsense") == 2
    assert run("synth", "--out", tmp_path / "s", "--groups", "a-b") == 2
    assert "bad group" in capsys.readouterr().err


# ---------------------------------------------------------------- calibrate


def test_calibrate_writes_usable_cameras(cams, synth_tree):
    _, ds = synth_tree
    report = json.loads((cams / "calibration_report.json").read_text())
    assert [r["group"] for r in report] == [3, 7]
    assert all(r["rms_px"] <= r["initial_rms_px"] for r in report)
    for g, sc in ds.cameras.items():
        cam = CameraModel.load(cams / f"camera_group_{g:02d}.json")
        px = np.random.default_rng(g).uniform([0, 0], [2463, 2055], (200, 2))
        assert np.abs(cam.distort(cam.undistort(px)) - px).max() < 1e-6
        # belt frames differ by a rigid motion (origin sits on the flat board), so compare distances
        a, b = cam.to_belt(px), sc.backproject(px)
        da = np.linalg.norm(a[:, None] - a[None], axis=-1)
        db = np.linalg.norm(b[:, None] - b[None], axis=-1)
        assert np.abs(da - db).max() < 0.05


def test_calibrate_refuses_overwrite(cams, synth_tree, capsys):
    src, _ = synth_tree
    before = (cams / "camera_group_03.json").read_bytes()
    assert run("calibrate", src / "calibration", "--out", cams) == 2
    assert "refusing to overwrite" in capsys.readouterr().err
    assert (cams / "camera_group_03.json").read_bytes() == before


def test_calibrate_force_is_deterministic(cams, synth_tree):
    src, _ = synth_tree
    before = (cams / "camera_group_07.json").read_bytes()
    assert run("calibrate", src / "calibration", "--out", cams, "--force") == 0
    assert (cams / "camera_group_07.json").read_bytes() == before


def test_calibrate_missing_flat_view_names_group(synth_tree, tmp_path, capsys):
    src, _ = synth_tree
    d = json.loads((src / "calibration" / "group_07.json").read_text())
    for v in d["views"]:
        v["flat_on_belt"] = False
    (tmp_path / "in").mkdir()
    (tmp_path / "in" / "group_07.json").write_text(json.dumps(d))
    (tmp_path / "in" / "group_03.json").write_text((src / "calibration" / "group_03.json").read_text())
    assert run("calibrate", tmp_path / "in", "--out", tmp_path / "out") == 2
    assert "group 7" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_calibrate_degenerate_views_exit_3(tmp_path, capsys):
    sc = SynthCamera.default()
    corners = BoardSpec().corners()
    views = []
    for i, shift in enumerate([(100, 100), (300, 200), (500, 300), (250, 400)]):
        px = sc.project(corners + shift)
        views.append({"flat_on_belt": i == 0, "correspondences": [
            {"image_xy": list(map(float, a)), "board_xy": list(map(float, b))} for a, b in zip(px, corners)]})
    f = tmp_path / "group_05.json"
    f.write_text(json.dumps({"board": {"square_mm": 20.0, "cols": 13, "rows": 8}, "views": views}))
    assert run("calibrate", f, "--out", tmp_path / "out") == 3
    assert "group 5" in capsys.readouterr().err


# ---------------------------------------------------------------- skl / eval


def test_skl_gt_mode(cams, synth_tree, tmp_path, capsys):
    src, ds = synth_tree
    out = tmp_path / "gt.json"
    assert run("skl", "--annotations", src / "annotations.json", "--cameras", cams, "--out", out, "--threads", 1) == 0
    recs = json.loads(out.read_text())
    keys = {(a["image_id"], a["attributes"]["fish_id"]) for a in ds.annotation["annotations"]}
    assert sorted((r["image_id"], r["fish_id"]) for r in recs) == sorted(keys)
    assert all(r["method"] == "skl" and r["length_mm"] > 0 for r in recs)
    assert "MAE" in capsys.readouterr().out
    again = tmp_path / "gt4.json"
    assert run("skl", "--annotations", src / "annotations.json", "--cameras", cams, "--out", again, "--threads", 4) == 0
    assert again.read_bytes() == out.read_bytes()


def test_skl_separated_regime_accuracy(cams, synth_tree, tmp_path, capsys):
    src, _ = synth_tree
    out = tmp_path / "sep.json"
    assert run("skl", "--annotations", src / "annotations.json", "--cameras", cams, "--out", out,
               "--regime", "separated") == 0
    line = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("MAE")][0]
    assert float(line.split()[1]) <= 0.3


def test_skl_pd_mode_all_below_threshold(cams, synth_tree, tmp_path, capsys):
    src, _ = synth_tree
    preds = json.loads((src / "predictions.json").read_text())
    for p in preds:
        p["score"] = min(p["score"], 0.95)
    (tmp_path / "p.json").write_text(json.dumps(preds))
    out = tmp_path / "pd.json"
    code = run("skl", "--annotations", src / "annotations.json", "--cameras", cams, "--predictions",
               tmp_path / "p.json", "--conf-threshold", 0.99, "--out", out)
    assert code == 0
    assert json.loads(out.read_text()) == []
    assert "warning" in capsys.readouterr().err


def test_skl_missing_camera(cams, synth_tree, tmp_path, capsys):
    src, _ = synth_tree
    (tmp_path / "c").mkdir()
    (tmp_path / "c" / "camera_group_03.json").write_bytes((cams / "camera_group_03.json").read_bytes())
    assert run("skl", "--annotations", src / "annotations.json", "--cameras", tmp_path / "c",
               "--out", tmp_path / "x.json") == 2
    assert "group 7" in capsys.readouterr().err
    assert not (tmp_path / "x.json").exists()


def test_skl_bad_threshold(cams, synth_tree, tmp_path):
    src, _ = synth_tree
    assert run("skl", "--annotations", src / "annotations.json", "--cameras", cams, "--out", tmp_path / "x.json",
               "--conf-threshold", 1.5) == 2


def test_eval_seg(synth_tree, tmp_path):
    src, _ = synth_tree
    args = ["eval-seg", "--annotations", src / "annotations.json", "--predictions", src / "predictions.json"]
    assert run(*args, "--out", tmp_path / "a", "--threads", 1) == 0
    assert run(*args, "--out", tmp_path / "b", "--threads", 3) == 0
    for name in ("seg_report.json", "seg_report.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rep = json.loads((tmp_path / "a" / "seg_report.json").read_text())
    assert 0.5 < rep["mAP"] <= 1.0
    assert run(*args, "--out", tmp_path / "a") == 2


def test_eval_len_gt_and_pd(cams, synth_tree, tmp_path, capsys):
    src, _ = synth_tree
    ann = src / "annotations.json"
    assert run("skl", "--annotations", ann, "--cameras", cams, "--out", tmp_path / "gt.json") == 0
    assert run("eval-len", "--annotations", ann, "--lengths", tmp_path / "gt.json", "--out", tmp_path / "e1",
               "--trials", 20, "--seed", 3) == 0
    assert run("eval-len", "--annotations", ann, "--lengths", tmp_path / "gt.json", "--out", tmp_path / "e2",
               "--trials", 20, "--seed", 3) == 0
    for name in ("length_report.json", "length_histogram.csv", "aggregation.json", "aggregation.csv"):
        assert (tmp_path / "e1" / name).read_bytes() == (tmp_path / "e2" / name).read_bytes()
    rep = json.loads((tmp_path / "e1" / "length_report.json").read_text())
    assert rep["n"] == sum(rep["histogram"]["counts"])
    curve = json.loads((tmp_path / "e1" / "aggregation.json").read_text())
    assert curve["n_values"] == [1, 2]  # each fish is seen exactly twice in this tree

    assert run("skl", "--annotations", ann, "--cameras", cams, "--predictions", src / "predictions.json",
               "--out", tmp_path / "pd.json") == 0
    capsys.readouterr()
    assert run("eval-len", "--annotations", ann, "--lengths", tmp_path / "pd.json", "--predictions",
               src / "predictions.json", "--out", tmp_path / "e3", "--n-values", "1") == 0
    assert "unmatched" in capsys.readouterr().out


def test_eval_len_bad_inputs(synth_tree, tmp_path):
    src, _ = synth_tree
    (tmp_path / "l.json").write_text("{}")
    assert run("eval-len", "--annotations", src / "annotations.json", "--lengths", tmp_path / "l.json",
               "--out", tmp_path / "o") == 2
    assert run("eval-len", "--annotations", src / "annotations.json", "--lengths", tmp_path / "l.json",
               "--out", tmp_path / "o", "--clip-cm", 0) == 2
    assert not (tmp_path / "o").exists()


# ---------------------------------------------------------------- synth / config


def test_synth_deterministic_and_guarded(tmp_path):
    args = ["synth", "--groups", "2", "--fish-per-group", 2, "--images-per-set", 1, "--seed", 4, "--predictions"]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b") == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert {str(f) for f in files} == {"annotations.json", "calibration/group_02.json", "predictions.json", "truth.csv"}
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert run(*args, "--out", tmp_path / "a") == 2


def test_config_defaults_and_override(synth_tree, cams, tmp_path, capsys):
    src, _ = synth_tree
    base = ["skl", "--annotations", src / "annotations.json", "--cameras", cams, "--predictions",
            src / "predictions.json"]
    (tmp_path / "c.json").write_text(json.dumps({"conf-threshold": 0.999999, "threads": 1}))
    assert run(*base, "--config", tmp_path / "c.json", "--out", tmp_path / "a.json") == 0
    assert json.loads((tmp_path / "a.json").read_text()) == []
    (tmp_path / "c.txt").write_text("# defaults\nconf_threshold = 0.999999\n")
    assert run(*base, "--config", tmp_path / "c.txt", "--conf-threshold", 0.0, "--out", tmp_path / "b.json") == 0
    assert len(json.loads((tmp_path / "b.json").read_text())) > 0
    (tmp_path / "bad.txt").write_text("colour = red\n")
    capsys.readouterr()
    assert run(*base, "--config", tmp_path / "bad.txt", "--out", tmp_path / "c.json") == 2
    assert "unknown option" in capsys.readouterr().err


def test_calibrate_25_groups(tmp_path):
    for g in range(1, 26):
        sc = SynthCamera.default(k1=-0.05, tilt_deg=0.5, seed=g)
        d = generate_calibration_views(sc, seed=100 + g, group=g)
        (tmp_path / "in").mkdir(exist_ok=True)
        (tmp_path / "in" / f"group_{g:02d}.json").write_text(json.dumps(d))
    assert run("calibrate", tmp_path / "in", "--out", tmp_path / "out", "--threads", 4) == 0
    cams = sorted((tmp_path / "out").glob("camera_group_*.json"))
    assert len(cams) == 25
    report = json.loads((tmp_path / "out" / "calibration_report.json").read_text())
    assert all(r["rms_px"] < 1e-6 for r in report)
    px = np.random.default_rng(0).uniform([0, 0], [2463, 2055], (500, 2))
    for f in cams:
        cam = CameraModel.load(f)
        assert np.abs(cam.distort(cam.undistort(px)) - px).max() < 1e-6


def test_skl_separated_200_fish(tmp_path, capsys):
    # 5 groups x 2 separated sets x 5 images x 4 fish = 200 separated instances
    assert run("synth", "--out", tmp_path / "d", "--groups", "1-5", "--fish-per-group", 8,
               "--images-per-set", 5, "--seed", 11) == 0
    assert run("calibrate", tmp_path / "d" / "calibration", "--out", tmp_path / "c") == 0
    capsys.readouterr()
    assert run("skl", "--annotations", tmp_path / "d" / "annotations.json", "--cameras", tmp_path / "c",
               "--regime", "separated", "--out", tmp_path / "l.json") == 0
    out = capsys.readouterr().out
    assert len(json.loads((tmp_path / "l.json").read_text())) == 200
    mae = float(next(ln for ln in out.splitlines() if ln.startswith("MAE")).split()[1])
    assert mae <= 0.3
