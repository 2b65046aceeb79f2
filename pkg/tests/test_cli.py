import json
import shutil

import numpy as np
import pytest

from skelstat.cli import main
from skelstat.dsrep import load_gp, load_lp, lp_size
from skelstat.population import lp_distance
from skelstat.reparam import lp_to_gp
from skelstat.simulation import DeformSpec, FrameAxis, rotate_frames


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if code == 0 and out.strip() else out), err


@pytest.fixture(scope="module")
def study_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("study")
    cfg = out / "config_in.json"
    cfg.write_text(json.dumps({"n_per_group": 6, "seed": 11}))
    assert main(["simulate", str(cfg), str(out / "sim")]) == 0
    return out / "sim"


class TestReparam:
    def test_round_trip_report(self, capsys, fixture_dir, tmp_path):
        code, info, _ = run(capsys, "reparam", fixture_dir / "ellipsoid_5x9_gp.json", tmp_path / "lp.json")
        assert code == 0
        assert info["round_trip"]["ok"]
        assert info["round_trip"]["max_position_error"] < 1e-8
        assert info["round_trip"]["max_direction_error"] < 1e-9
        assert info["K_lp"] == 2 * 110 + 5 * 45 + 1 and info["K_gp"] == 45 + 2 * 110 + 1
        code, info, _ = run(capsys, "reparam", "--direction", "lp2gp", tmp_path / "lp.json",
                            tmp_path / "gp.json")
        assert code == 0 and load_gp(tmp_path / "gp.json").n_p == 45

    def test_scale(self, capsys, fixture_dir, tmp_path):
        code, info, _ = run(capsys, "reparam", "--scale", fixture_dir / "ellipsoid_5x9_gp.json",
                            tmp_path / "lp.json")
        lp = load_lp(tmp_path / "lp.json")
        assert code == 0 and lp.scaled
        assert lp_size(lp) == pytest.approx(1.0, abs=1e-12)
        # the physical size travels with the file and is restored on reconstruction
        code, info, _ = run(capsys, "reparam", "--direction", "lp2gp", tmp_path / "lp.json",
                            tmp_path / "gp.json")
        assert info["restored_size"] == pytest.approx(lp.lp_size)

    def test_missing_file(self, capsys, tmp_path):
        code, _, err = run(capsys, "reparam", tmp_path / "nope.json", tmp_path / "out.json")
        assert code == 2
        assert json.loads(err)["exit_code"] == 2

    def test_invalid_file(self, capsys, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert run(capsys, "reparam", bad, tmp_path / "o.json")[0] == 2

    def test_usage(self, capsys):
        assert main(["reparam"]) == 2
        assert main(["frobnicate"]) == 2
        assert main(["--help"]) == 0


class TestSimulate:
    def test_layout_and_determinism(self, capsys, study_dir, tmp_path):
        a = sorted((study_dir / "group_a").glob("*.json"))
        b = sorted((study_dir / "group_b").glob("*.json"))
        assert len(a) == len(b) == 6
        resolved = json.loads((study_dir / "config.json").read_text())
        assert resolved["bend_nodes"] == [31, 30, 29] and resolved["seed"] == 11
        again = tmp_path / "again"
        code, _, _ = run(capsys, "simulate", study_dir.parent / "config_in.json", again)
        assert code == 0
        for f in a + b + [study_dir / "template.json"]:
            rel = f.relative_to(study_dir)
            assert (again / rel).read_bytes() == f.read_bytes()

    def test_threads_do_not_change_output(self, capsys, study_dir, tmp_path):
        code, _, _ = run(capsys, "--threads", 1, "simulate", study_dir.parent / "config_in.json",
                         tmp_path / "t1")
        assert code == 0
        f = "group_b/member_0003.json"
        assert (tmp_path / "t1" / f).read_bytes() == (study_dir / f).read_bytes()

    def test_zero_noise(self, capsys, tmp_path):
        cfg = tmp_path / "quiet.json"
        cfg.write_text(json.dumps({
            "n_per_group": 2, "seed": 0,
            "groups": [{"mu": 0.0, "kappa": None}, {"mu": -0.2, "kappa": None}],
            "noise": {"kappa_frame": None, "kappa_spoke": None, "kappa_conn": None,
                      "length_noise": None}}))
        assert run(capsys, "simulate", cfg, tmp_path / "sim")[0] == 0
        template = load_lp(tmp_path / "sim" / "template.json")
        spec = tmp_path / "bend.json"
        spec.write_text(json.dumps({"target_nodes": [31, 30, 29], "axis": "b_perp", "angle": -0.2}))
        assert run(capsys, "deform", tmp_path / "sim" / "template.json", spec, tmp_path / "bent.json")[0] == 0
        bent = load_lp(tmp_path / "bent.json")
        for i in range(2):
            assert lp_distance(load_lp(tmp_path / "sim" / "group_a" / f"member_{i:04d}.json"), template) == 0
            assert lp_distance(load_lp(tmp_path / "sim" / "group_b" / f"member_{i:04d}.json"), bent) == 0

    def test_bad_config(self, capsys, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"noise": {"kappa_frame": -1}}))
        assert run(capsys, "simulate", cfg, tmp_path / "x")[0] == 2


class TestDeform:
    @pytest.fixture
    def template(self, capsys, tmp_path):
        path = tmp_path / "template.json"
        assert run(capsys, "template", "--study", path)[0] == 0
        return path

    def test_zero_angle(self, capsys, template, tmp_path):
        spec = tmp_path / "s.json"
        spec.write_text(json.dumps({"target_nodes": [30], "axis": "n", "angle": 0.0}))
        assert run(capsys, "deform", template, spec, tmp_path / "o.json")[0] == 0
        assert (tmp_path / "o.json").read_bytes() == template.read_bytes()

    def test_bend_unbend(self, capsys, template, tmp_path):
        for name, angles in (("there", [0.3, -0.2, 0.4]), ("back", [-0.3, 0.2, -0.4])):
            (tmp_path / f"{name}.json").write_text(
                json.dumps({"target_nodes": [31, 30, 29], "axis": "b", "angle": angles}))
        assert run(capsys, "deform", template, tmp_path / "there.json", tmp_path / "bent.json")[0] == 0
        assert run(capsys, "deform", tmp_path / "bent.json", tmp_path / "back.json", tmp_path / "un.json")[0] == 0
        before, after = lp_to_gp(load_lp(template)), lp_to_gp(load_lp(tmp_path / "un.json"))
        np.testing.assert_allclose(after.points, before.points, atol=1e-9)

    def test_invalid_node(self, capsys, template, tmp_path):
        spec = tmp_path / "s.json"
        spec.write_text(json.dumps({"target_nodes": [4000], "angle": 0.1}))
        code, _, err = run(capsys, "deform", template, spec, tmp_path / "o.json")
        assert code == 2 and "invalid node 4000" in err

    def test_malformed_spec(self, capsys, template, tmp_path):
        spec = tmp_path / "s.json"
        spec.write_text(json.dumps({"axis": "n"}))
        assert run(capsys, "deform", template, spec, tmp_path / "o.json")[0] == 2


class TestMean:
    def test_single_member(self, capsys, study_dir, tmp_path):
        one = tmp_path / "one"
        one.mkdir()
        shutil.copy(study_dir / "group_a" / "member_0000.json", one)
        code, info, _ = run(capsys, "mean", one, tmp_path / "mean.json")
        assert code == 0 and info["members"] == 1
        from skelstat.dsrep import scale_lp
        member = scale_lp(load_lp(one / "member_0000.json"))
        assert lp_distance(load_lp(tmp_path / "mean.json"), member) < 1e-9

    def test_reference_and_reconstruct(self, capsys, study_dir, tmp_path):
        code, info, _ = run(capsys, "mean", study_dir / "group_a", tmp_path / "mean.json",
                            "--reference", study_dir / "template.json", "--kappa-frame", 600,
                            "--reconstruct", tmp_path / "mean_gp.json")
        assert code == 0
        dev = info["frame_deviation"]
        assert dev["bound"] == pytest.approx(3 / np.sqrt(6 * 600))
        assert load_gp(tmp_path / "mean_gp.json").n_p == 65
        tips = np.loadtxt(tmp_path / "mean_gp.tips.csv", delimiter=",", skiprows=1)
        assert tips.shape == (150, 3)

    def test_empty_dir(self, capsys, tmp_path):
        (tmp_path / "empty").mkdir()
        assert run(capsys, "mean", tmp_path / "empty", tmp_path / "m.json")[0] == 2

    def test_mismatch_names_files(self, capsys, study_dir, tmp_path, fixture_dir):
        mixed = tmp_path / "mixed"
        mixed.mkdir()
        shutil.copy(study_dir / "group_a" / "member_0000.json", mixed / "a.json")
        shutil.copy(fixture_dir / "ellipsoid_5x9_lp_scaled.json", mixed / "b.json")
        code, _, err = run(capsys, "mean", mixed, tmp_path / "m.json")
        assert code == 2 and "b.json" in err


class TestTest:
    def test_outputs(self, capsys, study_dir, tmp_path):
        code, summary, _ = run(capsys, "test", study_dir / "group_a", study_dir / "group_b",
                               "--out", tmp_path / "rep", "--B", 200, "--seed", 3)
        assert code == 0
        for name in ("report.csv", "summary.json", "significance_map.csv", "pvalues.svg"):
            assert (tmp_path / "rep" / name).exists()
        assert summary["K"] == 2 * 150 + 5 * 65 + 1 and summary["B"] == 200
        assert (tmp_path / "rep" / "pvalues.svg").read_text().startswith("<svg")
        first = (tmp_path / "rep" / "report.csv").read_bytes()
        run(capsys, "test", study_dir / "group_a", study_dir / "group_b",
            "--out", tmp_path / "rep2", "--B", 200, "--seed", 3)
        assert (tmp_path / "rep2" / "report.csv").read_bytes() == first

    def test_self_vs_self(self, capsys, study_dir, tmp_path):
        code, summary, _ = run(capsys, "test", study_dir / "group_a", study_dir / "group_a",
                               "--out", tmp_path / "self", "--B", 200)
        assert code == 0
        assert summary["significant"]["bh"] == 0
        assert summary["significant"]["raw"] <= 0.05 * summary["K"]

    def test_gp_mode_without_scaling(self, capsys, study_dir, tmp_path):
        code, summary, _ = run(capsys, "test", study_dir / "group_a", study_dir / "group_b",
                               "--out", tmp_path / "gp", "--mode", "gp", "--scaling", "off",
                               "--B", 100, "--euclid", "tangent")
        assert code == 0
        assert summary["K"] == 65 + 2 * 150 + 1 and summary["options"]["scaling"] is False


def test_template_command(capsys, tmp_path):
    code, info, _ = run(capsys, "template", tmp_path / "t.json", "--rows", 5, "--cols", 9, "--gp")
    assert code == 0 and info["n_p"] == 45
    assert load_gp(tmp_path / "t.json").n_s == 110
    assert run(capsys, "template", tmp_path / "t.json", "--radii", 1, 2, 3)[0] == 2
