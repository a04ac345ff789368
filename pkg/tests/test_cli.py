import csv
import json
import shutil

import numpy as np
import pytest

from symmpoint.cli import DEFAULT_SAMPLE_N, REPORT_TAG, build_parser, main
from symmpoint.geometry import angle_between, make_plane
from symmpoint.io import load_cloud, load_mesh, normalize, sample_mesh
from symmpoint.metrics import DEFAULT_THRESHOLD, chamfer_accel, fscore, report
from symmpoint.symloss import symmetry_residual

from .conftest import DATA

GOLDEN = DATA.parent / "golden"


@pytest.fixture
def in_data(monkeypatch):
    monkeypatch.chdir(DATA)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def parse_kv(text):
    out = {}
    for line in text.splitlines():
        if ": " in line and not line.startswith("#"):
            k, v = line.split(": ", 1)
            out[k] = v
    return out


class TestMetrics:
    def test_golden_text(self, capsys, in_data):
        code, out, _ = run(capsys, "metrics", "golden_pred.xyz", "golden_gt.xyz", "--normalize", "none")
        assert code == 0
        assert out == (GOLDEN / "metrics_pair.txt").read_text()
        # hand check: squared CD 0.0009 -> 0.90, EMD 0.015 -> 1.50, F 0.5
        assert out.splitlines()[-1] == "CD(x1e3) EMD(x1e2) F-Score: 0.90 1.50 0.50"

    def test_golden_csv(self, capsys, in_data):
        code, out, _ = run(capsys, "metrics", "golden_pred.xyz", "golden_gt.xyz",
                           "--normalize", "none", "--csv")
        assert code == 0
        assert out == (GOLDEN / "metrics_pair.csv").read_text()
        assert out.startswith(REPORT_TAG + "\n")

    def test_identical_files(self, capsys):
        code, out, _ = run(capsys, "metrics", DATA / "cube.xyz", DATA / "cube.xyz")
        assert code == 0
        assert out.splitlines()[-1].endswith("0.00 0.00 1.00")

    def test_default_threshold(self, capsys):
        assert DEFAULT_THRESHOLD == 0.01
        args = build_parser().parse_args(["metrics", "a", "b"])
        assert args.threshold == 0.01
        _, out, _ = run(capsys, "metrics", DATA / "cube.xyz", DATA / "cube.xyz")
        assert parse_kv(out)["threshold"] == "0.01"

    def test_half_cube_matches_library(self, capsys):
        code, out, _ = run(capsys, "metrics", DATA / "half_cube.xyz", DATA / "cube.xyz",
                           "--emd", "skip", "--json")
        assert code == 0
        got = json.loads(out)
        gt, rec = normalize(load_cloud(DATA / "cube.xyz"))
        pred = rec.apply(load_cloud(DATA / "half_cube.xyz"))
        assert got["cd_raw"] == chamfer_accel(pred, gt)
        assert got["fscore"] == fscore(pred, gt, 0.01)
        assert got["emd_raw"] is None and got["format"] == "symmpoint-report v1"

    def test_numbers_equal_library_bitwise(self, capsys):
        code, out, _ = run(capsys, "metrics", DATA / "batch/pred/chair_0.xyz",
                           DATA / "batch/gt/chair_0.xyz", "--json")
        got = json.loads(out)
        gt, rec = normalize(load_cloud(DATA / "batch/gt/chair_0.xyz"))
        pred = rec.apply(load_cloud(DATA / "batch/pred/chair_0.xyz"))
        r = report(pred, gt)
        assert (got["cd_raw"], got["emd_raw"], got["fscore"]) == (r.cd, r.emd, r.fscore)

    def test_cd_modes_relation(self, capsys):
        args = ["metrics", DATA / "batch/pred/table_0.xyz", DATA / "batch/gt/table_0.xyz", "--json"]
        sq = json.loads(run(capsys, *args)[1])["cd_raw"]
        eu = json.loads(run(capsys, *args, "--cd-mode", "euclidean")[1])["cd_raw"]
        # each directed squared mean is at least the square of the directed euclidean mean
        # (Jensen), so the sum satisfies sq >= eu^2 / 2
        assert sq >= eu * eu / 2
        assert sq <= eu  # all distances < 1 in the unit cube frame

    def test_size_mismatch_exit_3(self, capsys):
        code, _, err = run(capsys, "metrics", DATA / "half_cube.xyz", DATA / "cube.xyz")
        assert code == 3 and "SizeMismatch" in err

    def test_missing_file_exit_2(self, capsys, tmp_path):
        code, _, _ = run(capsys, "metrics", tmp_path / "nope.xyz", DATA / "cube.xyz")
        assert code == 2

    def test_parse_error_exit_2(self, capsys, tmp_path):
        bad = tmp_path / "bad.xyz"
        bad.write_text("1 2\n")
        code, _, err = run(capsys, "metrics", bad, DATA / "cube.xyz")
        assert code == 2 and "line 1" in err

    def test_bad_flag_exit_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["metrics", "a", "b", "--cd-mode", "cubic"])
        assert exc.value.code == 2

    def test_out_file(self, capsys, tmp_path):
        out = tmp_path / "r.json"
        code, stdout, _ = run(capsys, "metrics", DATA / "cube.xyz", DATA / "cube.xyz",
                              "--json", "--out", out)
        assert code == 0 and stdout == ""
        assert json.loads(out.read_text())["fscore"] == 1.0


class TestFitPlane:
    def test_mirrored_fixture(self, capsys, tmp_path):
        trace = tmp_path / "trace.csv"
        code, out, _ = run(capsys, "fit-plane", DATA / "mirrored.xyz", "--trace-out", trace)
        assert code == 0
        kv = parse_kv(out)
        n = [float(v) for v in kv["normal"].split()]
        assert angle_between(n, [1, 0, 0]) < 1.0
        assert kv["converged"] == "true"
        assert float(kv["residual"]) < 1e-6
        rows = list(csv.DictReader(trace.open()))
        res = [float(r["residual"]) for r in rows]
        assert res and all(b <= a for a, b in zip(res, res[1:]))

    def test_three_points_exit_3(self, capsys):
        code, _, err = run(capsys, "fit-plane", DATA / "three.xyz")
        assert code == 3 and "DegenerateCloud" in err

    def test_unconverged_exit_4(self, capsys, tmp_path, rng):
        P = rng.random((300, 3))
        path = tmp_path / "r.xyz"
        np.savetxt(path, P)
        code, out, _ = run(capsys, "fit-plane", path, "--max-iters", "1", "--restarts", "3")
        assert code == 4
        assert parse_kv(out)["converged"] == "false"
        assert "normal" in parse_kv(out)

    def test_json(self, capsys):
        code, out, _ = run(capsys, "fit-plane", DATA / "mirrored.xyz", "--json", "--fit-offset")
        got = json.loads(out)
        assert code == 0 and angle_between(got["normal"], [1, 0, 0]) < 1.0
        assert abs(got["offset"]) < 1e-3


class TestSymmetrize:
    def test_half_cube_plane(self, capsys, tmp_path):
        out = tmp_path / "full.xyz"
        code, text, _ = run(capsys, "symmetrize", DATA / "half_cube.xyz", out, "--plane", "1 0 0 0")
        assert code == 0
        got = {tuple(p) for p in load_cloud(out)}
        assert got == {tuple(p) for p in load_cloud(DATA / "cube.xyz")}
        kv = parse_kv(text)
        assert kv["points"] == "4 -> 8" and float(kv["residual_after"]) == 0

    def test_auto_reduces_residual(self, capsys, tmp_path, rng):
        P = load_cloud(DATA / "mirrored.xyz")[:700]  # break the exact symmetry
        src = tmp_path / "part.xyz"
        np.savetxt(src, P)
        code, text, _ = run(capsys, "symmetrize", src, tmp_path / "o.ply", "--auto")
        kv = parse_kv(text)
        assert code == 0
        assert float(kv["residual_after"]) <= float(kv["residual_before"])
        v = [float(x) for x in kv["plane"].split()]
        plane = make_plane(v[:3], v[3])
        assert float(kv["residual_after"]) == symmetry_residual(load_cloud(tmp_path / "o.ply"), plane)

    def test_symmetric_input_zero_residual(self, capsys, tmp_path):
        code, text, _ = run(capsys, "symmetrize", DATA / "cube.xyz", tmp_path / "c.xyz",
                            "--plane", "0 1 0 0")
        assert code == 0 and float(parse_kv(text)["residual_after"]) == 0

    def test_bad_plane(self, capsys, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["symmetrize", str(DATA / "cube.xyz"), str(tmp_path / "c.xyz"), "--plane", "1 0"])
        assert exc.value.code == 2
        code, _, _ = run(capsys, "symmetrize", DATA / "cube.xyz", tmp_path / "c.xyz",
                         "--plane", "0 0 0 1")
        assert code == 3


class TestEvalBatch:
    def test_rows_and_means(self, capsys, tmp_path):
        out = tmp_path / "report.csv"
        code, _, _ = run(capsys, "eval-batch", DATA / "batch/pred", DATA / "batch/gt",
                         "--pairs", DATA / "batch/pairs.csv", "--out", out, "--per-category")
        assert code == 0
        rows = list(csv.DictReader(out.open()))
        assert [(r["id"], r["category"]) for r in rows] == [
            ("chair_0", "chair"), ("chair_1", "chair"), ("table_0", "table"), ("table_1", "table"),
            ("mean", "chair"), ("mean", "table"), ("mean", "Average")]
        cd = [float(r["cd_raw"]) for r in rows]
        assert cd[4] == pytest.approx((cd[0] + cd[1]) / 2, rel=1e-15)
        assert cd[5] == pytest.approx((cd[2] + cd[3]) / 2, rel=1e-15)
        assert cd[6] == pytest.approx(sum(cd[:4]) / 4, rel=1e-15)
        assert out.read_text() == (GOLDEN / "eval_batch.csv").read_text()
        manifest = json.loads((tmp_path / "report.csv.manifest.json").read_text())
        assert manifest["command"] == "eval-batch" and manifest["seed"] == 0
        assert set(manifest) >= {"inputs", "config_hash", "version", "timestamp"}

    def test_header_is_report_schema_plus_error(self, capsys):
        _, out, _ = run(capsys, "eval-batch", DATA / "batch/pred", DATA / "batch/gt",
                        "--pairs", DATA / "batch/pairs.csv")
        assert out.splitlines()[0] == (
            "id,category,cd_raw,cd_x1e3,emd_raw,emd_x1e2,fscore,threshold,n_points,error")

    def test_partial_failure(self, capsys, tmp_path):
        pairs = tmp_path / "pairs.csv"
        pairs.write_text("id,category,pred,gt\nok,chair,chair_0.xyz,chair_0.xyz\n"
                         "gone,chair,missing.xyz,chair_0.xyz\n")
        code, out, _ = run(capsys, "eval-batch", DATA / "batch/pred", DATA / "batch/gt",
                           "--pairs", pairs)
        rows = list(csv.DictReader(out.splitlines()))
        assert code == 0
        assert rows[0]["error"] == "" and rows[1]["error"].startswith("InputError")
        assert rows[2]["id"] == "mean" and rows[2]["cd_raw"] == rows[0]["cd_raw"]

    def test_all_fail_exit_3(self, capsys, tmp_path):
        pairs = tmp_path / "pairs.csv"
        pairs.write_text("id,category,pred,gt\nx,chair,nope.xyz,nope.xyz\n")
        code, _, _ = run(capsys, "eval-batch", DATA / "batch/pred", DATA / "batch/gt",
                         "--pairs", pairs)
        assert code == 3

    def test_thread_count_does_not_change_output(self, capsys, monkeypatch):
        args = ["eval-batch", DATA / "batch/pred", DATA / "batch/gt", "--pairs",
                DATA / "batch/pairs.csv", "--per-category"]
        monkeypatch.setenv("SYMM_THREADS", "1")
        one = run(capsys, *args)[1]
        monkeypatch.setenv("SYMM_THREADS", "4")
        four = run(capsys, *args)[1]
        assert one == four


class TestSample:
    def test_default_n_is_2048(self, capsys, tmp_path):
        assert DEFAULT_SAMPLE_N == 2048
        out = tmp_path / "s.xyz"
        code, _, _ = run(capsys, "sample", DATA / "square.obj", out)
        assert code == 0
        assert len(load_cloud(out)) == 2048
        manifest = json.loads((tmp_path / "s.xyz.manifest.json").read_text())
        assert manifest["seed"] == 0 and manifest["config"]["n"] == 2048

    def test_same_seed_same_file(self, capsys, tmp_path):
        for name in ("a.ply", "b.ply"):
            run(capsys, "sample", DATA / "square.obj", tmp_path / name, "--seed", "5")
        assert (tmp_path / "a.ply").read_bytes() == (tmp_path / "b.ply").read_bytes()
        np.testing.assert_array_equal(load_cloud(tmp_path / "a.ply"),
                                      sample_mesh(load_mesh(DATA / "square.obj"), 2048, 5))

    def test_single_point_on_surface(self, capsys, tmp_path):
        out = tmp_path / "one.xyz"
        run(capsys, "sample", DATA / "square.obj", out, "--n", "1")
        P = load_cloud(out)
        assert P.shape == (1, 3) and P[0, 2] == 0 and (0 <= P[0, :2]).all() and (P[0, :2] <= 1).all()

    def test_bad_mesh_exit_2(self, capsys, tmp_path):
        bad = tmp_path / "m.obj"
        bad.write_text("v 0 0\n")
        assert run(capsys, "sample", bad, tmp_path / "o.xyz")[0] == 2

    def test_flat_mesh_exit_3(self, capsys, tmp_path):
        flat = tmp_path / "m.obj"
        flat.write_text("v 0 0 0\nv 1 1 1\nv 2 2 2\nf 1 2 3\n")
        assert run(capsys, "sample", flat, tmp_path / "o.xyz")[0] == 3


def test_module_entry_point(tmp_path):
    import subprocess
    import sys
    shutil.copy(DATA / "cube.xyz", tmp_path / "c.xyz")
    r = subprocess.run([sys.executable, "-m", "symmpoint", "metrics", "c.xyz", "c.xyz"],
                       cwd=tmp_path, capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith(REPORT_TAG)
