import json

import numpy as np
import pytest

from uwbpose.cli import main, write_ranges_csv
from uwbpose.geometry import Pose, exp_so3, regular_layout
from uwbpose.ranging import SensorLayout, range_vector

POSE = {"phi": [0.1, -0.2, 0.4], "translation": [10.0, 0.5, 0.0]}


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture
def config(tmp_path):
    def make(**kw):
        cfg = {"schema_version": 1, "layout": {"L_a": 2.5, "L_t": 3.2}, "pose": POSE,
               "trial": {"sigma_d": 0.0}}
        cfg.update(kw)
        return _write(tmp_path / "cfg.json", cfg)
    return make


def _layout():
    return SensorLayout(regular_layout("tetrahedron", 2.5).vertices,
                        regular_layout("triangle", 3.2).vertices)


class TestSolve:
    def test_noiseless_roundtrip(self, config, tmp_path, capsys):
        cfg = config()
        ranges = tmp_path / "r.csv"
        assert main(["ranges", "--config", cfg, "--out", str(ranges)]) == 0
        assert main(["solve", "--config", cfg, "--ranges", str(ranges)]) == 0
        out = json.loads(capsys.readouterr().out)
        truth = Pose(exp_so3(POSE["phi"]), POSE["translation"])
        assert np.allclose(out["rotation"], truth.rotation.ravel(), atol=1e-6)
        assert np.allclose(out["translation"], truth.translation, atol=1e-6)
        assert out["converged"] is True

    def test_noisy_scenario(self, config, tmp_path, capsys):
        cfg = config(trial={"sigma_d": 0.05, "seed": 4})
        ranges = tmp_path / "r.csv"
        main(["ranges", "--config", cfg, "--out", str(ranges)])
        assert main(["solve", "--config", cfg, "--ranges", str(ranges)]) == 0
        out = json.loads(capsys.readouterr().out)
        # several times the single-pose translation RMSE at this layout
        assert np.linalg.norm(np.subtract(out["translation"], POSE["translation"])) < 1.0

    def test_row_count_mismatch(self, config, tmp_path, capsys):
        layout = SensorLayout(_layout().anchors, _layout().tags[:2])
        text = write_ranges_csv(range_vector(Pose(np.eye(3), [10, 0, 0]), layout), layout)
        path = tmp_path / "short.csv"
        path.write_text(text)
        assert main(["solve", "--config", config(), "--ranges", str(path)]) == 2
        assert "m*n = 3*4 = 12" in capsys.readouterr().err

    def test_nonconvergence(self, config, tmp_path, capsys):
        cfg = config(solver={"max_iterations": 1},
                     init={"phi": [0, 0, 2.0], "translation": [5, 5, 5]})
        ranges = tmp_path / "r.csv"
        main(["ranges", "--config", cfg, "--out", str(ranges)])
        assert main(["solve", "--config", cfg, "--ranges", str(ranges)]) == 3
        assert json.loads(capsys.readouterr().out)["converged"] is False

    def test_unknown_field(self, config, tmp_path):
        cfg = config(trial={"sigma": 0.05})
        assert main(["crlb", "--config", cfg]) == 2

    def test_schema_version(self, tmp_path):
        cfg = _write(tmp_path / "c.json", {"schema_version": 2, "pose": POSE})
        assert main(["crlb", "--config", cfg]) == 2


class TestCrlb:
    def test_report_finite_positive(self, config, capsys):
        assert main(["crlb", "--config", config(trial={"sigma_d": 0.05})]) == 0
        out = json.loads(capsys.readouterr().out)
        for key in ("singular_values", "crlb_diagonal"):
            assert all(np.isfinite(v) and v > 0 for v in out[key])
        assert out["lambda3_H_phi"] > 0 and out["orientation_ceiling"] >= out["lambda3_H_phi"]

    def test_far_field_floors(self, tmp_path, capsys):
        cfg = _write(tmp_path / "c.json", {
            "schema_version": 1, "layout": {"L_a": 0.375, "L_t": 1.0},
            "pose": {"phi": [0, 0, 0], "translation": [50.0, 0.0, 0.0]}})
        assert main(["crlb", "--config", cfg]) == 0
        a = json.loads(capsys.readouterr().out)["analytic"]
        assert abs(a["translation_floor"] / a["translation_floor_far_field"] - 1) < 0.05
        assert abs(a["j3_tag1_sq"] / a["j3_tag1_sq_far_field"] - 1) < 0.05

    def test_coplanar_exit_4(self, tmp_path, capsys):
        cfg = _write(tmp_path / "c.json", {
            "schema_version": 1,
            "layout": {"anchors": [[0, 0, 0], [5, 0, 0], [0, 5, 0], [5, 5, 0]],
                       "tags": [[0, 0, 0], [1, 0, 0], [0, 1, 0]]},
            "pose": {"phi": [0, 0, 0], "translation": [2, 2, 3]}})
        assert main(["crlb", "--config", cfg]) == 4
        assert "coplanar" in capsys.readouterr().err


class TestSweep:
    def _cfg(self, tmp_path):
        return _write(tmp_path / "s.json", {
            "schema_version": 1, "trial": {"trials": 5, "orientation_samples": 2, "seed": 9},
            "sweep": {"axis": "L_a", "grid": [1.0, 2.0, 3.0]}})

    def test_byte_identical(self, tmp_path, capsys):
        cfg = self._cfg(tmp_path)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["sweep", "--config", cfg, "--out", str(a)]) == 0
        assert main(["sweep", "--config", cfg, "--out", str(b), "--workers", "2"]) == 0
        assert a.read_bytes() == b.read_bytes()
        assert a.read_text().startswith("d,z,L_a,L_t,z_a,h1,E_t_rmse,E_phi_rmse,trials,failures,seed\n")
        assert "pearson_r" in capsys.readouterr().err

    def test_seed_override(self, tmp_path, capsys):
        cfg = self._cfg(tmp_path)
        main(["sweep", "--config", cfg, "--quiet"])
        a = capsys.readouterr().out
        main(["sweep", "--config", cfg, "--quiet", "--seed", "10"])
        b = capsys.readouterr().out
        assert a != b and ",10\n" in b

    def test_empty_grid(self, tmp_path):
        assert main(["sweep", "--config", self._cfg(tmp_path), "--grid", ""]) == 2

    def test_json_format(self, tmp_path, capsys):
        main(["sweep", "--config", self._cfg(tmp_path), "--format", "json", "--quiet",
              "--grid", "1.0,2.0"])
        assert len(json.loads(capsys.readouterr().out)) == 2


class TestPlan:
    def _tables(self, tmp_path):
        t = ["d,z,L_a,L_t,z_a,h1,E_t_rmse,E_phi_rmse,trials,failures,seed"]
        for la in (1.0, 1.5, 2.0, 2.5, 3.0):
            z_a = 4 / 3 * la
            t.append(f"10.0,0.0,{la},3.2,{z_a!r},4.8,{0.06 * 10 / z_a!r},0.0,50,0,0")
        o = ["d,z,L_a,L_t,z_a,h1,E_t_rmse,E_phi_rmse,trials,failures,seed"]
        for lt in (1.0, 1.5, 2.0, 2.5, 3.2):
            x = 10 / (4 / 3 * 1.5 * 1.5 * lt)
            o.append(f"10.0,0.0,1.5,{lt},2.0,{1.5 * lt!r},0.0,{0.12 * x!r},50,0,0")
        (tmp_path / "t.csv").write_text("\n".join(t) + "\n")
        (tmp_path / "o.csv").write_text("\n".join(o) + "\n")

    def _cfg(self, tmp_path, **plan):
        self._tables(tmp_path)
        entry = {"d_max": 10.0, "L_a_grid": [1.0, 1.5, 2.0, 2.5, 3.0],
                "L_t_grid": [1.0, 1.5, 2.0, 2.5, 3.2], "confirm": False,
                "sweep_translation_csv": str(tmp_path / "t.csv"),
                "sweep_orientation_csv": str(tmp_path / "o.csv")}
        entry.update(plan)
        return _write(tmp_path / "p.json", {"schema_version": 1, "plan": entry})

    def test_plan_from_tables(self, tmp_path, capsys):
        assert main(["plan", "--config", self._cfg(tmp_path), "--targets", "0.35,0.3"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["L_a_min"] == pytest.approx(0.75 * 10 / (0.35 / 1.05 / 0.06))
        assert out["fit_translation"]["pearson_r"] == pytest.approx(1.0)

    def test_infeasible(self, tmp_path, capsys):
        assert main(["plan", "--config", self._cfg(tmp_path), "--targets", "0.01,0.3"]) == 5
        assert "best achievable" in capsys.readouterr().err

    def test_missing_targets(self, tmp_path):
        assert main(["plan", "--config", self._cfg(tmp_path)]) == 2


def test_bad_subcommand():
    assert main(["frobnicate"]) == 2
