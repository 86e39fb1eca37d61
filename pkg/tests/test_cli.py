import json
import subprocess
import sys

import numpy as np
import pytest

from declopt.cli import RunConfig, load_data, main, run, save_value
from declopt.corpus import gen_compressed_sensing
from declopt.errors import FormatError, NonNumericCell, UnknownName
from declopt.expr import eval_expr
from declopt.parser import parse_model, validate


class TestLoadData:
    def test_csv_matrix(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("1,2\n3,4\n")
        np.testing.assert_array_equal(load_data(p), [[1.0, 2.0], [3.0, 4.0]])

    def test_single_cell_is_scalar(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("5\n")
        v = load_data(p)
        assert isinstance(v, float) and v == 5.0

    def test_single_column_is_vector(self, tmp_path):
        p = tmp_path / "v.csv"
        p.write_text("1\n2\n3\n")
        np.testing.assert_array_equal(load_data(p), [1.0, 2.0, 3.0])

    def test_single_row_is_vector(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("1,2,3\n")
        np.testing.assert_array_equal(load_data(p), [1.0, 2.0, 3.0])

    def test_matrix_market_coordinate_densified(self, tmp_path):
        p = tmp_path / "c.mtx"
        p.write_text("%%MatrixMarket matrix coordinate real general\n"
                     "3 3 2\n1 1 4.0\n3 2 -1.5\n")
        got = load_data(p)
        expected = np.zeros((3, 3))
        expected[0, 0] = 4.0
        expected[2, 1] = -1.5
        np.testing.assert_array_equal(got, expected)
        assert int((got == 0).sum()) == 7

    def test_non_numeric_cell_has_line_number(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("1,2\n3,oops\n")
        with pytest.raises(NonNumericCell) as exc:
            load_data(p)
        assert ":2" in str(exc.value)

    def test_ragged_rows_rejected(self, tmp_path):
        p = tmp_path / "rag.csv"
        p.write_text("1,2\n3\n")
        with pytest.raises(FormatError):
            load_data(p)

    def test_save_round_trip(self, tmp_path):
        rng = np.random.Generator(np.random.PCG64(0))
        M = rng.standard_normal((4, 3))
        p = tmp_path / "round.csv"
        save_value(p, M)
        np.testing.assert_array_equal(load_data(p), M)


def _write_instance(tmp_path, inst):
    files = {}
    for name in inst.bindings.names():
        path = tmp_path / f"{name}.csv"
        save_value(path, inst.bindings.value(name))
        files[name] = str(path)
    model = tmp_path / "model.txt"
    model.write_text(inst.model)
    return str(model), files


class TestRun:
    def test_compressed_sensing_end_to_end(self, tmp_path):
        inst = gen_compressed_sensing(30, 50, 4, seed=3)
        model, files = _write_instance(tmp_path, inst)
        cfg = RunConfig(model_path=model, data=files, feas_tol=1e-7,
                        out_path=str(tmp_path / "report.json"))
        code, report = run(cfg)
        assert code == 0
        assert report["status"] == "Optimal"
        x = np.asarray(report["variables"]["x"])
        A = inst.bindings.value("A")
        b = inst.bindings.value("b")
        assert np.linalg.norm(A.dot(x) - b) <= 1e-6
        assert "t#0" not in report["variables"]

    def test_unbound_parameter_is_input_error(self, tmp_path):
        inst = gen_compressed_sensing(10, 16, 2, seed=4)
        model, files = _write_instance(tmp_path, inst)
        del files["b"]
        cfg = RunConfig(model_path=model, data=files)
        with pytest.raises(UnknownName) as exc:
            run(cfg)
        assert "b" in str(exc.value)

    def test_unknown_binding_name_rejected(self, tmp_path):
        inst = gen_compressed_sensing(10, 16, 2, seed=4)
        model, files = _write_instance(tmp_path, inst)
        files["zzz"] = files["A"]
        with pytest.raises(UnknownName):
            run(RunConfig(model_path=model, data=files))

    def test_tolerance_override_lands_in_report(self, tmp_path):
        inst = gen_compressed_sensing(10, 16, 2, seed=5)
        model, files = _write_instance(tmp_path, inst)
        _, report = run(RunConfig(model_path=model, data=files, tol=1e-4))
        assert report["kkt"]["tolerances"]["stationarity"] == 1e-4

    def test_objective_round_trips_through_report(self, tmp_path):
        inst = gen_compressed_sensing(12, 20, 2, seed=6)
        model, files = _write_instance(tmp_path, inst)
        _, report = run(RunConfig(model_path=model, data=files))
        spec = validate(parse_model(inst.model))
        env = inst.bindings.merged(
            {"x": np.asarray(report["variables"]["x"])})
        again = eval_expr(spec.objective, env)
        assert again == pytest.approx(report["objective"], rel=1e-12)

    def test_deterministic_reports(self, tmp_path):
        inst = gen_compressed_sensing(12, 20, 2, seed=7)
        model, files = _write_instance(tmp_path, inst)
        _, r1 = run(RunConfig(model_path=model, data=files, seed=9))
        _, r2 = run(RunConfig(model_path=model, data=files, seed=9))
        r1.pop("wall_time_s")
        r2.pop("wall_time_s")
        assert r1 == r2


class TestCommandLine:
    def test_gen_then_solve_in_process(self, tmp_path):
        out = tmp_path / "inst"
        assert main(["gen", "nnls_ii", "--seed", "2", "--out",
                     str(out)]) == 0
        manifest = json.loads((out / "instance.json").read_text())
        args = ["solve", "--model", str(out / "model.txt")]
        for name, fname in manifest["data"].items():
            args += ["--data", f"{name}={out / fname}"]
        args += ["--out", str(tmp_path / "rep.json"), "--max-inner", "2000"]
        assert main(args) == 0
        report = json.loads((tmp_path / "rep.json").read_text())
        assert report["status"] == "Optimal"

    def test_missing_model_file_is_exit_1(self, capsys):
        assert main(["solve", "--model", "/nonexistent/m.txt"]) == 1
        assert "error:" in capsys.readouterr().err

    def test_bad_data_argument_is_exit_1(self, tmp_path, capsys):
        model = tmp_path / "m.txt"
        model.write_text("variables Scalar x min x ^ 2")
        assert main(["solve", "--model", str(model), "--data",
                     "noequals"]) == 1

    def test_subprocess_entry_point(self, tmp_path):
        model = tmp_path / "m.txt"
        model.write_text("variables Scalar x min (x - 3) ^ 2")
        proc = subprocess.run(
            [sys.executable, "-m", "declopt.cli", "solve", "--model",
             str(model)],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        report = json.loads(proc.stdout)
        assert report["variables"]["x"] == pytest.approx(3.0, abs=1e-6)

    def test_env_var_supplies_defaults(self, tmp_path, monkeypatch):
        cfgfile = tmp_path / "defaults.json"
        cfgfile.write_text(json.dumps({"tol": 1e-3}))
        monkeypatch.setenv("DECLOPT_CONFIG", str(cfgfile))
        model = tmp_path / "m.txt"
        model.write_text("variables Scalar x min x ^ 2")
        out = tmp_path / "rep.json"
        assert main(["solve", "--model", str(model), "--out",
                     str(out)]) == 0
        report = json.loads(out.read_text())
        assert report["kkt"]["tolerances"]["stationarity"] == 1e-3

    def test_nonoptimal_exit_code_2(self, tmp_path):
        model = tmp_path / "m.txt"
        # equality-constrained problem starved of outer iterations
        model.write_text("variables Scalar x min x ^ 2 st x == 1")
        out = tmp_path / "rep.json"
        code = main(["solve", "--model", str(model), "--max-outer", "1",
                     "--out", str(out)])
        assert code == 2
        assert json.loads(out.read_text())["status"] in ("MaxOuter",
                                                         "Stalled")
