import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from koopkit import control, embed, koopfit, systems
from koopkit import io as kio
from koopkit.cli import main
from koopkit.exceptions import ParseError, ValidationError

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def read_csv(text):
    lines = text.strip().splitlines()
    return lines[0].split(","), np.array([[float(v) for v in l.split(",")] for l in lines[1:]])


@pytest.fixture
def example1_csv(tmp_path, capsys):
    path = tmp_path / "traj.csv"
    code, _, _ = run(capsys, "simulate", "--system", "example1", "--a", 0.9, "--b", 0.8,
                     "--x0", "1,1", "--steps", 50, "--output", path)
    assert code == 0
    return path


@pytest.fixture
def edmd_model(tmp_path, capsys, example1_csv):
    path = tmp_path / "m.json"
    code, _, _ = run(capsys, "fit", "--method", "edmd", "--dict", "example1",
                     "--input", example1_csv, "--output", path)
    assert code == 0
    return path


class TestCsv:
    @settings(max_examples=60, deadline=None)
    @given(arrays(float, st.tuples(st.integers(1, 8), st.integers(1, 3)), elements=finite),
           st.booleans())
    def test_round_trip_exact(self, states, with_inputs):
        T = len(states)
        inputs = states[:, :1] * 0.5 if with_inputs else None
        tr = systems.Trajectory(np.arange(T) * 0.1, states, inputs)
        text = kio.trajectory_to_csv(tr)
        back = kio.read_trajectory(io.StringIO(text))
        assert np.array_equal(back.states, tr.states)
        assert np.array_equal(back.times, tr.times)
        assert kio.trajectory_to_csv(back) == text

    def test_integer_times(self):
        tr = systems.Trajectory(np.arange(3), np.ones((3, 2)))
        text = kio.trajectory_to_csv(tr)
        assert text.splitlines()[0] == "t,x1,x2"
        assert text.splitlines()[2] == "1,1.0,1.0"
        assert np.issubdtype(kio.read_trajectory(io.StringIO(text)).times.dtype, np.integer)

    @pytest.mark.parametrize("text", ["", "x,y\n1,2\n", "t,x1\n0,abc\n", "t,x1\n0,1,2\n", "t,x1\n", "t,x1\n1,0\n0,1\n"])
    def test_parse_errors(self, text):
        with pytest.raises(ParseError):
            kio.read_trajectory(io.StringIO(text))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ParseError):
            kio.read_trajectory(tmp_path / "absent.csv")


class TestModelJson:
    def _round_trip(self, model, tmp_path):
        p = tmp_path / "model.json"
        text = kio.save_model(model, p, {"command": "test", "data_sha256": {}, "timestamp": "t"})
        again = kio.model_to_json(kio.load_model(p))
        assert again == text
        return kio.load_model(p)

    def test_edmd(self, tmp_path):
        F = systems.example1_map(0.9, 0.8)
        X = np.random.default_rng(0).uniform(-1, 1, (20, 2))
        pairs = embed.SnapshotPair(X.T, np.array([F(x) for x in X]).T)
        model = koopfit.fit_edmd(pairs, embed.example1_observables())
        back = self._round_trip(model, tmp_path)
        assert np.array_equal(back.A, model.A) and np.array_equal(back.C, model.C)
        assert np.array_equal(back.dictionary.transform(X), model.dictionary.transform(X))
        assert json.loads(kio.model_to_json(back))["kind"] == "edmd"

    def test_spectral_complex(self, tmp_path):
        c, s = np.cos(0.4), np.sin(0.4)
        model = koopfit.KoopmanModel(embed.identity_dictionary(2), 0.9 * np.array([[c, -s], [s, c]]), np.eye(2))
        spec = koopfit.extract_spectrum(model)
        back = self._round_trip(spec, tmp_path)
        assert np.array_equal(back.transition, spec.transition)
        assert np.array_equal(back.modes, spec.modes)
        assert np.array_equal(back.eigenfunction_coeffs, spec.eigenfunction_coeffs)

    def test_bilinear(self, tmp_path):
        sys_ = systems.example4_system(-0.5, -0.5)
        model = control.lift_control_fields(sys_, embed.example4_lifting(), np.random.default_rng(1).uniform(-1, 1, (20, 2)))
        back = self._round_trip(model, tmp_path)
        for b0, b1 in zip(model.B, back.B):
            assert np.array_equal(b0, b1)

    def test_generator_and_dmd_kinds(self):
        X = np.random.default_rng(2).uniform(-1, 1, (10, 2))
        gen = koopfit.fit_generator_edmd(X, -X, embed.identity_dictionary(2))
        assert json.loads(kio.model_to_json(gen, {}))["kind"] == "generator"
        dmd = koopfit.fit_dmd([X])
        assert json.loads(kio.model_to_json(dmd, {}))["kind"] == "dmd"

    def test_callable_dictionary_rejected(self):
        d = embed.custom_dictionary([lambda x: x[0]], [lambda x: np.array([1.0])])
        model = koopfit.KoopmanModel(d, [[0.5]], [[1.0]])
        with pytest.raises(ValidationError):
            kio.model_to_json(model)

    @pytest.mark.parametrize("text", ["{", '{"schema_version": "0.1"}', '{"schema_version": "1.0", "kind": "edmd"}'])
    def test_malformed(self, text):
        with pytest.raises(ParseError):
            kio.model_from_json(text)


class TestCliFit:
    def test_edmd_happy_path(self, tmp_path, capsys, example1_csv):
        out_path = tmp_path / "m.json"
        code, out, err = run(capsys, "fit", "--method", "edmd", "--dict", "monomials:2",
                             "--input", example1_csv, "--output", out_path)
        assert code == 0 and out_path.exists() and err == ""
        assert "lifting residual:" in out and "reconstruction residual:" in out

    def test_missing_input(self, tmp_path, capsys):
        code, out, err = run(capsys, "fit", "--method", "edmd", "--input", tmp_path / "nope.csv",
                             "--output", tmp_path / "m.json")
        assert code == 3 and out == "" and "nope.csv" in err

    def test_bad_flags(self, capsys):
        assert run(capsys, "fit", "--method", "magic", "--output", "x")[0] == 2
        assert run(capsys, "predict")[0] == 2
        assert run(capsys)[0] == 2

    def test_bad_dictionary_is_usage_error(self, tmp_path, capsys, example1_csv):
        code, _, err = run(capsys, "fit", "--method", "edmd", "--dict", "wavelets",
                           "--input", example1_csv, "--output", tmp_path / "m.json")
        assert code == 2 and "wavelets" in err

    def test_rank_deficient_fit_still_succeeds(self, tmp_path, capsys):
        traj = tmp_path / "short.csv"
        traj.write_text("t,x1,x2\n0,1.0,1.0\n1,0.9,0.79\n")
        code, _, err = run(capsys, "fit", "--method", "edmd", "--dict", "monomials:2",
                           "--input", traj, "--output", tmp_path / "m.json")
        assert code == 0 and "rank" in err
        assert "insufficient-data" in (tmp_path / "m.json").read_text()

    def test_generator_needs_samples(self, tmp_path, capsys):
        traj = tmp_path / "short.csv"
        traj.write_text("t,x1\n0.0,1.0\n0.1,0.9\n")
        code, _, err = run(capsys, "fit", "--method", "generator", "--input", traj,
                           "--output", tmp_path / "m.json")
        assert code == 4 and "three samples" in err

    def test_dmd_misfit(self, tmp_path, capsys, example1_csv):
        code, out, _ = run(capsys, "fit", "--method", "dmd", "--input", example1_csv, "--output", tmp_path / "d.json")
        lifting = float(out.splitlines()[0].split(":")[1])
        assert code == 0 and lifting > 1e-6

    def test_provenance(self, edmd_model, example1_csv):
        doc = json.loads(edmd_model.read_text())
        assert doc["provenance"]["command"].startswith("koopkit fit")
        assert doc["provenance"]["data_sha256"][str(example1_csv)] == kio.file_digest(example1_csv)

    def test_generator_and_hankel(self, tmp_path, capsys):
        traj = tmp_path / "flow.csv"
        assert run(capsys, "simulate", "--system", "example3", "--x0", "1", "--steps", 200,
                   "--dt", 0.01, "--output", traj)[0] == 0
        assert run(capsys, "fit", "--method", "generator", "--dict", "monomials:3",
                   "--input", traj, "--output", tmp_path / "g.json")[0] == 0
        assert json.loads((tmp_path / "g.json").read_text())["ts"] == 0.01
        assert run(capsys, "fit", "--method", "hankel", "--depth", 3, "--input", traj,
                   "--output", tmp_path / "h.json")[0] == 0

    def test_conjugacy_and_bilinear(self, tmp_path, capsys, example1_csv):
        code, out, _ = run(capsys, "fit", "--method", "conjugacy", "--system", "example1",
                           "--input", example1_csv, "--output", tmp_path / "c.json")
        assert code == 0 and json.loads((tmp_path / "c.json").read_text())["kind"] == "spectral"
        code, out, _ = run(capsys, "fit", "--method", "bilinear", "--system", "example4",
                           "--dict", "example4", "--output", tmp_path / "b.json")
        assert code == 0 and float(out.splitlines()[0].split(":")[1]) < 1e-10


class TestCliPredict:
    def test_exact_model_against_truth(self, capsys, edmd_model, example1_csv):
        code, out, _ = run(capsys, "predict", "--model", edmd_model, "--x0", "1,1", "--steps", 50,
                           "--compare", example1_csv)
        header, rows = read_csv(out)
        assert code == 0 and header == ["k", "y1", "y2", "error"] and len(rows) == 51
        assert rows[:, -1].max() <= 1e-8

    def test_zero_steps(self, capsys, edmd_model):
        code, out, _ = run(capsys, "predict", "--model", edmd_model, "--x0", "0.5,0.25", "--steps", 0)
        _, rows = read_csv(out)
        assert rows.shape == (1, 3)
        np.testing.assert_allclose(rows[0, 1:], [0.5, 0.25], atol=1e-14)

    def test_spectral_equals_state_space(self, tmp_path, capsys, edmd_model):
        spec = tmp_path / "s.json"
        assert run(capsys, "spectrum", "--model", edmd_model, "--output", spec)[0] == 0
        _, a = read_csv(run(capsys, "predict", "--model", edmd_model, "--x0", "0.3,-0.7", "--steps", 30)[1])
        _, b = read_csv(run(capsys, "predict", "--model", spec, "--x0", "0.3,-0.7", "--steps", 30)[1])
        assert np.max(np.abs(a - b)) <= 1e-8

    def test_bad_model_file(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert run(capsys, "predict", "--model", bad, "--x0", "1,1", "--steps", 2)[0] == 3

    def test_bad_vector_flag(self, capsys, edmd_model):
        assert run(capsys, "predict", "--model", edmd_model, "--x0", "one,two", "--steps", 2)[0] == 2


class TestCliSpectrum:
    def test_example1_rows(self, capsys, edmd_model):
        code, out, _ = run(capsys, "spectrum", "--model", edmd_model, "--modes")
        header, rows = read_csv(out)
        assert code == 0 and "mode1_re" in header
        np.testing.assert_allclose(rows[:, 1], [0.9, 0.81, 0.8], atol=1e-10)
        np.testing.assert_allclose(rows[:, 4], np.log([0.9, 0.81, 0.8]), atol=1e-10)

    def test_continuous_with_ts(self, tmp_path, capsys):
        D = embed.identity_dictionary(1)
        model = koopfit.KoopmanModel(D, [[-2.0]], [[1.0]], koopfit.CONTINUOUS)
        p = tmp_path / "c.json"
        kio.save_model(model, p, {})
        header, rows = read_csv(run(capsys, "spectrum", "--model", p, "--ts", 0.1)[1])
        assert rows.shape[0] == 1
        assert rows[0, header.index("gamma")] == -2.0
        assert rows[0, header.index("lambda_re")] == pytest.approx(np.exp(-0.2))


class TestCliLyapunov:
    def test_example1_report_and_grid(self, tmp_path, capsys, edmd_model):
        grid = tmp_path / "grid.csv"
        code, out, _ = run(capsys, "lyapunov", "--model", edmd_model, "--system", "example1", "--output", grid)
        report = json.loads(out)
        assert code == 0
        np.testing.assert_allclose(sorted(report["P_diagonal"]), sorted([5.263158, 2.777778, 2.907823]), atol=1e-6)
        assert report["witness"]["max_abs_defect"] < 1e-8
        header, rows = read_csv(grid.read_text())
        assert header == ["x1", "x2", "V"] and rows.shape == (441, 3)
        assert rows[220, 2] == pytest.approx(0.0, abs=1e-20)

    def test_unstable_exit_5(self, tmp_path, capsys):
        D = embed.identity_dictionary(2)
        model = koopfit.KoopmanModel(D, np.diag([1.2, 0.5]), np.eye(2))
        p = tmp_path / "u.json"
        kio.save_model(model, p, {})
        code, out, err = run(capsys, "lyapunov", "--model", p)
        assert code == 5 and out == "" and "1.2" in err


class TestCliMpcSimulate:
    def test_regulation_run(self, tmp_path, capsys):
        problem = tmp_path / "p.json"
        problem.write_text(json.dumps({"horizon": 20, "Q": [[1, 0], [0, 1]], "R": [[0.1, 0], [0, 0.1]],
                                       "u_lower": [-1, -1], "u_upper": [1, 1], "y_ref": [0, 0], "ts": 0.05}))
        log, summary = tmp_path / "log.csv", tmp_path / "summary.json"
        code, out, _ = run(capsys, "mpc", "--problem", problem, "--x0", "0.7,-0.9", "--steps", 100,
                           "--log", log, "--summary", summary)
        s = json.loads(summary.read_text())
        assert code == 0 and json.loads(out) == s
        assert s["constraint_violations"] == 0 and s["steps"] == 100
        header, rows = read_csv(log.read_text())
        assert header[:5] == ["t", "x1", "x2", "u1", "u2"] and len(rows) == 101
        assert np.all(np.abs(rows[:, 3:5]) <= 1.0)

    def test_missing_problem(self, tmp_path, capsys):
        assert run(capsys, "mpc", "--problem", tmp_path / "none.json", "--x0", "0,0")[0] == 3

    def test_simulate_example1(self, capsys):
        code, out, _ = run(capsys, "simulate", "--system", "example1", "--a", 0.9, "--b", 0.8,
                           "--x0", "1,1", "--steps", 50)
        lines = out.splitlines()
        assert code == 0 and lines[0] == "t,x1,x2" and len(lines) == 52
        assert lines[2] == "1,0.9,0.79"

    def test_simulate_example4_inputs(self, capsys):
        code, out, _ = run(capsys, "simulate", "--system", "example4", "--x0", "0.1,0.2",
                           "--steps", 3, "--u", "0.5,-0.5")
        header, rows = read_csv(out)
        assert code == 0 and header == ["t", "x1", "x2", "u1", "u2"]
        assert np.all(rows[:, 3] == 0.5)

    def test_simulate_bad_dimension(self, capsys):
        assert run(capsys, "simulate", "--system", "example1", "--x0", "1", "--steps", 2)[0] == 2
