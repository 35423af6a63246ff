import json
import os
import subprocess
import sys

import numpy as np
import pytest

from fairgrade import (
    ExamResultGraph,
    MeritVector,
    Roster,
    TaskAssignmentGraph,
    predict_matrix,
    simple_average,
)
from fairgrade import io as fio
from fairgrade.cli import parse_int_list, load_config_file, run

from conftest import RUNNING_OUTCOMES, random_result_graph


def write(path, text):
    path.write_text(text)
    return str(path)


RUNNING_CSV = "student,question,correct\n" + "".join(
    f"S{i+1},Q{j+1},{b}\n" for (i, j), b in sorted(RUNNING_OUTCOMES.items())
)


class TestEdgeList:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        g = random_result_graph(rng, 4, 5)
        path = tmp_path / "exam.csv"
        fio.write_edge_list(g, path)
        back = fio.ingest(path, fio.EDGE_LIST)
        assert back.outcomes == {
            (g.roster.students[i], g.roster.questions[j]): b
            for (i, j), b in g.outcomes.items()
        } or back == g  # identical ids when roster uses default labels
        assert back == g

    def test_rejects_bad_header_and_values(self, tmp_path):
        p = write(tmp_path / "a.csv", "foo,bar\n")
        with pytest.raises(fio.MalformedRowError):
            fio.read_edge_list(p)
        p = write(tmp_path / "b.csv", "student,question,correct\nS1,Q1,2\n")
        with pytest.raises(fio.MalformedRowError) as exc:
            fio.read_edge_list(p)
        assert exc.value.line == 2

    def test_rejects_duplicates(self, tmp_path):
        p = write(tmp_path / "c.csv",
                  "student,question,correct\nS1,Q1,1\nS1,Q1,0\n")
        with pytest.raises(fio.DuplicateEdgeError) as exc:
            fio.read_edge_list(p)
        assert exc.value.line == 3

    def test_single_row(self, tmp_path):
        p = write(tmp_path / "d.csv", "student,question,correct\nA,B,1\n")
        g = fio.read_edge_list(p)
        assert g.roster.students == ("A",) and g.roster.questions == ("B",)
        assert g.assignment.n_edges == 1


class TestDenseMatrix:
    def test_round_trip_with_na(self, tmp_path):
        r = Roster.index_based(2, 3)
        g = TaskAssignmentGraph(r, ((0, 0), (0, 2), (1, 1)))
        res = ExamResultGraph(g, np.array([1, 0, 1]))
        path = tmp_path / "dense.csv"
        fio.write_dense_matrix(res, path)
        assert fio.ingest(path, fio.DENSE_CSV) == res

    def test_na_cells_are_non_edges(self, tmp_path):
        p = write(tmp_path / "m.csv", "student,q1,q2\nA,1,NA\nB,NA,0\n")
        g = fio.read_dense_matrix(p)
        assert g.assignment.edges == ((0, 0), (1, 1))
        assert g.w.tolist() == [1, 0]

    def test_rejects_bad_cell_with_line_number(self, tmp_path):
        p = write(tmp_path / "m.csv", "student,q1\nA,1\nB,2\n")
        with pytest.raises(fio.MalformedRowError) as exc:
            fio.read_dense_matrix(p)
        assert exc.value.line == 3

    def test_rejects_ragged_rows(self, tmp_path):
        p = write(tmp_path / "m.csv", "student,q1,q2\nA,1\n")
        with pytest.raises(fio.DimensionMismatchError):
            fio.read_dense_matrix(p)

    def test_complete_matrix(self, tmp_path):
        body = "student," + ",".join(f"q{j}" for j in range(4)) + "\n"
        rng = np.random.default_rng(1)
        for i in range(3):
            body += f"s{i}," + ",".join(str(int(b)) for b in rng.integers(0, 2, 4)) + "\n"
        g = fio.read_dense_matrix(write(tmp_path / "full.csv", body))
        assert g.assignment.n_edges == 12


class TestMeritsAndGrades:
    def test_merit_round_trip(self, tmp_path):
        r = Roster.index_based(2, 2)
        u = MeritVector.for_roster(r, [0.25, -0.75], [1.5, -1.0])
        path = tmp_path / "merits.csv"
        fio.write_merits(u, r, path)
        back = fio.read_merits(path, r)
        for v in range(r.n_vertices):
            assert back[v] == u[v]

    def test_merit_unknown_vertex(self, tmp_path):
        r = Roster.index_based(1, 1)
        p = write(tmp_path / "u.csv", "vertex,kind,merit\nnope,student,0.0\n")
        with pytest.raises(fio.MalformedRowError):
            fio.read_merits(p, r)

    def test_grade_csv_format(self, tmp_path, running_example):
        grades = simple_average(running_example)
        path = tmp_path / "grades.csv"
        fio.write_grades(grades, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "student,grade,rule"
        assert lines[1] == "s0,0.5,avg"

    def test_prediction_export(self, tmp_path, running_example):
        pm = predict_matrix(running_example)
        fio.write_predictions(pm, tmp_path / "h.csv", tmp_path / "cases.csv")
        cases = (tmp_path / "cases.csv").read_text().splitlines()
        assert cases[0] == "student,q0,q1,q2"
        assert "STUDENT_ABOVE" in cases[2]  # s1's q2 cell


class TestCliHelpers:
    def test_parse_int_list(self):
        assert parse_int_list("3") == [3]
        assert parse_int_list("1,4, 6") == [1, 4, 6]
        assert parse_int_list("2..5") == [2, 3, 4, 5]

    def test_config_file(self, tmp_path):
        p = write(tmp_path / "run.cfg", "seed = 7\n# comment\nreps=10\nd-values=1..3\n")
        cfg = load_config_file(p)
        assert cfg == {"seed": "7", "reps": "10", "d_values": "1..3"}


@pytest.fixture
def exam_file(tmp_path):
    return write(tmp_path / "exam.csv", RUNNING_CSV)


def run_cli(*argv):
    return run(list(argv))


class TestCli:
    def test_grade_ours(self, exam_file, tmp_path):
        out = tmp_path / "out"
        assert run_cli("grade", "--input", exam_file, "--rule", "ours",
                       "--outdir", str(out)) == 0
        lines = (out / "grades.csv").read_text().splitlines()
        grades = {row.split(",")[0]: float(row.split(",")[1]) for row in lines[1:]}
        assert grades["S2"] == pytest.approx(2 / 3)
        # the (S2, Q3) prediction is exactly 1
        preds = (out / "predictions.csv").read_text().splitlines()
        assert float(preds[2].split(",")[3]) == 1.0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "grade"

    def test_grade_avg_complete_matrix(self, tmp_path):
        rng = np.random.default_rng(5)
        body = "student,q0,q1,q2\n"
        mat = rng.integers(0, 2, (3, 3))
        for i in range(3):
            body += f"s{i}," + ",".join(map(str, mat[i])) + "\n"
        path = write(tmp_path / "full.csv", body)
        out = tmp_path / "out"
        assert run_cli("grade", "--input", path, "--rule", "avg",
                       "--outdir", str(out)) == 0
        lines = (out / "grades.csv").read_text().splitlines()
        for i, row in enumerate(lines[1:]):
            assert float(row.split(",")[1]) == pytest.approx(mat[i].mean())

    def test_fit_and_exit_codes(self, exam_file, tmp_path):
        out = tmp_path / "out"
        # running example is not strongly connected -> numeric failure for mle
        assert run_cli("fit", "--input", exam_file, "--method", "mle",
                       "--outdir", str(out)) == 4
        assert run_cli("fit", "--input", exam_file, "--method", "map",
                       "--outdir", str(out)) == 0
        merits = (out / "merits.csv").read_text().splitlines()
        assert merits[0] == "vertex,kind,merit"
        assert len(merits) == 1 + 9

    def test_missing_input_is_config_error(self, tmp_path):
        assert run_cli("grade", "--input", str(tmp_path / "nope.csv"),
                       "--outdir", str(tmp_path)) == 2

    def test_bad_data_is_data_error(self, tmp_path):
        p = write(tmp_path / "bad.csv", "student,question,correct\nS1,Q1,7\n")
        assert run_cli("grade", "--input", p, "--outdir", str(tmp_path)) == 3

    def test_seed_required(self, tmp_path):
        assert run_cli("simulate-bias", "--students", "3", "--questions", "4",
                       "--m", "4", "--d", "2", "--outdir", str(tmp_path)) == 2

    def test_simulate_bias_runs(self, tmp_path):
        out = tmp_path / "out"
        assert run_cli("simulate-bias", "--students", "3", "--questions", "4",
                       "--m", "4", "--d", "2", "--reps", "20", "--seed", "5",
                       "--outdir", str(out)) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert set(summary) == {"ours", "avg"}

    def test_verify_subcommand(self, tmp_path):
        out = tmp_path / "out"
        assert run_cli("verify", "--students", "2", "--questions", "3",
                       "--m", "3", "--d", "2", "--outdir", str(out)) == 0
        assert json.loads((out / "summary.json").read_text())["ex_ante_fair"] is True

    def test_verify_too_large_is_numeric_error(self, tmp_path):
        assert run_cli("verify", "--students", "6", "--questions", "9",
                       "--m", "9", "--d", "4", "--outdir", str(tmp_path)) == 4

    def test_config_file_with_flag_override(self, tmp_path, exam_file):
        cfg = write(tmp_path / "run.cfg", f"input={exam_file}\nrule=avg\n")
        out = tmp_path / "out"
        assert run_cli("grade", "--config", cfg, "--outdir", str(out)) == 0
        assert "avg" in (out / "grades.csv").read_text()
        out2 = tmp_path / "out2"
        assert run_cli("grade", "--config", cfg, "--rule", "ours",
                       "--outdir", str(out2)) == 0
        assert "ours" in (out2 / "grades.csv").read_text()

    def test_outdir_env_var(self, tmp_path, exam_file, monkeypatch):
        target = tmp_path / "envout"
        monkeypatch.setenv("FAIRGRADE_OUTDIR", str(target))
        assert run_cli("grade", "--input", exam_file, "--rule", "avg") == 0
        assert (target / "grades.csv").exists()

    def test_sweep_determinism_across_threads(self, tmp_path):
        outs = []
        for k, threads in enumerate(("1", "3")):
            out = tmp_path / f"out{k}"
            assert run_cli("sweep-degree", "--students", "3", "--questions", "4",
                           "--m", "4", "--d", "1..3", "--graphs", "2",
                           "--reps", "10", "--seed", "7", "--threads", threads,
                           "--outdir", str(out)) == 0
            outs.append(out)
        for name in ("report.csv", "summary.json"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()

    def test_cv_subcommand(self, tmp_path):
        rng = np.random.default_rng(8)
        body = "student," + ",".join(f"q{j}" for j in range(5)) + "\n"
        for i in range(6):
            body += f"s{i}," + ",".join(map(str, rng.integers(0, 2, 5))) + "\n"
        path = write(tmp_path / "full.csv", body)
        out = tmp_path / "out"
        assert run_cli("cv", "--input", path, "--d1", "4", "--d2", "3,5",
                       "--reps", "10", "--seed", "3", "--outdir", str(out)) == 0
        summary = json.loads((out / "summary.json").read_text())
        full = next(p for p in summary["points"] if p["d2"] == 5)
        assert full["mse"]["ours"] == pytest.approx(0.0, abs=1e-12)

    def test_cv_sim_subcommand(self, tmp_path):
        out = tmp_path / "out"
        assert run_cli("cv-sim", "--students", "4", "--questions", "5",
                       "--d2", "2,5", "--reps", "5", "--seed", "4",
                       "--outdir", str(out)) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert [p["d2"] for p in summary["points"]] == [2, 5]

    def test_entry_point_installed(self, exam_file, tmp_path):
        proc = subprocess.run(
            ["fairgrade", "grade", "--input", exam_file, "--rule", "avg",
             "--outdir", str(tmp_path / "cli_out")],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
