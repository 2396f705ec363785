import json
import math
import time

import numpy as np
import pytest

from conftest import planted, random_dataset, random_model, random_schema
from mixclust import io
from mixclust.cli import main, read_runs
from mixclust.core import Dataset, VariableSchema
from mixclust.experiments import METRICS, mean_std


def write(path, text):
    path.write_text(text)
    return path


class TestCsv:
    def test_round_trip(self, tmp_path, rng):
        schema = random_schema(rng)
        d = random_dataset(rng, schema, 30)
        io.write_csv(d, tmp_path / "d.csv")
        io.write_schema(schema, tmp_path / "d.csv.schema")
        back = io.read_dataset(tmp_path / "d.csv")
        assert back.schema == schema
        np.testing.assert_array_equal(back.cases, d.cases)
        assert back.labels is None

    def test_labels_column(self, tmp_path):
        write(tmp_path / "d.csv", "a,__class,b\n0,3,1\n2,0,0\n")
        d = io.read_dataset(tmp_path / "d.csv")
        assert list(d.schema.names) == ["a", "b"]
        assert list(d.schema.cardinalities) == [3, 2]
        np.testing.assert_array_equal(d.cases, [[0, 1], [2, 0]])
        np.testing.assert_array_equal(d.labels, [3, 0])

    def test_binary_two_by_two(self, tmp_path):
        write(tmp_path / "d.csv", "x,y\n0,1\n1,0\n")
        d = io.read_dataset(tmp_path / "d.csv")
        assert d.N == 2 and d.schema.n == 2 and list(d.schema.cardinalities) == [2, 2]

    def test_ragged_row(self, tmp_path):
        write(tmp_path / "d.csv", "x,y\n0,1\n1\n")
        with pytest.raises(io.ParseError, match=r"d.csv:3"):
            io.read_dataset(tmp_path / "d.csv")

    def test_non_integer(self, tmp_path):
        write(tmp_path / "d.csv", "x,y\n0,1\n1,a\n0,0\n")
        with pytest.raises(io.ParseError, match=r"d.csv:3"):
            io.read_dataset(tmp_path / "d.csv")

    def test_negative(self, tmp_path):
        write(tmp_path / "d.csv", "x,y\n0,-1\n")
        with pytest.raises(io.ParseError, match=r"d.csv:2"):
            io.read_dataset(tmp_path / "d.csv")

    def test_value_above_cardinality(self, tmp_path):
        write(tmp_path / "d.csv", "x,y\n0,1\n0,2\n")
        write(tmp_path / "s", "x\t2\ny\t2\n")
        with pytest.raises(io.ParseError, match=r"d.csv:3"):
            io.read_dataset(tmp_path / "d.csv", schema_path=tmp_path / "s")

    def test_header_mismatch(self, tmp_path):
        write(tmp_path / "d.csv", "x,z\n0,1\n")
        write(tmp_path / "s", "x\t2\ny\t2\n")
        with pytest.raises(io.ParseError):
            io.read_dataset(tmp_path / "d.csv", schema_path=tmp_path / "s")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            io.read_dataset(tmp_path / "nope.csv")


class TestEvents:
    def test_three_hits(self, tmp_path):
        write(tmp_path / "e.tsv", "0\t2\n1\t0\n3\t1\n")
        d = io.read_dataset(tmp_path / "e.tsv")
        assert d.cases.sum() == 3 and d.cases.shape == (4, 3)
        assert d.cases[0, 2] == 1 and d.cases[1, 0] == 1 and d.cases[3, 1] == 1

    def test_schema_sets_width(self, tmp_path):
        write(tmp_path / "e.events", "0\t0\n")
        d = io.read_events(tmp_path / "e.events", VariableSchema.binary(5), n_cases=3)
        assert d.cases.shape == (3, 5) and d.cases.sum() == 1

    def test_bad_lines(self, tmp_path):
        write(tmp_path / "e.tsv", "0\t1\n0 1\n")
        with pytest.raises(io.ParseError, match=r"e.tsv:2"):
            io.read_dataset(tmp_path / "e.tsv")
        write(tmp_path / "f.tsv", "0\t7\n")
        with pytest.raises(io.ParseError, match=r"f.tsv:1"):
            io.read_events(tmp_path / "f.tsv", VariableSchema.binary(3))

    def test_binary_only(self, tmp_path):
        write(tmp_path / "e.tsv", "0\t1\n")
        with pytest.raises(io.ParseError):
            io.read_events(tmp_path / "e.tsv", VariableSchema(["a", "b"], [3, 2]))


class TestModelFile:
    def test_identity(self, tmp_path, rng):
        for K in (1, 2, 5):
            m = random_model(rng, random_schema(rng), K)
            io.write_model(m, tmp_path / "m.txt")
            back = io.read_model(tmp_path / "m.txt")
            assert back.schema == m.schema
            np.testing.assert_array_equal(back.lam, m.lam)
            for a, b in zip(back.theta, m.theta):
                np.testing.assert_array_equal(a, b)

    def test_extreme_values(self, tmp_path):
        schema = VariableSchema.binary(1)
        from mixclust.core import MixtureModel

        t = np.array([[1e-300, 1.0 - 1e-300], [0.1 + 0.2, 1 - (0.1 + 0.2)]])
        t = t / t.sum(axis=1, keepdims=True)
        m = MixtureModel(schema, np.array([1 / 3, 2 / 3]), [t])
        io.write_model(m, tmp_path / "m.txt")
        back = io.read_model(tmp_path / "m.txt")
        np.testing.assert_array_equal(back.theta[0], t)
        np.testing.assert_array_equal(back.lam, m.lam)

    def test_truncated(self, tmp_path, rng):
        m = random_model(rng, random_schema(rng), 2)
        io.write_model(m, tmp_path / "m.txt")
        lines = (tmp_path / "m.txt").read_text().splitlines()
        write(tmp_path / "bad.txt", "\n".join(lines[:-1]) + "\n")
        with pytest.raises(io.ParseError):
            io.read_model(tmp_path / "bad.txt")


def test_manifest_round_trip(tmp_path):
    io.write_manifest({"a": 1, "b": [3, 4], "c": "x"}, tmp_path / "m")
    assert io.read_manifest(tmp_path / "m") == {"a": "1", "b": "3 4", "c": "x"}


# -- command line -------------------------------------------------------------


def dump_planted(tmp_path, N=120, n=6, seed=0, flip=0.05):
    d = planted(N=N, n=n, seed=seed, flip=flip)
    io.write_csv(d, tmp_path / "train.csv")
    t = planted(N=60, n=n, seed=seed + 1, flip=flip)
    io.write_csv(t, tmp_path / "test.csv")
    return tmp_path / "train.csv", tmp_path / "test.csv"


@pytest.fixture(scope="module")
def small_gen(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert main(["gen", "--out", str(out), "--cases", "600", "--test-cases", "200", "--n-total", "40", "--n-keep", "20"]) == 0
    return out


class TestGen:
    def test_files(self, small_gen):
        train = io.read_dataset(small_gen / "train.csv")
        test = io.read_dataset(small_gen / "test.csv")
        assert train.N == 600 and test.N == 200 and train.schema.n == 20
        assert train.labels is not None
        manifest = io.read_manifest(small_gen / "manifest.txt")
        assert len(manifest["retained"].split()) == 20

    def test_byte_identical_rerun(self, small_gen, tmp_path):
        args = ["gen", "--out", str(tmp_path), "--cases", "600", "--test-cases", "200", "--n-total", "40", "--n-keep", "20"]
        assert main(args) == 0
        for name in ("train.csv", "test.csv", "generator.txt", "manifest.txt", "train.csv.schema"):
            assert (tmp_path / name).read_bytes() == (small_gen / name).read_bytes()

    def test_generator_file(self, small_gen):
        gen = io.read_generator(small_gen / "generator.txt")
        assert gen.K == 10 and gen.n == 40


class TestFit:
    def test_em_planted(self, tmp_path, capsys):
        train, test = dump_planted(tmp_path)
        rc = main(["fit", "--train", str(train), "--test", str(test), "--k", "2", "--model-out", str(tmp_path / "m.txt")])
        assert rc == 0
        rec = json.loads(capsys.readouterr().out)
        assert rec["class_acc"] == 1.0 and rec["K"] == 2
        assert rec["fit_min_per_class"] == pytest.approx(rec["fit_s"] / 60 / 2)
        assert io.read_model(tmp_path / "m.txt").K == 2

    def test_cem_iterations_bounded(self, tmp_path):
        train, _ = dump_planted(tmp_path, flip=0.2)
        out = tmp_path / "r.json"
        assert main(["fit", "--train", str(train), "--k", "3", "--algorithm", "cem", "--record-out", str(out)]) == 0
        rec = json.loads(out.read_text())
        assert 1 <= rec["iterations"] <= 150

    def test_hac(self, tmp_path):
        train, test = dump_planted(tmp_path)
        out = tmp_path / "r.json"
        assert main(["fit", "--train", str(train), "--test", str(test), "--k", "2", "--algorithm", "hac", "--record-out", str(out)]) == 0
        rec = json.loads(out.read_text())
        assert rec["class_acc"] == 1.0 and rec["fit_s"] >= 0

    def test_k_above_n(self, tmp_path):
        train, _ = dump_planted(tmp_path, N=10)
        assert main(["fit", "--train", str(train), "--k", "11"]) == 2

    def test_bad_input(self, tmp_path):
        write(tmp_path / "bad.csv", "x,y\n0,1\n1\n")
        assert main(["fit", "--train", str(tmp_path / "bad.csv"), "--k", "2"]) == 2
        assert main(["fit", "--train", str(tmp_path / "missing.csv"), "--k", "2"]) == 2

    def test_bad_arguments(self):
        with pytest.raises(SystemExit) as exc:
            main(["fit", "--k", "2"])
        assert exc.value.code == 2


class TestSweep:
    def test_planted_k_star(self, tmp_path, capsys):
        train, test = dump_planted(tmp_path)
        out = tmp_path / "sw"
        assert main(["sweep", "--train", str(train), "--test", str(test), "--k-min", "1", "--k-max", "4", "--out", str(out), "--keep-models"]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["k_star"] == 2 and summary["class_acc"] == 1.0
        lines = (out / "sweep.tsv").read_text().splitlines()
        assert len(lines) == 5
        assert all((out / f"model_K{k}.txt").exists() for k in range(1, 5))
        assert "K* = 2" in capsys.readouterr().out

    def test_single_k(self, tmp_path):
        train, _ = dump_planted(tmp_path)
        out = tmp_path / "sw"
        assert main(["sweep", "--train", str(train), "--k-min", "3", "--k-max", "3", "--out", str(out)]) == 0
        assert json.loads((out / "summary.json").read_text())["k_star"] == 3

    def test_inverted_range(self, tmp_path):
        train, _ = dump_planted(tmp_path)
        assert main(["sweep", "--train", str(train), "--k-min", "4", "--k-max", "2", "--out", str(tmp_path / "o")]) == 2

    def test_unwritable_output(self, tmp_path):
        train, _ = dump_planted(tmp_path)
        blocker = write(tmp_path / "file", "x")
        assert main(["sweep", "--train", str(train), "--k-max", "2", "--out", str(blocker / "sub")]) == 2


class TestEval:
    def test_model_file(self, tmp_path):
        train, test = dump_planted(tmp_path)
        main(["fit", "--train", str(train), "--k", "2", "--model-out", str(tmp_path / "m.txt"), "--record-out", str(tmp_path / "r")])
        assert main(["eval", "--model", str(tmp_path / "m.txt"), "--test", str(test), "--out", str(tmp_path / "e.json")]) == 0
        rep = json.loads((tmp_path / "e.json").read_text())
        fit = json.loads((tmp_path / "r").read_text())
        assert rep["class_acc"] == 1.0 and rep["holdout_l_bits"] < 0
        assert rep["effective_k"] == 2 and fit["K"] == 2

    def test_schema_mismatch(self, tmp_path, capsys):
        train, _ = dump_planted(tmp_path, n=6)
        main(["fit", "--train", str(train), "--k", "2", "--model-out", str(tmp_path / "m.txt"), "--record-out", str(tmp_path / "r")])
        other = planted(N=10, n=5)
        io.write_csv(other, tmp_path / "other.csv")
        assert main(["eval", "--model", str(tmp_path / "m.txt"), "--test", str(tmp_path / "other.csv")]) == 2
        assert "error:" in capsys.readouterr().err

    def test_truth(self, small_gen, tmp_path):
        out = tmp_path / "t.json"
        assert main(["eval", "--truth", str(small_gen), "--test", str(small_gen / "test.csv"), "--out", str(out)]) == 0
        rep = json.loads(out.read_text())
        assert rep["K"] == 10 and 0 < rep["class_acc"] <= 1 and rep["holdout_l_bits"] < 0

    def test_needs_one_source(self, tmp_path, small_gen):
        assert main(["eval", "--test", str(small_gen / "test.csv")]) == 2


def bench_args(small_gen, out, *extra):
    return ["bench", "--data", str(small_gen), "--k-min", "1", "--k-max", "3", "--out", str(out), *extra]


class TestBench:
    def test_aggregation_matches_runs(self, small_gen, tmp_path):
        out = tmp_path / "b"
        assert main(bench_args(small_gen, out, "--conditions", "em:marginal,cem:random", "--seeds", "0", "1", "2")) == 0
        runs = read_runs(out / "runs.tsv")
        assert len(runs) == 6
        summary = read_runs(out / "summary.tsv")
        assert [r["condition"] for r in summary] == ["em-marginal", "cem-random"]
        for row in summary:
            mine = [r for r in runs if r["condition"] == row["condition"]]
            assert int(row["runs"]) == 3 and row["failed"] == "0"
            for m in METRICS:
                vals = [float(r[m]) for r in mine]
                mean = sum(vals) / 3
                std = math.sqrt(sum((v - mean) ** 2 for v in vals) / 2)
                assert float(row[f"{m}_mean"]) == pytest.approx(mean, rel=1e-12, abs=1e-12)
                assert float(row[f"{m}_std"]) == pytest.approx(std, rel=1e-12, abs=1e-12)
        text = (out / "summary.txt").read_text()
        assert "true model" in text and "+-" in text

    def test_single_seed_has_no_std(self, small_gen, tmp_path):
        out = tmp_path / "b"
        assert main(bench_args(small_gen, out, "--conditions", "hac", "--seeds", "3", "--no-truth")) == 0
        row = read_runs(out / "summary.tsv")[0]
        assert row["runs"] == "1"
        assert all(row[f"{m}_std"] == "" for m in METRICS)
        assert "+-" not in (out / "summary.txt").read_text()

    def test_deterministic_apart_from_timing(self, small_gen, tmp_path):
        keep = ("condition", "seed", "marginal_l_bits", "k_star", "effective_k", "holdout_l_bits", "class_acc", "iterations")
        rows = []
        for name in ("a", "b"):
            assert main(bench_args(small_gen, tmp_path / name, "--conditions", "em:random", "--seeds", "4", "--no-truth")) == 0
            rows.append([{k: r[k] for k in keep} for r in read_runs(tmp_path / name / "runs.tsv")])
        assert rows[0] == rows[1]

    def test_failed_run_exit_code(self, small_gen, tmp_path):
        out = tmp_path / "b"
        rc = main(bench_args(small_gen, out, "--conditions", "em:hac", "--hac-subsample", "2", "--seeds", "0", "--no-truth"))
        assert rc == 1
        assert "em-hac\t0\t" in (out / "failures.tsv").read_text()

    def test_bad_conditions(self, small_gen, tmp_path):
        assert main(bench_args(small_gen, tmp_path, "--conditions", "em:kmeans")) == 2
        assert main(bench_args(small_gen, tmp_path, "--conditions", "em:random", "--preset", "init-comparison")) == 2


def test_mean_std_examples():
    assert mean_std([1.0, 3.0]) == (2.0, math.sqrt(2.0))
    assert mean_std([5.0]) == (5.0, None)


def test_hac_time_ratio(tmp_path):
    """Doubling N roughly quadruples HAC time (best of two timings each)."""
    rng = np.random.default_rng(7)
    d = Dataset(VariableSchema.binary(150), (rng.random((2000, 150)) < np.linspace(0.4, 0.01, 150)).astype(int))
    from mixclust.hac import run_hac

    run_hac(d.take(np.arange(50)), 1)
    times = {}
    for n in (1000, 2000):
        sub = d.take(np.arange(n))
        best = math.inf
        for _ in range(2):
            t0 = time.perf_counter()
            run_hac(sub, 10)
            best = min(best, time.perf_counter() - t0)
        times[n] = best
    assert 3.0 <= times[2000] / times[1000] <= 6.0
