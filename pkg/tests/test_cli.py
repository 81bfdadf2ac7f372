import io

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

import cli
from config import ENV_OVERRIDES
from experiment import make_sine_data
from model import Model


@pytest.fixture(autouse=True)
def isolated(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    for name in list(ENV_OVERRIDES) + ['EXPECTILE_CONFIG']:
        monkeypatch.delenv(name, raising=False)
    return tmp_path


def sine_file(path, n=60, seed=0, with_labels=True):
    raw = make_sine_data(n, seed=seed)
    columns = [raw.features[:, 0], raw.labels] if with_labels else [raw.features[:, 0]]
    np.savetxt(path, np.column_stack(columns), delimiter=",", fmt="%.17g")
    return raw


def table(capsys, delimiter="\t"):
    return pd.read_csv(io.StringIO(capsys.readouterr().out), sep=delimiter)


class TestTrain:

    def test_one_sample(self, isolated, capsys):
        (isolated / "one.csv").write_text("0,3\n")
        code = cli.main(["train", "one.csv", "--no-scale", "--tau", "0.5", "--cost", "0.5",
                         "--gamma", "1", "--model-out", "m.txt"])
        assert code == cli.EXIT_OK
        model = Model.load("m.txt")
        assert_allclose(model.coefficients, [1.0])
        summary = table(capsys)
        assert summary.loc[0, 'support'] == 1
        assert bool(summary.loc[0, 'converged'])

    def test_split_reports_test_risk(self, isolated, capsys):
        sine_file(isolated / "sine.csv")
        code = cli.main(["train", "sine.csv", "--tau", "0.3", "--lambda", "1e-3", "--gamma", "3",
                         "--split", "0.7", "--seed", "2", "--wss", "wss1"])
        assert code == cli.EXIT_OK
        summary = table(capsys)
        assert summary.loc[0, 'n'] == 42
        assert summary.loc[0, 'test_risk'] >= 0.0

    def test_sparse_input(self, isolated):
        (isolated / "d.svm").write_text("1 1:0.5\n-1 1:-0.5 2:1\n0.5 2:0.2\n")
        code = cli.main(["-q", "train", "d.svm", "--format", "sparse", "--tau", "0.5",
                         "--cost", "1", "--solver", "1d"])
        assert code == cli.EXIT_OK
        assert Model.load("model.txt").d == 2

    def test_not_converged(self, isolated):
        sine_file(isolated / "sine.csv")
        code = cli.main(["train", "sine.csv", "--tau", "0.5", "--cost", "10", "--gamma", "3",
                         "--epsilon", "1e-12", "--max-iter", "1"])
        assert code == cli.EXIT_NOT_CONVERGED

    @pytest.mark.parametrize("extra", [["--tau", "1.0", "--cost", "1"],
                                       ["--tau", "0.5"],
                                       ["--tau", "0.5", "--cost", "-1"]])
    def test_usage_errors(self, isolated, extra):
        (isolated / "d.csv").write_text("0,1\n1,0\n")
        assert cli.main(["train", "d.csv"] + extra) == cli.EXIT_USAGE

    def test_gamma_default_is_documented(self, capsys):
        args = cli.build_parser().parse_args(["train", "d.csv", "--tau", "0.5", "--cost", "1"])
        assert args.gamma == 1.0
        with pytest.raises(SystemExit) as info:
            cli.build_parser().parse_args(["train", "--help"])
        assert info.value.code == 0
        assert "||x - x2||^2) (default: 1)" in " ".join(capsys.readouterr().out.split())

    def test_exclusive_cost_flags(self, isolated):
        with pytest.raises(SystemExit) as info:
            cli.main(["train", "d.csv", "--tau", "0.5", "--cost", "1", "--lambda", "0.1"])
        assert info.value.code == cli.EXIT_USAGE

    def test_missing_file(self):
        assert cli.main(["train", "nope.csv", "--tau", "0.5", "--cost", "1"]) == cli.EXIT_DATA

    def test_malformed_file(self, isolated):
        (isolated / "bad.csv").write_text("0,1\n1,x\n")
        assert cli.main(["train", "bad.csv", "--tau", "0.5", "--cost", "1"]) == cli.EXIT_DATA


class TestPredict:

    def test_round_trip(self, isolated, capsys):
        sine_file(isolated / "sine.csv")
        raw = sine_file(isolated / "x.csv", n=15, seed=5, with_labels=False)
        assert cli.main(["train", "sine.csv", "--tau", "0.8", "--lambda", "1e-3",
                         "--gamma", "3"]) == cli.EXIT_OK
        capsys.readouterr()
        assert cli.main(["predict", "model.txt", "x.csv"]) == cli.EXIT_OK
        predictions = table(capsys)['prediction'].to_numpy()
        expected = Model.load("model.txt").predict_batch(raw.features)
        assert_allclose(predictions, expected, rtol=1e-15)

    def test_clip_flag(self, isolated, capsys):
        (isolated / "one.csv").write_text("0,3\n")
        cli.main(["train", "one.csv", "--no-scale", "--tau", "0.5", "--cost", "0.5", "--clip", "0.25"])
        (isolated / "x.csv").write_text("0\n")
        capsys.readouterr()
        assert cli.main(["predict", "model.txt", "x.csv", "--clip"]) == cli.EXIT_OK
        assert_allclose(table(capsys)['prediction'], [0.25])

    def test_empty_input(self, isolated, capsys):
        (isolated / "one.csv").write_text("0,3\n")
        cli.main(["train", "one.csv", "--no-scale", "--tau", "0.5", "--cost", "0.5"])
        (isolated / "empty.csv").write_text("")
        capsys.readouterr()
        assert cli.main(["predict", "model.txt", "empty.csv"]) == cli.EXIT_OK
        assert capsys.readouterr().out == ""

    def test_dimension_mismatch(self, isolated):
        (isolated / "one.csv").write_text("0,3\n")
        cli.main(["train", "one.csv", "--no-scale", "--tau", "0.5", "--cost", "0.5"])
        (isolated / "x2.csv").write_text("0,1\n")
        assert cli.main(["predict", "model.txt", "x2.csv"]) == cli.EXIT_DATA

    def test_corrupt_model(self, isolated):
        (isolated / "model.txt").write_text("expectile-model 9\n")
        (isolated / "x.csv").write_text("0\n")
        assert cli.main(["predict", "model.txt", "x.csv"]) == cli.EXIT_DATA


class TestGridCommands:

    GRID = ["--lambdas", "0.1,0.01", "--gammas", "0.05,0.1", "--folds", "3"]

    def test_cv(self, isolated):
        sine_file(isolated / "sine.csv")
        code = cli.main(["cv", "sine.csv", "--tau", "0.5", "--out", "cells.tsv",
                         "--split", "0.8"] + self.GRID)
        assert code == cli.EXIT_OK
        cells = pd.read_csv("cells.tsv", sep="\t")
        assert len(cells) == 4
        assert cells['best'].sum() == 1
        assert cells.loc[cells['best'], 'test_risk'].notna().all()
        assert Model.load("model.txt").m > 0

    def test_cv_best_cell_fits_sine(self, isolated):
        # noise alone costs about 0.01 in scaled units; a flat fit costs about 0.1
        sine_file(isolated / "sine.csv", n=200, seed=3)
        code = cli.main(["cv", "sine.csv", "--tau", "0.5", "--out", "cells.tsv", "--split", "0.8",
                         "--lambdas", "1e-3,1e-4", "--gammas", "0.02,0.04", "--folds", "3"])
        assert code == cli.EXIT_OK
        cells = pd.read_csv("cells.tsv", sep="\t")
        assert cells.loc[cells['best'], 'test_risk'].iloc[0] < 0.03

    def test_bench(self, isolated):
        sine_file(isolated / "a.csv", n=30, seed=1)
        sine_file(isolated / "b.csv", n=30, seed=2)
        code = cli.main(["bench", "a.csv", "b.csv", "--wss-list", "wss1,wss2", "--knn-list", "5",
                         "--out", "bench.tsv"] + self.GRID)
        assert code == cli.EXIT_OK
        frame = pd.read_csv("bench.tsv", sep="\t")
        assert len(frame) == 2 * 2 * (4 + 1)
        assert set(frame['dataset']) == {"a.csv", "b.csv"}

    def test_curves(self, isolated, capsys):
        sine_file(isolated / "sine.csv")
        code = cli.main(["curves", "sine.csv", "--lambda", "1e-3", "--gamma", "3",
                         "--taus", "0.25,0.75", "--points", "7", "--out-delimiter", ","])
        assert code == cli.EXIT_OK
        curves = table(capsys, delimiter=",")
        assert list(curves.columns) == ['x', 'tau_0.25', 'tau_0.75']
        assert len(curves) == 7

    def test_curves_with_cost(self, isolated, capsys):
        sine_file(isolated / "sine.csv")
        code = cli.main(["curves", "sine.csv", "--cost", "8", "--gamma", "3", "--taus", "0.5",
                         "--points", "3"])
        assert code == cli.EXIT_OK
        assert len(table(capsys)) == 3

    def test_curves_need_parameters(self, isolated):
        sine_file(isolated / "sine.csv")
        assert cli.main(["curves", "sine.csv", "--lambda", "1e-3"]) == cli.EXIT_USAGE


class TestEntryPoint:

    def test_no_command(self):
        assert cli.main([]) == cli.EXIT_USAGE

    def test_missing_config(self):
        assert cli.main(["--config", "absent.toml", "train", "d.csv", "--tau", "0.5",
                         "--cost", "1"]) == cli.EXIT_USAGE

    def test_config_file_applies(self, isolated, capsys):
        (isolated / "one.csv").write_text("0,3\n")
        (isolated / "run.toml").write_text('[experiment]\ndelimiter = ","\n')
        code = cli.main(["--config", "run.toml", "train", "one.csv", "--no-scale", "--tau", "0.5",
                         "--cost", "0.5"])
        assert code == cli.EXIT_OK
        assert table(capsys, delimiter=",").loc[0, 'support'] == 1

    def test_env_override(self, isolated, monkeypatch):
        sine_file(isolated / "sine.csv")
        monkeypatch.setenv("EXPECTILE_MAX_ITER", "1")
        code = cli.main(["train", "sine.csv", "--tau", "0.5", "--cost", "10", "--gamma", "3",
                         "--epsilon", "1e-12"])
        assert code == cli.EXIT_NOT_CONVERGED
