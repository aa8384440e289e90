import csv

import pytest

from sylvinit.core.experiments import BENCH_HEADER, CURVE_HEADER, LAMBDA_HEADER, RECORD_HEADER
from sylvinit.core.initdriver import REPORT_HEADER
from sylvinit.core.save import read_params
from sylvinit.main import _train_config, build_parser, main

BLOBS = ["--dataset", "blobs", "--arch", "mlp", "--blob-side", "4", "--blob-per-class", "10",
         "--per-class", "5"]


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_init_writes_report_and_params(tmp_path):
    out = tmp_path / "init.csv"
    assert main(["init", *BLOBS, "--out", str(out)]) == 0
    rows = _rows(out)
    assert rows[0] == REPORT_HEADER
    assert [r[0] for r in rows[1:]] == ["hidden", "final_dense"]
    assert [r[4] for r in rows[1:]] == ["pca", "onehot"]
    params = read_params(out.with_suffix(".bin"))
    assert set(params) == {"hidden.weight", "hidden.bias", "final_dense.weight", "final_dense.bias"}


def test_init_reuses_params_for_filtered_layers(tmp_path):
    first = tmp_path / "a.bin"
    assert main(["init", *BLOBS, "--out", str(tmp_path / "a.csv"), "--params-out", str(first)]) == 0
    out = tmp_path / "b.csv"
    argv = ["init", *BLOBS, "--params", str(first), "--layers", "final_dense", "--out", str(out),
            "--code", "kmeans"]
    assert main(argv) == 0
    assert [r[0] for r in _rows(out)[1:]] == ["final_dense"]
    a, b = read_params(first), read_params(out.with_suffix(".bin"))
    assert (a["hidden.weight"] == b["hidden.weight"]).all()


def test_train_appends_and_writes_curve(tmp_path):
    out = tmp_path / "train.csv"
    argv = ["train", *BLOBS, "--epochs", "2", "--batch-size", "8", "--shot", "5", "--out", str(out)]
    assert main(argv) == 0
    assert main(argv) == 0
    rows = _rows(out)
    assert rows[0] == RECORD_HEADER
    assert len(rows) == 3
    assert rows[1][:4] == ["sylvester", "blobs", "5", "0"]

    curve = _rows(tmp_path / "train_curve.csv")
    assert curve[0] == CURVE_HEADER
    assert [r[0] for r in curve[1:4]] == ["0", "1", "2"]


def test_train_is_byte_identical_without_timing(tmp_path):
    out = tmp_path / "t.csv"
    argv = ["train", *BLOBS, "--epochs", "1", "--seeds", "1,0", "--no-timing", "--overwrite",
            "--out", str(out)]
    assert main(argv) == 0
    first = out.read_bytes()
    curve = (tmp_path / "t_curve_seed0.csv").read_bytes()
    assert main(argv) == 0
    assert out.read_bytes() == first
    assert (tmp_path / "t_curve_seed0.csv").read_bytes() == curve
    assert [r[3] for r in _rows(out)[1:]] == ["0", "1"]


def test_bench_rows(tmp_path):
    out = tmp_path / "bench.csv"
    assert main(["bench", *BLOBS, "--counts", "5,2", "--reference", "--out", str(out)]) == 0
    rows = _rows(out)
    assert rows[0] == BENCH_HEADER
    methods = [r[:2] for r in rows[1:]]
    assert methods == [["sylvester", "2"], ["sylvester", "5"], ["he-uniform", ""]]


def test_sweep_lambda_default_list(tmp_path):
    out = tmp_path / "lam.csv"
    assert main(["sweep-lambda", *BLOBS, "--out", str(out)]) == 0
    rows = _rows(out)
    assert rows[0] == LAMBDA_HEADER
    assert [r[0] for r in rows[1:]] == ["0.01", "0.1", "1", "10", "100"]
    # no training epochs by default, so initial and final agree
    assert all(r[1] == r[2] for r in rows[1:])


@pytest.mark.parametrize(
    "argv",
    [
        ["init", "--scheme", "orthogonal"],
        ["init", "--code", "ica"],
        ["init", "--dataset", "mnist"],
        ["train", "--seeds", "a,b"],
        ["frobnicate"],
    ],
)
def test_usage_errors_exit_2(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2


def test_missing_data_exits_1(tmp_path, monkeypatch):
    monkeypatch.delenv("SYLVINIT_DATA_DIR", raising=False)
    assert main(["init", "--dataset", "cifar10", "--out", str(tmp_path / "x.csv")]) == 1
    assert main(["init", "--dataset", "cifar10", "--data-dir", str(tmp_path),
                 "--out", str(tmp_path / "x.csv")]) == 1


def test_bad_layer_filter_exits_1(tmp_path):
    assert main(["init", *BLOBS, "--layers", "conv9", "--out", str(tmp_path / "x.csv")]) == 1


@pytest.mark.parametrize(
    "extra",
    [["init", "--per-class", "0"], ["train", "--shot", "0", "--epochs", "0"]],
    ids=["per-class", "shot"],
)
def test_zero_counts_are_rejected_not_defaulted(tmp_path, extra):
    command, *flags = extra
    argv = [command, "--dataset", "blobs", "--arch", "mlp", "--blob-side", "4", *flags,
            "--out", str(tmp_path / "x.csv")]
    assert main(argv) == 1
    assert not (tmp_path / "x.csv").exists()


def test_data_dir_from_environment(tmp_path, monkeypatch, cifar10_dir):
    monkeypatch.setenv("SYLVINIT_DATA_DIR", str(cifar10_dir))
    out = tmp_path / "c.csv"
    argv = ["init", "--dataset", "cifar10", "--per-class", "1", "--out", str(out)]
    assert main(argv) == 0
    assert _rows(out)[1][:3] == ["conv1", "27", "16"]
    assert _rows(out)[-1][0] == "final_dense"


def test_code_flag_parsing():
    args = build_parser().parse_args(["init", "--code", "kmeans", "--code", "hidden=lda"])
    assert args.code == [(None, "kmeans"), ("hidden", "lda")]


def test_help_describes_schemes_and_codes(capsys):
    with pytest.raises(SystemExit) as exc:
        build_parser().parse_args(["init", "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    assert "(Sylvester):" in out
    assert "(One-hot):" in out


def test_train_epochs_follow_dataset_default():
    args = build_parser().parse_args(["train", "--dataset", "cifar10"])
    assert _train_config(args).epochs == 200
    assert _train_config(args).decay_epochs == (100, 150)
    args = build_parser().parse_args(["train", "--epochs", "0"])
    assert _train_config(args).epochs == 0
