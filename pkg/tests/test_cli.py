import numpy as np
import pytest

from netgrow.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, EXIT_VERIFY, main
from netgrow.harness import save_checkpoint
from netgrow.net_core import mlp
from netgrow.verify import regression_config

CONFIG = """
[data]
kind = regression
n = 4
test_fraction = 0

[model]
hidden = 1
activation = tanh

[growth]
max_additions = 2

[train]
lr = 0.0001

[run]
name = cli
"""


@pytest.fixture
def checkpoint(tmp_path):
    path = tmp_path / "net.ckpt"
    save_checkpoint(mlp([1, 3, 1], "tanh", rng=np.random.default_rng(0)), path)
    return path


def test_run_writes_outputs(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text(CONFIG)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "out")]) == EXIT_OK
    assert (tmp_path / "out" / "cli-s0.csv").exists()
    assert (tmp_path / "out" / "cli-s0.ckpt").exists()
    assert "cli-s0" in capsys.readouterr().out


def test_run_many_seeds(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(CONFIG + "seeds = 1, 2\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "cli-s1.csv").exists() and (tmp_path / "cli-s2.csv").exists()


def test_verify_filtered(tmp_path, capsys):
    csv_path = tmp_path / "r.csv"
    assert main(["verify", "--filter", "numerics", "--csv", str(csv_path)]) == EXIT_OK
    assert "PASS" in capsys.readouterr().out
    assert csv_path.read_text().startswith("name,status")
    assert main(["verify", "--filter", "no-such-check"]) == EXIT_USAGE


def test_verify_failure_code(monkeypatch):
    from netgrow import bottleneck

    monkeypatch.setattr(bottleneck, "FAULTS", {"optimal_neurons_sign_flip"})
    assert main(["verify", "--filter", "criterion_01"]) == EXIT_VERIFY


def test_inspect(checkpoint, capsys):
    assert main(["inspect", "--checkpoint", str(checkpoint), "--data", "regression:n=4,test_fraction=0"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "Dense 1->3" in out and "position 0" in out and "psi" in out


@pytest.mark.parametrize("method", ["tiny", "gradmax", "random"])
def test_propose(checkpoint, capsys, method):
    args = ["propose", "--checkpoint", str(checkpoint), "--data", "regression:n=8,test_fraction=0",
            "--layer", "0", "--method", method, "--k", "1"]
    assert main(args) == EXIT_OK
    assert f"method {method}" in capsys.readouterr().out


def test_exit_codes(tmp_path, checkpoint):
    assert main(["run", "--config", str(tmp_path / "missing.ini")]) == EXIT_USAGE
    assert main(["bogus"]) == EXIT_USAGE
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"nonsense")
    assert main(["inspect", "--checkpoint", str(bad)]) == EXIT_DATA
    assert main(["inspect", "--checkpoint", str(checkpoint), "--data", "cifar:n=1"]) == EXIT_DATA
    # a growable position that does not exist is a usage error
    assert main(["propose", "--checkpoint", str(checkpoint), "--data", "regression:n=4",
                 "--layer", "5"]) == EXIT_USAGE


def test_help():
    assert main(["--help"]) == EXIT_OK


def test_regression_config_matches_shipped_file():
    from pathlib import Path

    from netgrow.harness import load_config

    shipped = load_config(Path(__file__).resolve().parents[1] / "configs" / "regression4.ini")
    ref = regression_config()
    for key in ("hidden", "activation", "grower", "bound", "max_additions", "target_train_loss", "lr"):
        assert getattr(shipped, key) == getattr(ref, key), key


def test_exit_code_mapping():
    from netgrow.cli import EXIT_NUMERIC, exit_code
    from netgrow.errors import NumericalError, ShapeError, VerificationFailure

    assert exit_code(NumericalError("x")) == EXIT_NUMERIC
    assert exit_code(np.linalg.LinAlgError("x")) == EXIT_NUMERIC
    assert exit_code(ShapeError("x")) == EXIT_USAGE
    assert exit_code(VerificationFailure("x")) == EXIT_VERIFY
    with pytest.raises(KeyError):
        exit_code(KeyError("unexpected"))
