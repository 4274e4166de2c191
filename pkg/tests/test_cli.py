import subprocess
import sys

import pytest

from fmcsc.cli import main, read_embedding
from fmcsc.data import load_dataset
from fmcsc.errors import DataError

CONF = """
synthetic.samples = 120
synthetic.view_dims = 6,5
partition.num_multi = 2
partition.num_single = 1
train.rounds = 1
train.local_epochs = 1
train.pretrain_epochs = 1
train.batch_size = 32
model.hidden = 8
model.head_hidden = 8
model.latent_dim = 4
model.feature_dim = 4
eval.restarts = 1
"""


def test_run_writes_outputs(tmp_path, capsys):
    conf = tmp_path / "c.conf"
    conf.write_text(CONF)
    out = tmp_path / "out"
    assert main(["run", "--config", str(conf), "--out", str(out), "--seed", "3", "--workers", "2"]) == 0
    assert {p.name for p in out.iterdir()} == {"metrics.csv", "config.echo", "embedding.csv"}
    echo = (out / "config.echo").read_text()
    assert "seed = 3" in echo and "workers = 2" in echo
    assert "final acc=" in capsys.readouterr().out
    assert main(["eval", "--embedding", str(out / "embedding.csv"), "--k", "3"]) == 0
    assert capsys.readouterr().out.startswith("acc=")


def test_exit_codes(tmp_path):
    bad = tmp_path / "bad.conf"
    bad.write_text("nonsense.key = 1\n")
    assert main(["run", "--config", str(bad)]) == 2
    data = tmp_path / "broken"
    data.mkdir()
    (data / "meta").write_text("views=1\nsamples=3\nclasses=2\ndim.1=2\n")
    conf = tmp_path / "data.conf"
    conf.write_text(f"data.path = {data}\n")
    assert main(["run", "--config", str(conf)]) == 3
    assert main(["eval", "--embedding", str(tmp_path / "none.csv"), "--k", "2"]) == 3


def test_protocol_error_exit_code(tmp_path, monkeypatch):
    import fmcsc.cli as cli
    from fmcsc.errors import ProtocolError

    def fail(config):
        raise ProtocolError("round 1, server: no multi-view update")

    monkeypatch.setattr(cli, "run_experiment", fail)
    conf = tmp_path / "c.conf"
    conf.write_text(CONF)
    assert main(["run", "--config", str(conf)]) == 4


def test_gen_synthetic(tmp_path):
    spec = tmp_path / "spec.txt"
    spec.write_text("samples = 30\nclasses = 3\nview_dims = 4,3\n")
    assert main(["gen-synthetic", "--spec", str(spec), "--out", str(tmp_path / "ds")]) == 0
    ds = load_dataset(tmp_path / "ds", normalize=False)
    assert ds.num_samples == 30 and ds.view_dims == [4, 3]
    assert main(["gen-synthetic", "--spec", str(tmp_path / "absent"), "--out", str(tmp_path / "x")]) == 2


def test_read_embedding_rejects_bad_header(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(DataError):
        read_embedding(p)


def test_console_module_entry(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "fmcsc.cli", "run", "--config", str(tmp_path / "nope")], capture_output=True, text=True)
    assert proc.returncode == 2 and "config file not found" in proc.stderr
