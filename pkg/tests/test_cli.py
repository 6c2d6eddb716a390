import csv
import json
import os

import pytest

from bnnattack.cli import main
from bnnattack.modelio import load_idx_paths, load_model_path
from lp_reader import read_lp


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["train-toy", "--inputs", "6", "--count", "120", "--widths", "8,8", "--epochs", "5",
                 "--out", str(d / "toy.bnn"), "--data-out", str(d / "data")]) == 0
    return d


def test_gen_model(tmp_path, capsys):
    out = tmp_path / "rand.bnn"
    assert main(["gen-model", "--inputs", "12", "--widths", "5,4", "--classes", "3", "--out", str(out)]) == 0
    model = load_model_path(out)
    assert model.n_inputs == 12 and list(model.widths) == [5, 4] and model.n_classes == 3
    assert "wrote" in capsys.readouterr().out


def test_train_toy_writes_data(workdir):
    model = load_model_path(workdir / "toy.bnn")
    data = load_idx_paths(workdir / "data" / "images.idx", workdir / "data" / "labels.idx")
    assert len(data) == 120 and data.n == model.n_inputs == 6


def test_attack_and_verify(workdir, capsys):
    out = workdir / "res.csv"
    traces = workdir / "traces"
    argv = ["attack", "--model", str(workdir / "toy.bnn"), "--images", str(workdir / "data" / "images.idx"),
            "--labels", str(workdir / "data" / "labels.idx"), "--method", "iprop", "--eps", "0.1,0.3",
            "--points", "3", "--time-limit", "5", "--sub-time-limit", "1", "--warm-start", "fgsm:0.5",
            "--traces", str(traces)]
    assert main(argv + ["--out", str(out)]) == 0
    with open(out) as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 6
    assert os.path.exists(workdir / "res.summary.csv")
    assert "flip_rate" in capsys.readouterr().out
    pert = traces / f"iprop_eps0.3_{rows[1]['index']}.json"
    assert main(["verify", "--model", str(workdir / "toy.bnn"), "--perturbation", str(pert)]) == 0
    doc = json.loads(pert.read_text())
    doc["objective"] += 1.0
    bad = workdir / "bad.json"
    bad.write_text(json.dumps(doc))
    assert main(["verify", "--model", str(workdir / "toy.bnn"), "--perturbation", str(bad)]) == 1
    doc["objective"] -= 1.0
    doc["p"] = [0.5] * len(doc["p"])
    bad.write_text(json.dumps(doc))
    assert main(["verify", "--model", str(workdir / "toy.bnn"), "--perturbation", str(bad)]) == 1


def test_attack_constant_step_and_indices(workdir):
    out = workdir / "fgsm.csv"
    assert main(["attack", "--model", str(workdir / "toy.bnn"), "--images", str(workdir / "data" / "images.idx"),
                 "--labels", str(workdir / "data" / "labels.idx"), "--method", "iprop", "--step", "2",
                 "--eps", "0.2", "--indices", "5,7", "--time-limit", "3", "--out", str(out)]) == 0
    with open(out) as f:
        assert [r["index"] for r in csv.DictReader(f)] == ["5", "7"]


@pytest.mark.parametrize("encoding", ["bigm", "values"])
def test_export_milp(workdir, encoding):
    out = workdir / f"p0_{encoding}.lp"
    assert main(["export-milp", "--model", str(workdir / "toy.bnn"),
                 "--images", str(workdir / "data" / "images.idx"), "--labels", str(workdir / "data" / "labels.idx"),
                 "--point", "0", "--eps", "0.1", "--encoding", encoding, "--out", str(out)]) == 0
    parsed = read_lp(out.read_text())
    assert parsed["constraints"] and parsed["binaries"]


def test_bad_arguments():
    with pytest.raises(SystemExit):
        main(["attack", "--model", "m", "--images", "i", "--labels", "l", "--eps", "0.1", "--warm-start", "x"])
    with pytest.raises(SystemExit):
        main(["nonsense"])
