import configparser
import json

import pytest

from deepchannel.acceptance import bundled_config
from deepchannel.core_math import ConfigError
from deepchannel.experiment import build_data, build_model, load_experiment, render_ini, run_experiment
from deepchannel.trainer import DivergenceError

BASE = """
[data]
source = bianchini
k = 0
n_train = 200
n_val = 50
[network]
hidden = 8
hidden_transfer = relu
output_transfer = logistic
[channel]
algorithm = srbp
channel_transfer = linear
[train]
epochs = 2
batch_size = 20
seed = 3
"""


def edited(text, **sections):
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(text)
    for section, kv in sections.items():
        if not cp.has_section(section):
            cp.add_section(section)
        for k, v in kv.items():
            cp[section][k] = str(v)
    return render_ini(cp)


@pytest.mark.parametrize("text, fragment", [
    (BASE + "extra = 1\n", "extra"),
    (edited(BASE, channel={"algorithm": "feedback-alignment"}), "[channel]"),
    (edited(BASE, data={"source": "higgs"}), "source"),
    (edited(BASE, network={"hidden_transfer": "swish"}), "[network]"),
    (edited(BASE, train={"batch_size": "many"}), "batch_size"),
    (edited(BASE, train={"early_stop_threshold": "0.01"}, data={"n_val": "0"}), "n_val"),
    ("[model]\nx = 1\n", "[model]"),
    ("not an ini", "malformed"),
])
def test_schema_errors_name_the_problem(text, fragment):
    with pytest.raises(ConfigError) as info:
        load_experiment(text, is_text=True)
    assert fragment in str(info.value)


def test_resolved_config_fills_defaults_and_reloads():
    exp = load_experiment(BASE, is_text=True)
    text = exp.resolved_text()
    assert "momentum = 0.0" in text and "adaptivity = fixed" in text
    assert load_experiment(text, is_text=True).values == exp.values


def test_with_seed():
    exp = load_experiment(BASE, is_text=True).with_seed(11)
    assert exp.seed == 11 and "seed = 11" in exp.resolved_text()


def test_data_and_model_reproducible():
    a, b = (load_experiment(BASE, is_text=True) for _ in range(2))
    (tr_a, va_a), (tr_b, va_b) = build_data(a), build_data(b)
    assert (tr_a.features == tr_b.features).all() and len(va_a) == 50
    net_a, ch_a, _, _ = build_model(a, 2, 1)
    net_b, ch_b, _, _ = build_model(b, 2, 1)
    assert all((x == y).all() for x, y in zip(net_a.weights + ch_a.matrices, net_b.weights + ch_b.matrices))


def test_run_writes_outputs(tmp_path):
    exp = load_experiment(BASE, is_text=True)
    _, summary = run_experiment(exp, tmp_path)
    lines = [json.loads(l) for l in (tmp_path / "metrics.jsonl").read_text().splitlines()]
    assert lines[0]["type"] == "header" and lines[0]["n_val"] == 50
    assert [l["epoch"] for l in lines[1:]] == [1, 2]
    assert summary["status"] == "ok" and summary["epochs_completed"] == 2
    assert json.loads((tmp_path / "summary.json").read_text())["updates"] == 20
    assert load_experiment(tmp_path / "config.resolved.ini").values == exp.values


def test_same_seed_same_metrics(tmp_path):
    exp = load_experiment(BASE, is_text=True)
    run_experiment(exp, tmp_path / "a")
    run_experiment(exp, tmp_path / "b")
    strip = lambda p: [{k: v for k, v in json.loads(l).items()} for l in p.read_text().splitlines()]
    assert strip(tmp_path / "a" / "metrics.jsonl") == strip(tmp_path / "b" / "metrics.jsonl")


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_summary(tmp_path):
    text = edited(BASE, data={"source": "linear", "gain": "1e200"},
                  network={"output_transfer": "identity", "hidden_transfer": "identity"},
                  channel={"algorithm": "bp"}, train={"lr": "10"})
    with pytest.raises(DivergenceError):
        run_experiment(load_experiment(text, is_text=True), tmp_path)
    assert json.loads((tmp_path / "summary.json").read_text())["status"] == "diverged"


def test_delimited_source(tmp_path):
    csv = tmp_path / "d.csv"
    csv.write_text("".join(f"{i % 2},{i / 10},{(i % 2) - 0.5}\n" for i in range(40)))
    text = edited(BASE, data={"source": "delimited", "path": str(csv), "n_train": "30", "n_val": "10"})
    tr, va = build_data(load_experiment(text, is_text=True))
    assert (len(tr), len(va), tr.n_features) == (30, 10, 2)


def test_bundled_mnist_srbp_smoke(tmp_path):
    pytest.importorskip("mlxtend")
    text = edited(bundled_config("mnist-conjoined-srbp").read_text(), data={"n_train": "300"},
                  train={"epochs": "1"})
    _, summary = run_experiment(load_experiment(text, is_text=True), tmp_path)
    assert summary["status"] == "ok" and summary["epochs_completed"] == 1
    assert summary["sizes"] == [784, 100, 100, 10]


@pytest.mark.parametrize("name", ["mnist-conjoined-bp", "mnist-conjoined-rbp", "mnist-conjoined-srbp",
                                  "mnist-distinct-srbp", "mnist-hebbian-arbp", "mnist-hebbian-asrbp",
                                  "bianchini-k0-bp", "bianchini-k0-rbp", "bianchini-k0-srbp",
                                  "bianchini-k1-bp", "bianchini-k1-rbp", "bianchini-k1-srbp"])
def test_bundled_configs_validate(name):
    load_experiment(bundled_config(name))
