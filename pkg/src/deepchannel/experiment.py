"""Config-driven training experiments: strict INI schema, runner and output files.

A config has the sections ``[data]``, ``[network]``, ``[channel]`` and
``[train]``. Every key has an explicit default; the fully resolved config is
written next to the results so a run can be reproduced from it alone.
"""
from __future__ import annotations

import configparser
import io
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import ChannelConfig, init_channel
from .core_math import ConfigError, Initializer, TransferFunction, derive_seed, make_rng
from .datasets import (
    BianchiniSpec,
    Dataset,
    gen_bianchini,
    gen_linear_stats,
    load_delimited,
    mnist_desk_subset,
)
from .forward_net import NetworkParams
from .trainer import DivergenceError, EarlyStop, TrainConfig, TrainResult, train

log = logging.getLogger(__name__)


def _int_list(text: str) -> tuple[int, ...]:
    text = text.strip()
    return tuple(int(v) for v in text.split(",")) if text else ()


def _opt_float(text: str):
    text = text.strip()
    return None if text in ("", "none") else float(text)


def _opt_str(text: str):
    text = text.strip()
    return None if text in ("", "none") else text


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section -> key -> (parser, default text)
SCHEMA: dict[str, dict[str, tuple]] = {
    "data": {
        "source": (str, "mnist"),
        "n_train": (int, "5000"),
        "n_val": (int, "0"),
        "k": (int, "0"),
        "idx_dir": (_opt_str, "none"),
        "path": (_opt_str, "none"),
        "feature_columns": (_int_list, ""),
        "target_column": (int, "0"),
        "header": (_bool, "false"),
        "delimiter": (str, ","),
        "gain": (float, "1.0"),
        "noise": (float, "0.0"),
    },
    "network": {
        "hidden": (_int_list, "100,100"),
        "hidden_transfer": (str, "tanh"),
        "output_transfer": (str, "softmax"),
        "init": (str, "scaled-normal"),
        "init_rule": (str, "2/(fanin+fanout)"),
        "init_variance": (float, "1.0"),
        "bias": (_bool, "true"),
    },
    "channel": {
        "algorithm": (str, "bp"),
        "architecture": (str, "conjoined"),
        "channel_sizes": (_int_list, ""),
        "channel_transfer": (str, "linear"),
        "adaptivity": (str, "fixed"),
        "p_lc": (float, "0.0"),
        "init": (str, "scaled-normal"),
        "init_rule": (str, "2/(fanin+fanout)"),
        "init_variance": (float, "1.0"),
        "lateral_init": (str, "scaled-normal"),
        "lateral_rule": (str, "2/(fanin+fanout)"),
        "lateral_variance": (float, "1.0"),
        "lr": (_opt_float, "none"),
        "stdp_presynaptic": (str, "output"),
    },
    "train": {
        "epochs": (int, "30"),
        "batch_size": (int, "100"),
        "lr": (float, "0.1"),
        "momentum": (float, "0.0"),
        "lr_decay": (float, "0.0"),
        "dropout": (float, "0.0"),
        "early_stop_threshold": (_opt_float, "none"),
        "early_stop_window": (int, "5000"),
        "seed": (int, "0"),
    },
}

DATA_SOURCES = ("mnist", "bianchini", "delimited", "linear")


def parse_ini(text: str, schema: dict[str, dict[str, tuple]]) -> tuple[dict, configparser.ConfigParser]:
    """Parse ``text`` against ``schema``; unknown sections or keys are errors."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    for section in cp.sections():
        if section not in schema:
            raise ConfigError(f"unknown section [{section}]")
        for key in cp[section]:
            if key not in schema[section]:
                raise ConfigError(f"unknown key '{key}' in [{section}]")
    values: dict = {}
    resolved = configparser.ConfigParser(interpolation=None)
    for section, keys in schema.items():
        values[section] = {}
        resolved[section] = {}
        for key, (parse, default) in keys.items():
            raw = cp.get(section, key, fallback=default) if cp.has_section(section) else default
            try:
                values[section][key] = parse(raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from None
            resolved[section][key] = raw
    return values, resolved


def render_ini(cp: configparser.ConfigParser) -> str:
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


@dataclass
class Experiment:
    values: dict
    resolved: configparser.ConfigParser

    @property
    def seed(self) -> int:
        return self.values["train"]["seed"]

    def with_seed(self, seed: int) -> "Experiment":
        vals = {s: dict(v) for s, v in self.values.items()}
        vals["train"]["seed"] = seed
        res = configparser.ConfigParser(interpolation=None)
        res.read_string(render_ini(self.resolved))
        res["train"]["seed"] = str(seed)
        return Experiment(vals, res)

    def resolved_text(self) -> str:
        return render_ini(self.resolved)


def load_experiment(path_or_text, is_text: bool = False) -> Experiment:
    text = path_or_text if is_text else Path(path_or_text).read_text()
    values, resolved = parse_ini(text, SCHEMA)
    exp = Experiment(values, resolved)
    build_configs(exp)  # validate every domain setting up front
    return exp


def _wrap(section: str, fn):
    try:
        return fn()
    except ConfigError as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def _initializer(kind, rule, variance) -> Initializer:
    return Initializer(kind, rule, variance)


def build_configs(exp: Experiment):
    """Domain objects for the network, channel and training settings."""
    v = exp.values
    d = v["data"]
    if d["source"] not in DATA_SOURCES:
        raise ConfigError(f"[data] source: unknown data source {d['source']!r}")
    if d["n_train"] < 1 or d["n_val"] < 0:
        raise ConfigError("[data] n_train must be >= 1 and n_val >= 0")
    n = v["network"]
    net_init = _wrap("network", lambda: _initializer(n["init"], n["init_rule"], n["init_variance"]))
    hidden = _wrap("network", lambda: TransferFunction.parse(n["hidden_transfer"]))
    output = _wrap("network", lambda: TransferFunction.parse(n["output_transfer"]))
    if not n["hidden"]:
        raise ConfigError("[network] hidden: at least one hidden layer is required")
    c = v["channel"]
    ccfg = _wrap("channel", lambda: ChannelConfig(
        algorithm=c["algorithm"].lower(),
        architecture=c["architecture"].lower(),
        channel_sizes=c["channel_sizes"],
        channel_transfer=c["channel_transfer"].lower(),
        adaptivity=c["adaptivity"].lower(),
        p_lc=c["p_lc"],
        init=_initializer(c["init"], c["init_rule"], c["init_variance"]),
        lateral_init=_initializer(c["lateral_init"], c["lateral_rule"], c["lateral_variance"]),
        lr=c["lr"],
        stdp_presynaptic=c["stdp_presynaptic"],
    ))
    t = v["train"]
    es = None
    if t["early_stop_threshold"] is not None:
        es = _wrap("train", lambda: EarlyStop(t["early_stop_threshold"], t["early_stop_window"]))
    tcfg = _wrap("train", lambda: TrainConfig(
        epochs=t["epochs"], batch_size=t["batch_size"], lr=t["lr"], momentum=t["momentum"],
        lr_decay=t["lr_decay"], dropout=t["dropout"], early_stop=es, seed=t["seed"],
    ))
    if es is not None and d["n_val"] == 0:
        raise ConfigError("[train] early stopping needs [data] n_val > 0")
    return net_init, hidden, output, ccfg, tcfg


def build_data(exp: Experiment) -> tuple[Dataset, Dataset | None]:
    d = exp.values["data"]
    seed = exp.seed
    n_tr, n_val = d["n_train"], d["n_val"]
    src = d["source"]
    if src == "mnist":
        full = mnist_desk_subset(n_tr + n_val, d["idx_dir"], seed=seed)
        if len(full) < n_tr + n_val:
            raise ConfigError(f"[data] only {len(full)} MNIST examples available")
        tr, va = full.split(n_tr) if n_val else (full, None)
    elif src == "bianchini":
        tr = gen_bianchini(BianchiniSpec(d["k"], n_tr, derive_seed(seed, 1)))
        va = gen_bianchini(BianchiniSpec(d["k"], n_val, derive_seed(seed, 2))) if n_val else None
    elif src == "delimited":
        if d["path"] is None:
            raise ConfigError("[data] path is required for delimited data")
        full = load_delimited(d["path"], d["feature_columns"] or None, d["target_column"],
                              d["header"], d["delimiter"], limit=n_tr + n_val)
        tr, va = full.split(n_tr) if len(full) > n_tr else (full, None)
    else:
        tr, _ = gen_linear_stats(n_tr, "normal", d["gain"], d["noise"], derive_seed(seed, 1))
        va = gen_linear_stats(n_val, "normal", d["gain"], d["noise"], derive_seed(seed, 2))[0] if n_val else None
    return tr, va


def build_model(exp: Experiment, n_in: int, n_out: int):
    net_init, hidden, output, ccfg, tcfg = build_configs(exp)
    rng = make_rng(derive_seed(exp.seed, 0))
    sizes = [n_in, *exp.values["network"]["hidden"], n_out]
    net = NetworkParams.create(sizes, hidden, output, net_init, rng, exp.values["network"]["bias"])
    channel = init_channel(ccfg, net, rng)
    return net, channel, ccfg, tcfg


def _finite(v):
    if isinstance(v, float) and not np.isfinite(v):
        return None
    if isinstance(v, list):
        return [_finite(x) for x in v]
    return v


def run_experiment(exp: Experiment, out_dir=None, echo=None) -> tuple[TrainResult | None, dict]:
    """Train per the config; write metrics.jsonl, summary.json and config.resolved.ini.

    Returns the result and the summary. On divergence the partial metrics are
    kept, the summary records the failure and :class:`DivergenceError` is re-raised.
    """
    train_data, val_data = build_data(exp)
    net, channel, ccfg, tcfg = build_model(exp, train_data.n_features, train_data.n_targets)
    out = Path(out_dir) if out_dir is not None else None
    header = {"type": "header", "seed": exp.seed, "config": exp.resolved_text(),
              "sizes": net.sizes, "n_train": len(train_data),
              "n_val": 0 if val_data is None else len(val_data)}
    fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.resolved.ini").write_text(exp.resolved_text())
        fh = open(out / "metrics.jsonl", "w")
        fh.write(json.dumps(header) + "\n")

    def on_epoch(rec):
        line = {"type": "epoch", **{k: _finite(v) for k, v in rec.to_dict().items()}}
        if fh is not None:
            fh.write(json.dumps(line) + "\n")
            fh.flush()
        if echo is not None:
            echo(rec)

    t0 = time.perf_counter()
    summary = {"seed": exp.seed, "config": exp.resolved_text(), "sizes": net.sizes}
    try:
        result = train(net, channel, ccfg, train_data, tcfg, val_data, on_epoch=on_epoch)
    except DivergenceError as exc:
        summary.update(status="diverged", error=str(exc), failure=exc.record,
                       epochs_completed=len(exc.metrics))
        if out is not None:
            (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        raise
    finally:
        if fh is not None:
            fh.close()
    last = result.metrics[-1] if result.metrics else None
    summary.update(
        status="ok",
        epochs_completed=len(result.metrics),
        updates=result.updates,
        stopped_early=result.stopped_early,
        final=None if last is None else {k: _finite(v) for k, v in last.to_dict().items()},
        best_train_accuracy=_finite(max((m.train_accuracy for m in result.metrics), default=float("nan"))),
        wall_seconds=time.perf_counter() - t0,
    )
    if out is not None:
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return result, summary
