"""Command-line front end: ``softcut {cluster,simulate,eval,select-k}``.

Settings come from three layers, later ones winning: built-in defaults, an
INI file given with ``--config``, then command-line flags. Every run writes
its resolved settings to ``config.ini`` in the output directory, and that
file alone reproduces the run.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import diffcore, metrics
from ._backend import BACKEND
from .ingest import PreprocessConfig, load_labels, load_matrix, preprocess, write_dense_csv
from .simdata import SimConfig, generate, sparsity
from .softgraph import build_graphs
from .trainer import TrainConfig, init_model, pretrain, select_k, train_joint
from .zinb import save_params

log = logging.getLogger("softcut")

LOG_HEADER = "epoch,l_ncut,l_zinb,l_kl,total"

_RUN_DEFAULTS = {
    "input": "",
    "labels": "",
    "format": "dense-csv",
    "out": "softcut_out",
    "deterministic": False,
    # "preprocessed" fits ZINB to the log-normalized matrix, "raw" to kept-gene counts
    "zinb_target": "preprocessed",
    "max_cells": 12000,
    "k_min": 2,
    "k_max": 10,
}

# flag dest -> (section, key)
_FLAG_MAP = {
    "input": ("run", "input"),
    "labels": ("run", "labels"),
    "format": ("run", "format"),
    "out": ("run", "out"),
    "alpha": ("train", "alpha"),
    "beta": ("train", "beta"),
    "gamma": ("train", "gamma"),
    "mu": ("train", "mu_weight"),
    "lam": ("train", "lam"),
    "clusters": ("train", "n_clusters"),
    "weight_decay": ("train", "weight_decay"),
    "pretrain_epochs": ("train", "pretrain_epochs"),
    "train_epochs": ("train", "train_epochs"),
    "top_genes": ("preprocess", "top_genes"),
    "cells": ("sim", "n_cells"),
    "genes": ("sim", "n_genes"),
    "dropout": ("sim", "dropout_rate"),
    "k_min": ("run", "k_min"),
    "k_max": ("run", "k_max"),
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config

def _parse_value(raw: str, default, key: str):
    s = raw.strip()
    if isinstance(default, bool):
        low = s.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, tuple):
        try:
            return tuple(int(t) for t in s.split(",") if t.strip())
        except ValueError:
            raise ConfigError(f"{key}: expected comma-separated integers, got {raw!r}") from None
    if default is None or isinstance(default, int) and not isinstance(default, bool):
        if default is None and s.lower() in ("", "none"):
            return None
        try:
            return int(s)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if isinstance(default, float):
        try:
            return float(s)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    return s


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _defaults() -> dict:
    return {
        "run": dict(_RUN_DEFAULTS),
        "preprocess": {f.name: f.default for f in dataclasses.fields(PreprocessConfig)},
        "train": {f.name: f.default for f in dataclasses.fields(TrainConfig)},
        "sim": {f.name: f.default for f in dataclasses.fields(SimConfig)},
    }


def resolve_config(config_path=None, overrides: dict | None = None) -> dict:
    """Merge defaults, the INI file and flag overrides into typed sections."""
    settings = _defaults()
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        parser.read(path)
        for section in parser.sections():
            if section not in settings:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in settings[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                settings[section][key] = _parse_value(raw, settings[section][key], f"{section}.{key}")
    for (section, key), value in (overrides or {}).items():
        settings[section][key] = value
    return settings


def config_text(settings: dict) -> str:
    parser = configparser.ConfigParser()
    for section, values in settings.items():
        parser[section] = {k: _format_value(v) for k, v in values.items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def _overrides(args) -> dict:
    out = {}
    for dest, target in _FLAG_MAP.items():
        value = getattr(args, dest, None)
        if value is not None:
            out[target] = value
    if getattr(args, "seed", None) is not None:
        out[("train", "seed")] = args.seed
        out[("sim", "seed")] = args.seed
    if getattr(args, "deterministic", False):
        out[("run", "deterministic")] = True
    return out


# ---------------------------------------------------------------- outputs

class StagedOutputs:
    """Collects files in temporaries and renames them into place together."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self._staged = []

    def _temp(self, name):
        self.dir.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{name}.", suffix=".tmp", dir=self.dir)
        os.close(fd)
        self._staged.append((Path(tmp), self.dir / name))
        return Path(tmp)

    def text(self, name, content: str):
        self._temp(name).write_text(content)

    def call(self, name, writer):
        """``writer(path)`` fills the temporary file."""
        writer(self._temp(name))

    def commit(self) -> list[Path]:
        done = []
        for tmp, final in self._staged:
            os.replace(tmp, final)
            done.append(final)
        self._staged = []
        return done

    def discard(self):
        for tmp, _ in self._staged:
            tmp.unlink(missing_ok=True)
        self._staged = []


def _matrix_text(A, fmt="%.17g") -> str:
    buf = io.StringIO()
    np.savetxt(buf, A, fmt=fmt, delimiter=",")
    return buf.getvalue()


def _log_text(records) -> str:
    lines = [LOG_HEADER]
    for r in records:
        lines.append(f"{r.epoch},{r.l_ncut!r},{r.l_zinb!r},{r.l_kl!r},{r.total!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- commands

def _load_input(run):
    if not run["input"]:
        raise ConfigError("no input matrix given (--input or [run] input)")
    path = Path(run["input"])
    if not path.is_file():
        raise FileNotFoundError(f"input matrix not found: {path}")
    labels = run["labels"] or None
    if labels and not Path(labels).is_file():
        raise FileNotFoundError(f"labels file not found: {labels}")
    return load_matrix(path, run["format"], labels)


def _prepare(settings):
    run = settings["run"]
    diffcore.set_deterministic(bool(run["deterministic"]))
    em = _load_input(run)
    pp = preprocess(em, PreprocessConfig(**settings["preprocess"]))
    if run["zinb_target"] == "raw":
        target = em.counts[:, pp.kept_genes]
    elif run["zinb_target"] == "preprocessed":
        target = None
    else:
        raise ConfigError(f"zinb_target must be 'preprocessed' or 'raw', got {run['zinb_target']!r}")
    graphs = build_graphs(pp.X, max_cells=run["max_cells"])
    return em, pp, graphs, target


def _absolutize(settings):
    run = settings["run"]
    for key in ("input", "labels", "out"):
        if run[key]:
            run[key] = str(Path(run[key]).resolve())
    return settings


def cmd_cluster(settings: dict) -> int:
    settings = _absolutize(settings)
    cfg = TrainConfig(**settings["train"])
    em, pp, graphs, target = _prepare(settings)
    log.info("%d cells x %d genes after preprocessing (backend: %s)", *pp.X.shape, BACKEND)
    params = init_model(pp.X, cfg)
    params, _, pre_hist = pretrain(pp.X, graphs, params, cfg, pp.size_factors, target)
    result = train_joint(pp.X, graphs, params, cfg, pp.size_factors, target)
    offset = len(pre_hist)
    joint = [dataclasses.replace(r, epoch=r.epoch + offset) for r in result.history]

    out = StagedOutputs(settings["run"]["out"])
    try:
        out.text("labels.csv", "".join(f"{int(v)}\n" for v in result.labels))
        out.text("embedding.csv", _matrix_text(result.Z))
        out.text("train_log.csv", _log_text(pre_hist + joint))
        out.text("config.ini", config_text(settings))
        out.call("model.npz", lambda p: save_params(p, result.params))
        report = None
        if em.labels is not None:
            report = metrics.evaluate(em.labels, result.labels)
            out.text("metrics.json", json.dumps(report, indent=2) + "\n")
        out.commit()
    except BaseException:
        out.discard()
        raise
    if report is not None:
        print(" ".join(f"{k}={report[k]:.4f}" for k in ("acc", "nmi", "ari")))
    return 0


def cmd_simulate(settings: dict) -> int:
    settings = _absolutize(settings)
    sim = SimConfig(**settings["sim"])
    em = generate(sim)
    out = StagedOutputs(settings["run"]["out"])
    try:
        out.call("counts.csv", lambda p: write_dense_csv(p, em))
        out.text("labels.csv", "".join(f"{int(v)}\n" for v in em.labels))
        out.text("config.ini", config_text(settings))
        out.commit()
    except BaseException:
        out.discard()
        raise
    print(f"sparsity={sparsity(em):.6f}")
    return 0


def cmd_eval(pred_path, truth_path, out_path=None) -> int:
    pred = load_labels(pred_path)
    truth = load_labels(truth_path)
    if pred.shape != truth.shape:
        raise ValueError(f"{pred.shape[0]} predicted labels vs {truth.shape[0]} truth labels")
    report = metrics.evaluate(truth, pred)
    print(" ".join(f"{k}={report[k]:.4f}" for k in ("acc", "nmi", "ari")))
    if out_path:
        out = StagedOutputs(Path(out_path).resolve().parent)
        try:
            out.text(Path(out_path).name, json.dumps(report, indent=2) + "\n")
            out.commit()
        except BaseException:
            out.discard()
            raise
    return 0


def cmd_select_k(settings: dict) -> int:
    settings = _absolutize(settings)
    run = settings["run"]
    cfg = TrainConfig(**settings["train"])
    _, pp, graphs, target = _prepare(settings)
    params = init_model(pp.X, cfg)
    _, Z, _ = pretrain(pp.X, graphs, params, cfg, pp.size_factors, target)
    best, scores = select_k(Z, range(run["k_min"], run["k_max"] + 1), seed=cfg.seed, n_init=cfg.kmeans_init)
    for k, s in scores.items():
        print(f"k={k} silhouette={s:.4f}")
    print(f"best={best}")
    out = StagedOutputs(run["out"])
    try:
        out.text("select_k.json", json.dumps({"best": best, "silhouette": {str(k): v for k, v in scores.items()}},
                                             indent=2) + "\n")
        out.commit()
    except BaseException:
        out.discard()
        raise
    return 0


# ---------------------------------------------------------------- parser

def _common(p: argparse.ArgumentParser, training=True):
    p.add_argument("--config", help="INI file; flags override its values")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    if training:
        p.add_argument("--input", help="cells x genes count matrix")
        p.add_argument("--labels", help="optional truth labels, one integer per line")
        p.add_argument("--format", choices=("dense-csv", "sparse-triplet"))
        p.add_argument("--deterministic", action="store_true", help="sequential reductions")
        p.add_argument("--alpha", type=float)
        p.add_argument("--beta", type=float)
        p.add_argument("--gamma", type=float)
        p.add_argument("--mu", type=float, help="KL weight")
        p.add_argument("--lambda", dest="lam", type=float, help="Sinkhorn sharpness")
        p.add_argument("--clusters", type=int)
        p.add_argument("--top-genes", type=int)
        p.add_argument("--weight-decay", type=float)
        p.add_argument("--pretrain-epochs", type=int)
        p.add_argument("--train-epochs", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="softcut", description="Soft-graph clustering of count matrices.")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("cluster", help="preprocess, train and write labels"))
    sim = sub.add_parser("simulate", help="write a synthetic count matrix with labels")
    _common(sim, training=False)
    sim.add_argument("--cells", type=int)
    sim.add_argument("--genes", type=int)
    sim.add_argument("--clusters", type=int)
    sim.add_argument("--dropout", type=float)
    ev = sub.add_parser("eval", help="compare predicted labels with truth")
    ev.add_argument("pred")
    ev.add_argument("truth")
    ev.add_argument("--out", help="write metrics JSON here")
    ev.add_argument("-v", "--verbose", action="store_true")
    sk = sub.add_parser("select-k", help="silhouette scan over cluster counts")
    _common(sk)
    sk.add_argument("--k-min", type=int)
    sk.add_argument("--k-max", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "eval":
            return cmd_eval(args.pred, args.truth, args.out)
        overrides = _overrides(args)
        if args.command == "simulate" and args.clusters is not None:
            overrides.pop(("train", "n_clusters"), None)
            overrides[("sim", "n_clusters")] = args.clusters
        settings = resolve_config(args.config, overrides)
        if args.command == "cluster":
            return cmd_cluster(settings)
        if args.command == "simulate":
            return cmd_simulate(settings)
        return cmd_select_k(settings)
    except (ValueError, OSError, FloatingPointError, configparser.Error) as exc:
        print(f"softcut: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
