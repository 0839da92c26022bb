"""Regression drivers: train an ensemble, evaluate it and emit plot-ready tables."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .. import jensen, models, pacbayes
from ..ensemble import ParticleEnsemble, loglik_matrix, metrics
from ..numerics import make_rng, spawn
from ..updates import train
from . import config as cfgmod
from .data import Dataset, load_csv_regression, split_standardize, synthetic_regression, toy_regression


@dataclass
class SplitResult:
    metrics: dict
    ensemble: ParticleEnsemble
    train: Dataset
    test: Dataset
    trajectory: list


@dataclass
class ExperimentResult:
    splits: list
    report: jensen.RepulsionReport
    bound: pacbayes.BoundReport
    grid: np.ndarray | None = None
    summary: dict = field(default_factory=dict)


def load_data(cfg, rng):
    """Train/test pair for the configured dataset kind."""
    d = cfg["data"]
    if d["kind"] == "toy":
        train_set = toy_regression(rng, d["n"])
        return train_set, train_set
    if d["kind"] == "csv":
        if not d["path"] or not d["target_column"]:
            raise cfgmod.ConfigError("csv data needs path and target_column")
        full = load_csv_regression(d["path"], d["target_column"])
    elif d["kind"] == "synthetic":
        full = synthetic_regression(make_rng(cfg["seed"]))
    else:
        raise cfgmod.ConfigError(f"unknown data kind {d['kind']!r}")
    return split_standardize(full, rng, d["test_fraction"], d["standardize"])


def train_split(cfg, rng, train_set, rule=None, particles=None):
    spec = cfgmod.model_spec(cfg, train_set.X.shape[1])
    prior = cfgmod.prior(cfg)
    rule = rule or cfgmod.update_rule(cfg)
    n = particles or cfg["training"]["particles"]
    init_rng, train_rng = spawn(rng, 2)
    ens = ParticleEnsemble(spec, models.init_params(spec, init_rng, n))
    epochs = cfg["training"]["epochs"]
    if epochs == 0:
        return ens, []
    return train(rule, ens, train_set, prior, epochs, cfg["training"]["batch_size"], train_rng)


def interval_table(ens, data, xs, rng, draws_per_particle=200):
    """Per grid point: x, predictive mean, 95% predictive and mean-estimate intervals.

    ``xs`` are raw 1-d inputs; outputs are in raw target units. The
    predictive interval takes percentiles of the gaussian mixture sampled
    with ``draws_per_particle`` draws per particle; the mean-estimate
    interval takes percentiles of the per-particle means.
    """
    spec = ens.spec
    if spec.input_dim != 1 or spec.likelihood != "gaussian":
        raise ValueError("interval tables need a 1-d gaussian regression model")
    xs = np.asarray(xs, dtype=np.float64)
    xin = (xs[:, None] - data.x_mean) / data.x_scale
    f = models.forward_batch(spec, ens.particles, xin)[..., 0] * data.y_scale + data.y_mean
    sig = np.exp(models.log_sigma(spec, ens.particles)) * data.y_scale
    n, g = f.shape
    noise = rng.standard_normal((n, draws_per_particle, g))
    samples = (f[:, None, :] + sig[:, None, None] * noise).reshape(-1, g)
    pred_lo, pred_hi = np.percentile(samples, [2.5, 97.5], axis=0)
    mean_lo, mean_hi = np.percentile(f, [2.5, 97.5], axis=0)
    return np.column_stack([xs, f.mean(axis=0), pred_lo, pred_hi, mean_lo, mean_hi])


GRID_COLUMNS = ("x", "mean", "pred_lo", "pred_hi", "mean_lo", "mean_hi")


def table_csv(table, columns, path=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in table:
        w.writerow([repr(float(v)) for v in row])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def interval_width(table, x, which="mean"):
    """Width of the named interval at the grid point nearest ``x``."""
    k = int(np.argmin(np.abs(table[:, 0] - x)))
    lo, hi = (4, 5) if which == "mean" else (2, 3)
    return float(table[k, hi] - table[k, lo])


def grid_points(cfg):
    g = cfg["grid"]
    return np.round(np.linspace(g["low"], g["high"], g["points"]), 10)


def run_regression_experiment(cfg):
    """Train on every split and collect metrics, diagnostics and bounds.

    The repulsion report and bound use the first split (report on its test
    set, bound on its training set). A 1-d dataset also gets an interval
    grid from the first split's ensemble.
    """
    root = make_rng(cfg["seed"])
    split_rngs = spawn(root, cfg["data"]["splits"] + 1)
    results = []
    for rng in split_rngs[:-1]:
        data_rng, fit_rng = spawn(rng, 2)
        train_set, test_set = load_data(cfg, data_rng)
        ens, traj = train_split(cfg, fit_rng, train_set)
        results.append(SplitResult(metrics(ens, test_set), ens, train_set, test_set, traj))
    first = results[0]
    jc = cfg["jensen"]
    report = jensen.repulsion_report(loglik_matrix(first.ensemble, first.test),
                                     jc["gfsf_eps"], jc["eps_row"])
    bound = pacbayes.bound_loss_repulsion(first.ensemble, first.train, cfgmod.prior(cfg),
                                    cfgmod.bound_config(cfg))
    grid = None
    if first.train.X.shape[1] == 1 and first.ensemble.spec.likelihood == "gaussian":
        grid = interval_table(first.ensemble, first.train, grid_points(cfg), split_rngs[-1],
                              cfg["grid"]["draws_per_particle"])
    summary = {}
    for key in first.metrics:
        vals = np.array([r.metrics[key] for r in results])
        summary[key] = {"mean": float(vals.mean()), "std": float(vals.std()),
                        "values": vals.tolist()}
    summary["num_splits"] = len(results)
    summary["chain_ok_fraction"] = float(np.mean(report.chain_ok))
    return ExperimentResult(results, report, bound, grid, summary)
