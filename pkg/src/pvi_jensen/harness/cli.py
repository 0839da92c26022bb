"""Command line entry point: ``pvi-jensen <subcommand> [flags]``.

Exit codes: 0 on success, 2 when a verification suite reports violations,
1 on any error. Every output file is a pure function of the config and seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .. import jensen
from ..ensemble import ParticleEnsemble, loglik_matrix, metrics
from ..numerics import make_rng, spawn
from ..updates import trajectory_csv
from . import bandit, experiments, verify
from . import config as cfgmod

log = logging.getLogger("pvi_jensen")

PRESETS = {"toy": cfgmod.TOY, "boston": cfgmod.BOSTON}


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _config(args, preset=None):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "rule", None):
        overrides.setdefault("rule", {})["tag"] = args.rule
    if getattr(args, "particles", None):
        overrides.setdefault("training", {})["particles"] = args.particles
    if getattr(args, "preset", None):
        preset = PRESETS[args.preset]
    return cfgmod.load_config(args.config, overrides, preset)


def _out(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def cmd_train(args):
    cfg = _config(args)
    out = _out(args)
    res = experiments.run_regression_experiment(cfg)
    first = res.splits[0]
    _write_json(os.path.join(out, "metrics.json"), res.summary)
    trajectory_csv(first.trajectory, os.path.join(out, "trajectory.csv"))
    first.ensemble.save(os.path.join(out, "ensemble.json"))
    with open(os.path.join(out, "bound.json"), "w") as fh:
        fh.write(res.bound.to_json() + "\n")
    if res.grid is not None:
        experiments.table_csv(res.grid, experiments.GRID_COLUMNS,
                              os.path.join(out, "intervals.csv"))
    log.info("metrics: %s", json.dumps({k: v["mean"] for k, v in res.summary.items()
                                         if isinstance(v, dict)}))
    return 0


def _first_split(cfg):
    root = make_rng(cfg["seed"])
    rng = spawn(root, cfg["data"]["splits"] + 1)[0]
    data_rng, _ = spawn(rng, 2)
    return experiments.load_data(cfg, data_rng)


def cmd_eval(args):
    cfg = _config(args)
    out = _out(args)
    ens = ParticleEnsemble.load(args.checkpoint)
    _, test = _first_split(cfg)
    _write_json(os.path.join(out, "eval.json"), metrics(ens, test))
    return 0


def cmd_diagnose(args):
    cfg = _config(args)
    out = _out(args)
    if args.checkpoint:
        ens = ParticleEnsemble.load(args.checkpoint)
        _, test = _first_split(cfg)
    else:
        res = experiments.run_regression_experiment(cfg)
        ens, test = res.splits[0].ensemble, res.splits[0].test
    report = jensen.repulsion_report(loglik_matrix(ens, test), cfg["jensen"]["gfsf_eps"],
                                     cfg["jensen"]["eps_row"])
    report.to_csv(os.path.join(out, "repulsion_report.csv"))
    _write_json(os.path.join(out, "repulsion_summary.json"), report.summary())
    return 0


def cmd_toy(args):
    cfg = _config(args, cfgmod.TOY)
    out = _out(args)
    res = experiments.run_regression_experiment(cfg)
    experiments.table_csv(res.grid, experiments.GRID_COLUMNS, os.path.join(out, "intervals.csv"))
    trajectory_csv(res.splits[0].trajectory, os.path.join(out, "trajectory.csv"))
    _write_json(os.path.join(out, "metrics.json"), res.summary)
    return 0


def cmd_bandit(args):
    cfg = _config(args)
    out = _out(args)
    traces = bandit.run_bandit_experiment(cfg)
    for s, tr in enumerate(traces):
        tr.to_csv(os.path.join(out, f"regret_seed{s}.csv"))
    rel = [tr.relative_regret for tr in traces]
    _write_json(os.path.join(out, "bandit.json"), {
        "rule": cfg["rule"]["tag"],
        "relative_regret": rel,
        "mean_relative_regret": float(np.mean(rel)),
    })
    return 0


def cmd_verify(args):
    out = _out(args)
    rng = make_rng(0 if args.seed is None else args.seed)
    suites = verify.SUITES if args.suite == "all" else (args.suite,)
    ok = True
    summary = {}
    for name, child in zip(suites, spawn(rng, len(suites))):
        rep = verify.verify(name, child, args.trials)
        with open(os.path.join(out, f"verify_{name}.json"), "w") as fh:
            fh.write(rep.to_json() + "\n")
        summary[name] = {"passed": rep.passed, "checks": rep.checks,
                         "violations": len(rep.violations)}
        print(f"{name}: {'PASS' if rep.passed else 'FAIL'} "
              f"({rep.checks} checks, {len(rep.violations)} violations)")
        ok &= rep.passed
    _write_json(os.path.join(out, "verify.json"), summary)
    return 0 if ok else 2


def build_parser():
    p = argparse.ArgumentParser(prog="pvi-jensen", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, rule=True):
        sp.add_argument("--config", help="TOML config file")
        sp.add_argument("--seed", type=int, help="root seed (unsigned 64-bit)")
        sp.add_argument("--out", default="out", help="output directory")
        if rule:
            sp.add_argument("--rule", help="update rule tag, e.g. var, map, svgd")
            sp.add_argument("--particles", type=int, help="ensemble size N")

    for name, fn, helptext in (
        ("train", cmd_train, "train an ensemble; writes metrics, trajectory, checkpoint, bound"),
        ("eval", cmd_eval, "evaluate a checkpoint on the configured test split"),
        ("diagnose", cmd_diagnose, "write the per-datum repulsion report CSV"),
        ("toy", cmd_toy, "toy regression; writes the interval grid CSV"),
        ("bandit", cmd_bandit, "Thompson-sampling bandit; writes regret CSVs"),
    ):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        sp.set_defaults(func=fn)
        if name in ("train", "diagnose", "eval"):
            sp.add_argument("--preset", choices=sorted(PRESETS))
        if name in ("eval", "diagnose"):
            sp.add_argument("--checkpoint", required=name == "eval")

    sp = sub.add_parser("verify", help="run the property suites")
    common(sp, rule=False)
    sp.add_argument("--suite", default="all", choices=("all",) + verify.SUITES)
    sp.add_argument("--trials", type=int, default=100)
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except Exception as e:  # noqa: BLE001 - any failure maps to exit code 1
        log.debug("failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
