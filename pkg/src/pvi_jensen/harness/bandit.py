"""Contextual bandits with Thompson sampling over particle ensembles."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .. import models
from ..ensemble import ParticleEnsemble
from ..numerics import make_rng, spawn
from ..updates import train
from . import config as cfgmod
from .data import Dataset, MissingColumn, read_numeric_csv


@dataclass
class BanditEnv:
    """Pre-drawn contexts with a reward for every (step, action) pair.

    ``expected[t, a]`` is the mean reward and ``rewards[t, a]`` the noisy
    realization, so every policy sees the identical reward stream.
    """

    contexts: np.ndarray  # (T, context_dim)
    expected: np.ndarray  # (T, num_actions)
    rewards: np.ndarray  # (T, num_actions)

    def __post_init__(self):
        if not (np.all(np.isfinite(self.rewards)) and np.all(np.isfinite(self.expected))):
            raise ValueError("rewards must be finite")

    @property
    def num_actions(self):
        return self.rewards.shape[1]

    @property
    def steps(self):
        return self.rewards.shape[0]

    def reward(self, t, action):
        return float(self.rewards[t, action])

    def optimal(self, t):
        return float(self.expected[t].max())


def linear_env(rng, steps, num_actions=4, context_dim=4, noise_std=0.5):
    """Rewards ``context . beta_a + noise`` with random arm weights ``beta_a``."""
    beta = rng.normal(size=(context_dim, num_actions))
    s = rng.normal(size=(steps, context_dim))
    expected = s @ beta
    return BanditEnv(s, expected, expected + noise_std * rng.normal(size=expected.shape))


def csv_env(path, context_columns, reward_columns):
    """Generic schema: context columns plus one observed-reward column per action."""
    header, M = read_numeric_csv(path)
    idx = {h: j for j, h in enumerate(header)}
    missing = [c for c in list(context_columns) + list(reward_columns) if c not in idx]
    if missing:
        raise MissingColumn(", ".join(missing))
    s = M[:, [idx[c] for c in context_columns]]
    r = M[:, [idx[c] for c in reward_columns]]
    return BanditEnv(s, r, r)


def thompson_step(ens, context, rng):
    """Sample one particle uniformly and act greedily on its reward model."""
    i = int(rng.integers(ens.n))
    f = models.forward_batch(ens.spec, ens.particles[i : i + 1], np.atleast_2d(context))
    return int(np.argmax(f[0, 0]))


@dataclass
class RegretTrace:
    actions: np.ndarray
    rewards: np.ndarray
    optimal: np.ndarray
    cumulative_regret: np.ndarray
    uniform_cumulative_regret: np.ndarray

    @property
    def relative_regret(self):
        base = self.uniform_cumulative_regret[-1]
        return float(self.cumulative_regret[-1] / base) if base > 0 else float("nan")

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "action", "reward", "optimal", "cumulative_regret",
                    "uniform_cumulative_regret"])
        for t in range(self.actions.size):
            w.writerow([t, int(self.actions[t]), repr(float(self.rewards[t])),
                        repr(float(self.optimal[t])), repr(float(self.cumulative_regret[t])),
                        repr(float(self.uniform_cumulative_regret[t]))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _pseudo_regret(env, actions):
    t = np.arange(actions.size)
    return np.cumsum(env.expected[t].max(axis=1) - env.expected[t, actions])


def uniform_actions(env, rng):
    return rng.integers(env.num_actions, size=env.steps)


def bandit_loop(rule, env, spec, prior, rng, particles=20, retrain_every=50,
                retrain_steps=100, steps=None):
    """Thompson sampling with periodic retraining on the replay buffer.

    Every ``retrain_every`` steps the ensemble is trained for
    ``retrain_steps`` full-batch updates on all observations so far
    (warm-started, fresh optimizer state). The uniform baseline acts on
    the same reward stream.
    """
    T = env.steps if steps is None else min(steps, env.steps)
    init_rng, act_rng, train_rng, uni_rng = spawn(rng, 4)
    ens = ParticleEnsemble(spec, models.init_params(spec, init_rng, particles))
    actions = np.zeros(T, dtype=int)
    for t in range(T):
        if t > 0 and t % retrain_every == 0:
            buf = Dataset(env.contexts[:t], env.rewards[np.arange(t), actions[:t]],
                          actions=actions[:t])
            ens, _ = train(rule, ens, buf, prior, rng=train_rng, steps=retrain_steps)
        actions[t] = thompson_step(ens, env.contexts[t], act_rng)
    uni = uniform_actions(env, uni_rng)[:T]
    idx = np.arange(T)
    return RegretTrace(
        actions=actions,
        rewards=env.rewards[idx, actions],
        optimal=env.expected[idx].max(axis=1),
        cumulative_regret=_pseudo_regret(env, actions),
        uniform_cumulative_regret=_pseudo_regret(env, uni),
    )


def uniform_trace(env, rng):
    """The uniform policy measured against itself (relative regret 1)."""
    uni = uniform_actions(env, rng)
    idx = np.arange(env.steps)
    reg = _pseudo_regret(env, uni)
    return RegretTrace(uni, env.rewards[idx, uni], env.expected[idx].max(axis=1), reg, reg)


def run_bandit_experiment(cfg, seeds=None):
    """One regret trace per seed for the configured rule on the linear env.

    Seed ``s`` draws its environment from ``cfg['seed'] + s``, so different
    rules run with the same seeds face identical environments.
    """
    b = cfg["bandit"]
    rule = cfgmod.update_rule(cfg)
    spec = models.ModelSpec(input_dim=b["context_dim"], output_dim=b["num_actions"],
                            hidden=tuple(b["hidden"]), activation=cfg["model"]["activation"],
                            sigma=b["noise_std"])
    prior = cfgmod.prior(cfg)
    traces = []
    for s in range(b["seeds"] if seeds is None else seeds):
        env_rng, run_rng = spawn(make_rng(cfg["seed"] + s), 2)
        env = linear_env(env_rng, b["steps"], b["num_actions"], b["context_dim"],
                         b["noise_std"])
        traces.append(bandit_loop(rule, env, spec, prior, run_rng,
                                  cfg["training"]["particles"], b["retrain_every"],
                                  b["retrain_steps"]))
    return traces
