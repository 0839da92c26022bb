"""Particle ensembles, the BMA predictive and evaluation metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from . import models
from .numerics import logsumexp

CHECKPOINT_FORMAT = "pvi-jensen-ensemble"
CHECKPOINT_VERSION = 1


class WrongLikelihoodFamily(ValueError):
    pass


@dataclass(frozen=True)
class ParticleEnsemble:
    spec: models.ModelSpec
    particles: np.ndarray  # (N, P)

    def __post_init__(self):
        p = np.array(self.particles, dtype=np.float64, ndmin=2)
        if p.shape[0] < 1 or p.shape[1] != self.spec.num_params:
            raise models.DimensionMismatch(
                f"particles must be (N>=1, {self.spec.num_params}), got {p.shape}"
            )
        p.setflags(write=False)
        object.__setattr__(self, "particles", p)

    @property
    def n(self):
        return self.particles.shape[0]

    def replace(self, particles):
        return ParticleEnsemble(self.spec, particles)

    def to_json(self):
        return json.dumps(
            {
                "format": CHECKPOINT_FORMAT,
                "version": CHECKPOINT_VERSION,
                "spec": self.spec.to_dict(),
                "particles": self.particles.tolist(),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        if d.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not an ensemble checkpoint")
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')}")
        return cls(models.ModelSpec.from_dict(d["spec"]), np.array(d["particles"]))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())


def loglik_matrix(ens, data):
    """N x D matrix with entry ``[i, d] = ln p(x_d | theta_i)``."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    return models.loglik_batch(ens.spec, ens.particles, data.X, data.y, data.actions)


def bma_log_predictive(column, axis=0):
    """ln of the ensemble-averaged likelihood: logsumexp - ln N."""
    column = np.asarray(column, dtype=np.float64)
    n = column.shape[axis]
    return logsumexp(column, axis=axis) - np.log(n)


def predictive_means(ens, X):
    """Per-particle predictive means ``(N, D, out)``.

    For categorical models these are class probabilities.
    """
    f = models.forward_batch(ens.spec, ens.particles, X)
    if ens.spec.likelihood == "categorical":
        f = softmax(f, axis=2)
    return f


def metrics(ens, data):
    """Test NLL of the BMA predictive plus RMSE or accuracy.

    Values are in the units of ``data`` after undoing target
    standardization when the dataset carries it.
    """
    L = loglik_matrix(ens, data)
    y_scale = getattr(data, "y_scale", 1.0)
    nll = -float(np.mean(bma_log_predictive(L, axis=0)))
    out = {}
    if ens.spec.likelihood == "gaussian":
        out["test_nll"] = nll + float(np.log(y_scale))
        if data.actions is not None:
            raise WrongLikelihoodFamily("rmse undefined for masked bandit targets")
        mean = predictive_means(ens, data.X).mean(axis=0)
        resid = (mean - np.asarray(data.y).reshape(mean.shape)) * y_scale
        out["rmse"] = float(np.sqrt(np.mean(resid**2)))
    else:
        out["test_nll"] = nll
        probs = predictive_means(ens, data.X).mean(axis=0)
        out["accuracy"] = float(np.mean(np.argmax(probs, axis=1) == np.asarray(data.y)))
    return out
