"""Particle variational inference through loss-based second-order Jensen bounds."""

from . import ensemble, jensen, models, numerics, pacbayes, updates
from .ensemble import ParticleEnsemble
from .models import ModelSpec, Prior
from .updates import UpdateRule, train

__all__ = [
    "ensemble", "jensen", "models", "numerics", "pacbayes", "updates",
    "ParticleEnsemble", "ModelSpec", "Prior", "UpdateRule", "train",
]
