"""Particle update rules, the diversity-regularized objectives and training.

Every direction is an ascent direction: particles move as
``theta <- theta + step * v``. Objectives are minimized, so their
directions are negative gradients.

Parameter-space kernels are gaussian, ``K_ij = exp(-|theta_i - theta_j|^2 / (2 s))``
with squared bandwidth ``s``. Its derivative in the second argument,
``d K_ij / d theta_j = K_ij (theta_i - theta_j) / s``, points away from
``theta_j`` and is the repulsion used below.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import jensen, models
from .numerics import logdet_psd, median_weights
from .pacbayes import kl_ensemble_prior

RULES = ("map", "svgd", "wsgld", "gfsd", "gfsf", "f_svgd", "f_wsgld", "f_gfsd",
         "f_gfsf", "dpp", "pac2e", "var", "var_svgd")
FUNCTION_RULES = ("f_svgd", "f_wsgld", "f_gfsd", "f_gfsf")
BANDWIDTH_FLOOR = 1e-12


class Diverged(RuntimeError):
    pass


@dataclass(frozen=True)
class Kernel:
    """Bandwidth policy: ``median_trick`` or ``fixed`` with ``value`` = h."""

    policy: str = "median_trick"
    value: float | None = None

    def __post_init__(self):
        if self.policy not in ("median_trick", "fixed"):
            raise ValueError(f"unknown kernel policy {self.policy!r}")
        if self.policy == "fixed" and not (self.value and self.value > 0):
            raise ValueError("fixed bandwidth needs a positive value")

    def sq_bandwidth(self, sqd):
        if self.policy == "fixed":
            return float(self.value) ** 2
        if sqd.shape[0] < 2:
            return 1.0
        return median_trick_bandwidth(sqd)


def pairwise_sq_dists(x):
    x = np.asarray(x, dtype=np.float64)
    x = x.reshape(x.shape[0], -1)
    g = x @ x.T
    sq = np.diag(g)
    d = sq[:, None] + sq[None, :] - 2.0 * g
    # exact zeros for coincident rows, no negative round-off
    d = np.maximum(d, 0.0)
    np.fill_diagonal(d, 0.0)
    return d


def median_trick_bandwidth(pairwise_sq_dists):
    """Squared bandwidth ``median(off-diagonal squared distances) / ln N``."""
    d = np.asarray(pairwise_sq_dists, dtype=np.float64)
    n = d.shape[0]
    if n < 2:
        raise ValueError("median trick needs at least two particles")
    iu = np.triu_indices(n, 1)
    return max(float(np.median(d[iu])) / math.log(n), BANDWIDTH_FLOOR)


def gaussian_gram(x, kernel=Kernel(), return_sqd=False):
    """Gram matrix and squared bandwidth (and the squared distances)."""
    x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
    sqd = pairwise_sq_dists(x)
    s = kernel.sq_bandwidth(sqd)
    K = np.exp(-sqd / (2.0 * s))
    return (K, s, sqd) if return_sqd else (K, s)


def _weighted_displacement(W, x, sqd):
    """``sum_j W_ij (x_i - x_j)`` for every ``i``.

    Coincident pairs are dropped so their zero displacement stays exactly
    zero even when divided by a floored bandwidth.
    """
    W = np.where(sqd > 0, W, 0.0)
    return W.sum(axis=1)[:, None] * x - W @ x


# ---------------------------------------------------------------------------
# kernel repulsions shared by parameter- and function-space rules


def _svgd(x, g, kernel):
    K, s, sqd = gaussian_gram(x, kernel, True)
    n = x.shape[0]
    rep = _weighted_displacement(K, x, sqd) / (s * n)
    return K @ g / n, rep


def _wsgld_rep(x, kernel):
    K, s, sqd = gaussian_gram(x, kernel, True)
    S = K.sum(axis=1)
    W = K * (1.0 / S[None, :] + 1.0 / S[:, None])
    return _weighted_displacement(W, x, sqd) / s


def _gfsf_rep(x, kernel, ridge):
    K, s, sqd = gaussian_gram(x, kernel, True)
    n = x.shape[0]
    Ainv = np.linalg.inv(K + ridge * np.eye(n))
    return _weighted_displacement(Ainv * K, x, sqd) / (s * n)


def kernel_direction(tag, x, g, kernel=Kernel(), ridge=1e-2):
    """Combine driving gradients ``g`` with the repulsion of rule ``tag``.

    ``x`` and ``g`` are ``(N, dim)``. Returns ``(direction, repulsion)``.
    """
    if tag == "svgd":
        drive, rep = _svgd(x, g, kernel)
    elif tag == "wsgld":
        drive, rep = g, _wsgld_rep(x, kernel)
    elif tag == "gfsd":
        drive = g
        rep = _svgd(x, g, kernel)[1] + _wsgld_rep(x, kernel)
    elif tag == "gfsf":
        drive, rep = g, _gfsf_rep(x, kernel, ridge)
    else:
        raise ValueError(f"not a kernel rule: {tag!r}")
    return drive + rep, rep


# ---------------------------------------------------------------------------
# log-joint pieces


def _batch(data):
    return data.X, data.y, getattr(data, "actions", None)


def log_joint_grad(ens, data, prior, scale=1.0):
    """``scale * sum_d L_id`` and the per-particle gradient of ``scale * sum_d L + log prior``."""
    X, y, a = _batch(data)
    L, g = models.loglik_vjp(ens.spec, ens.particles, X, y, actions=a)
    return L, scale * g + models.grad_log_prior(prior, ens.particles)


def map_direction(ens, data, prior, scale=1.0):
    return log_joint_grad(ens, data, prior, scale)[1]


def svgd_direction(ens, data, prior, kernel=Kernel(), scale=1.0):
    g = map_direction(ens, data, prior, scale)
    return kernel_direction("svgd", ens.particles, g, kernel)[0]


def wsgld_direction(ens, data, prior, kernel=Kernel(), scale=1.0):
    g = map_direction(ens, data, prior, scale)
    return kernel_direction("wsgld", ens.particles, g, kernel)[0]


def gfsd_direction(ens, data, prior, kernel=Kernel(), scale=1.0):
    g = map_direction(ens, data, prior, scale)
    return kernel_direction("gfsd", ens.particles, g, kernel)[0]


def gfsf_direction(ens, data, prior, kernel=Kernel(), ridge=1e-2, scale=1.0):
    g = map_direction(ens, data, prior, scale)
    return kernel_direction("gfsf", ens.particles, g, kernel, ridge)[0]


def function_space_direction(rule, ens, minibatch, function_prior, kernel=Kernel(),
                             scale=1.0, prior=None, ridge=1e-2, return_repulsion=False):
    """Kernel rule evaluated on minibatch outputs, mapped back through d f / d theta.

    The driving term in output space is ``scale * d(sum_b L)/df`` plus the
    score of the gaussian function prior; ``scale`` is normally D / b. A
    learnable ``log sigma`` gets its plain log-joint gradient (and the
    parameter prior's, when ``prior`` is given).
    """
    tag = rule[2:] if rule.startswith("f_") else rule
    spec = ens.spec
    X, y, a = _batch(minibatch)
    params = ens.particles
    f, cache = models.forward_batch(spec, params, X, keep=True)
    L, dL_df, dL_dls = models._loglik_terms(spec, f, y, models.log_sigma(spec, params), a)
    n, b, c = f.shape
    flat = f.reshape(n, -1)
    drive = scale * dL_df.reshape(n, -1) + function_prior.score(flat)
    v, rep = kernel_direction(tag, flat, drive, kernel, ridge)
    out = models.backward_batch(spec, params, cache, v.reshape(n, b, c))
    rep_theta = models.backward_batch(spec, params, cache, rep.reshape(n, b, c))
    if spec.learn_sigma:
        out[:, -1] = scale * dL_dls.sum(axis=1)
        if prior is not None:
            out[:, -1] += models.grad_log_prior(prior, params)[:, -1]
    return (out, rep_theta) if return_repulsion else out


# ---------------------------------------------------------------------------
# objectives


def _kl_grad(ens, prior):
    return -models.grad_log_prior(prior, ens.particles) / ens.n


def _regularized(ens, data, prior, regularizer, scale):
    """Objective ``-scale * sum_d [mean_i L_id + reg_d] + KL`` and its gradient.

    ``regularizer(L)`` returns per-datum values and their derivatives in L.
    Returns ``(objective, gradient, regularizer part of the gradient)``.
    """
    X, y, a = _batch(data)
    spec, params = ens.spec, ens.particles
    f, cache = models.forward_batch(spec, params, X, keep=True)
    L, dL_df, dL_dls = models._loglik_terms(spec, f, y, models.log_sigma(spec, params), a)
    if not np.all(np.isfinite(L)):
        raise models.NonFiniteOutput("log-likelihood is not finite")
    n = ens.n
    if n > 1:
        reg, dreg = regularizer(L)
    else:
        reg, dreg = np.zeros(L.shape[1]), np.zeros_like(L)
    objective = float(-scale * np.sum(L.mean(axis=0) + reg) + kl_ensemble_prior(ens, prior))

    def contract(W):
        g = models.backward_batch(spec, params, cache, dL_df * W[..., None])
        if spec.learn_sigma:
            g[:, -1] = np.sum(W * dL_dls, axis=1)
        return g

    rep = -contract(scale * dreg)
    grad = -contract(np.full_like(L, scale / n)) + _kl_grad(ens, prior) + rep
    return objective, grad, rep


def var_objective(ens, data, prior, kind="h", scale=1.0):
    """-scale * sum_d [mean_i L_id + R_d] + KL(ensemble, prior)."""
    X, y, a = _batch(data)
    L = models.loglik_batch(ens.spec, ens.particles, X, y, a)
    R = jensen.repulsion_R(kind, L) if ens.n > 1 else np.zeros(L.shape[1])
    return float(-scale * np.sum(L.mean(axis=0) + R) + kl_ensemble_prior(ens, prior))


def var_grad(ens, data, prior, kind="h", scale=1.0, return_parts=False):
    """Exact gradient of :func:`var_objective` (max/min selectors frozen)."""
    _, grad, rep = _regularized(ens, data, prior,
                                lambda L: jensen.repulsion_R_grad(kind, L), scale)
    return (grad, rep) if return_parts else grad


def pac2e_objective(ens, data, prior, scale=1.0):
    """-scale * sum_d [mean_i L_id + V_d] + KL, V the normalized predictive variance."""
    X, y, a = _batch(data)
    L = models.loglik_batch(ens.spec, ens.particles, X, y, a)
    V = jensen.predictive_variance_V_log(L)[0] if ens.n > 1 else 0.0
    return float(-scale * np.sum(L.mean(axis=0) + V) + kl_ensemble_prior(ens, prior))


def pac2e_grad(ens, data, prior, scale=1.0, return_parts=False):
    _, grad, rep = _regularized(ens, data, prior, jensen.predictive_variance_V_log, scale)
    return (grad, rep) if return_parts else grad


def _dpp_logdet(theta, kernel):
    """ln det K on parameters, its gradient, and the bandwidth used."""
    n = theta.shape[0]
    if n == 1:
        return 0.0, np.zeros_like(theta), 1.0
    sqd = pairwise_sq_dists(theta)
    s = kernel.sq_bandwidth(sqd)
    K = np.exp(-sqd / (2.0 * s))
    value, jit = logdet_psd(K, return_jitter=True)
    Ainv = np.linalg.inv(K + jit * np.eye(n))
    B = Ainv * K
    grad = -(2.0 / s) * _weighted_displacement(B, theta, sqd)
    if kernel.policy == "median_trick":
        iu, ju = np.triu_indices(n, 1)
        pair_sq = sqd[iu, ju]
        median = float(np.median(pair_sq))
        if median / math.log(n) > BANDWIDTH_FLOOR:
            # d ln det / d s, then d s / d theta through the median pair(s)
            dlds = float(np.sum(B * sqd)) / (2.0 * s * s)
            idx, wt = median_weights(pair_sq)
            for p, w in zip(idx, wt):
                i, j = iu[p], ju[p]
                dv = 2.0 * (theta[i] - theta[j]) * w / math.log(n) * dlds
                grad[i] += dv
                grad[j] -= dv
    return value, grad, s


def dpp_objective(ens, data, prior, kernel=Kernel(), scale=1.0):
    """-(1/N) sum_i [scale * sum_d L_id + ln prior(theta_i)] - ln det K."""
    X, y, a = _batch(data)
    L = models.loglik_batch(ens.spec, ens.particles, X, y, a)
    logjoint = scale * L.sum(axis=1) + models.log_prior(prior, ens.particles)
    return float(-np.mean(logjoint) - _dpp_logdet(ens.particles, kernel)[0])


def dpp_grad(ens, data, prior, kernel=Kernel(), scale=1.0, return_parts=False):
    _, g = log_joint_grad(ens, data, prior, scale)
    rep = -_dpp_logdet(ens.particles, kernel)[1]
    grad = -g / ens.n + rep
    return (grad, rep) if return_parts else grad


def var_svgd_direction(ens, data, prior, kind="h", kernel=Kernel(), scale=1.0,
                       return_repulsion=False):
    """SVGD smoothing of each particle's log-joint-plus-repulsion gradient.

    The driving gradient at particle j is
    ``d/d theta_j [scale * sum_d (L_jd + R_d) + ln prior(theta_j)]``.
    """
    X, y, a = _batch(data)
    L = models.loglik_batch(ens.spec, ens.particles, X, y, a)
    W = np.ones_like(L)
    if ens.n > 1:
        W = W + jensen.repulsion_R_grad(kind, L)[1]
    _, g = models.loglik_vjp(ens.spec, ens.particles, X, y, weights=scale * W, actions=a)
    g = g + models.grad_log_prior(prior, ens.particles)
    v, rep = kernel_direction("svgd", ens.particles, g, kernel)
    return (v, rep) if return_repulsion else v


# ---------------------------------------------------------------------------
# rules, optimizer, training loop


@dataclass(frozen=True)
class UpdateRule:
    tag: str = "var"
    bandwidth_kind: jensen.BandwidthKind = field(default_factory=jensen.BandwidthKind)
    kernel: Kernel = field(default_factory=Kernel)
    step_size: float = 0.004
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    gfsf_ridge: float = 1e-2
    num_prior_samples: int = 100

    def __post_init__(self):
        if self.tag not in RULES:
            raise ValueError(f"unknown rule {self.tag!r}")
        if not self.step_size >= 0:
            raise ValueError("step size must be non-negative")
        if self.optimizer not in ("adam", "plain"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("adam betas must lie in (0, 1)")


@dataclass
class StepReport:
    step: int
    objective_value: float
    grad_norms: np.ndarray
    repulsion_magnitudes: np.ndarray


def direction(rule, ens, data, prior, scale=1.0, function_prior=None):
    """Ascent direction, repulsion component and objective for one step."""
    tag = rule.tag
    kind = rule.bandwidth_kind
    if tag == "var":
        obj, g, rep = _regularized(ens, data, prior,
                                   lambda L: jensen.repulsion_R_grad(kind, L), scale)
        return -g, -rep, obj
    if tag == "pac2e":
        obj, g, rep = _regularized(ens, data, prior, jensen.predictive_variance_V_log, scale)
        return -g, -rep, obj
    if tag == "dpp":
        g, rep = dpp_grad(ens, data, prior, rule.kernel, scale, return_parts=True)
        return -g, -rep, dpp_objective(ens, data, prior, rule.kernel, scale)
    L, g = log_joint_grad(ens, data, prior, scale)
    objective = float(-np.mean(scale * L.sum(axis=1) + models.log_prior(prior, ens.particles)))
    if tag == "map":
        return g, np.zeros_like(g), objective
    if tag == "var_svgd":
        v, rep = var_svgd_direction(ens, data, prior, kind, rule.kernel, scale, True)
        return v, rep, var_objective(ens, data, prior, kind, scale)
    if tag in FUNCTION_RULES:
        v, rep = function_space_direction(tag, ens, data, function_prior, rule.kernel,
                                          scale, prior, rule.gfsf_ridge, True)
        return v, rep, objective
    v, rep = kernel_direction(tag, ens.particles, g, rule.kernel, rule.gfsf_ridge)
    return v, rep, objective


class Adam:
    """Adaptive-moment ascent, state kept per particle coordinate."""

    def __init__(self, shape, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, x, g):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        return x + self.lr * mhat / (np.sqrt(vhat) + self.eps)


class Plain:
    def __init__(self, lr):
        self.lr = lr

    def step(self, x, g):
        return x + self.lr * g


def make_optimizer(rule, shape):
    if rule.optimizer == "plain":
        return Plain(rule.step_size)
    return Adam(shape, rule.step_size, rule.beta1, rule.beta2, rule.eps_opt)


def _minibatches(n, batch_size, rng):
    if batch_size is None or batch_size >= n:
        yield np.arange(n)
        return
    perm = rng.permutation(n)
    for k in range(0, n, batch_size):
        yield perm[k : k + batch_size]


def train(rule, ens, data, prior, epochs=1, batch_size=None, rng=None, steps=None,
          function_prior_inputs=None):
    """Synchronous particle updates over minibatch epochs.

    Every step computes all directions from one snapshot, then applies them.
    Data terms are rescaled by D / b on minibatches. With ``steps`` set the
    loop stops after that many updates (cycling epochs as needed).

    Returns the final ensemble and a list of :class:`StepReport`.
    """
    if epochs < 1 and steps is None:
        raise ValueError("need at least one epoch")
    if rng is None:
        rng = np.random.default_rng(0)
    opt = make_optimizer(rule, ens.particles.shape)
    theta = np.array(ens.particles)
    D = len(data)
    trajectory = []
    k = 0
    epoch = 0
    while True:
        if steps is None and epoch >= epochs:
            break
        for idx in _minibatches(D, batch_size, rng):
            if steps is not None and k >= steps:
                break
            batch = data.subset(idx) if len(idx) < D else data
            scale = D / len(idx)
            cur = ens.replace(theta)
            fprior = None
            if rule.tag in FUNCTION_RULES:
                fprior = models.fit_function_prior(
                    ens.spec, prior, batch.X, rng, rule.num_prior_samples
                )
            try:
                v, rep, obj = direction(rule, cur, batch, prior, scale, fprior)
            except (models.NonFiniteOutput, np.linalg.LinAlgError, FloatingPointError) as e:
                raise Diverged(f"step {k}: {e}") from e
            if not (np.isfinite(obj) and np.all(np.isfinite(v))):
                raise Diverged(f"non-finite objective or direction at step {k}")
            theta = opt.step(theta, v)
            if not np.all(np.isfinite(theta)):
                raise Diverged(f"non-finite particles at step {k}")
            trajectory.append(StepReport(k, obj, np.linalg.norm(v, axis=1),
                                         np.linalg.norm(rep, axis=1)))
            k += 1
        epoch += 1
        if steps is not None and k >= steps:
            break
    return ens.replace(theta), trajectory


def trajectory_csv(trajectory, path=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "objective", "mean_grad_norm", "mean_repulsion"])
    for r in trajectory:
        w.writerow([r.step, repr(float(r.objective_value)),
                    repr(float(np.mean(r.grad_norms))),
                    repr(float(np.mean(r.repulsion_magnitudes)))])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
