"""Randomized property suites that certify the inequalities and gradients.

Each suite returns a :class:`VerifyReport`; violations carry the inputs,
both sides of the failed relation and the slack, verbatim.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import jensen, models, updates
from ..ensemble import ParticleEnsemble
from ..numerics import finite_diff_grad
from .data import Dataset

SUITES = ("jensen", "gradients", "updates", "identities")
GRAD_TOL = 1e-4
KINK_MARGIN = 1e-3


@dataclass
class VerifyReport:
    suite: str
    trials: int
    checks: int = 0
    violations: list = field(default_factory=list)
    max_rel_error: float = 0.0

    @property
    def passed(self):
        return not self.violations

    def fail(self, relation, inputs, lhs, rhs):
        self.violations.append({
            "relation": relation,
            "inputs": np.asarray(inputs).tolist(),
            "lhs": float(lhs),
            "rhs": float(rhs),
            "slack": float(rhs - lhs),
        })

    def to_json(self):
        d = asdict(self)
        d["passed"] = self.passed
        return json.dumps(d, sort_keys=True, indent=2)


def random_column(rng, n_low=2, n_high=50, low=-10.0, high=0.0):
    n = int(rng.integers(n_low, n_high + 1))
    return rng.uniform(low, high, n)


def _ordered(report, name, L, a, b, tol=jensen.CHAIN_TOL):
    """Record a violation unless a <= b + tol."""
    report.checks += 1
    if not a <= b + tol:
        report.fail(name, L, a, b)


def jensen_suite(rng, trials):
    """Every bound ordering on random ensembles (N in [2, 50], L in [-10, 0])."""
    rep = VerifyReport("jensen", trials)
    for _ in range(trials):
        L = random_column(rng)
        v = jensen.chain_values(L)
        m, b = v["mean"], v["bma"]
        for name in ("R_h", "R_hm", "R_hmedian", "R_c", "R_w", "R_g"):
            _ordered(rep, f"mean <= mean + {name}", L, m, m + v[name])
            _ordered(rep, f"mean + {name} <= bma", L, m + v[name], b)
        _ordered(rep, "R_w <= R_c", L, v["R_w"], v["R_c"])
        _ordered(rep, "R_hm <= R_h", L, v["R_hm"], v["R_h"])
        _ordered(rep, "mean + R_d_upper <= bma", L, m + v["R_d_upper"], b)
        _ordered(rep, "mean + R_d_lower <= mean + R_d_upper", L, v["R_d_lower"], v["R_d_upper"])
        _ordered(rep, "mean + R_d_lower <= mean", L, m + v["R_d_lower"], m)
        _ordered(rep, "mean + R_d_lower <= mean + R_c", L, v["R_d_lower"], v["R_c"])
        lo, hi, gap, _ = jensen.second_order_equality_witness(L)
        _ordered(rep, "witness low <= gap", L, lo, gap, 1e-12 * max(1.0, lo))
        _ordered(rep, "gap <= witness high", L, gap, hi, 1e-12 * max(1.0, hi))
    return rep


def identities_suite(rng, trials):
    rep = VerifyReport("identities", trials)
    for _ in range(trials):
        L = rng.uniform(-10.0, 10.0, int(rng.integers(1, 51)))
        lhs, rhs = jensen.covariance_identity_check(L)
        rep.checks += 1
        if abs(lhs - rhs) > 1e-10 * max(1.0, abs(lhs)):
            rep.fail("covariance identity", L, lhs, rhs)
        a, b = np.exp(rng.uniform(-20.0, 20.0, 2))
        rep.checks += 1
        if not jensen.lemma_sqrt_check(a, b):
            rep.fail("(ln a - ln b)^2 ab <= (a - b)^2", [a, b],
                     np.log(a / b) ** 2 * a * b, (a - b) ** 2)
    return rep


# ---------------------------------------------------------------------------
# gradient certification


def random_problem(rng, likelihood, n=None, d=None):
    """Small relu network problem away from kinks and selector ties.

    Configurations with any pre-activation within ``KINK_MARGIN`` of zero,
    or with near-ties among the per-datum max, min or median log-likelihoods,
    are redrawn so that central differences see a smooth function.
    """
    while True:
        n_ = n or int(rng.integers(2, 6))
        d_ = d or int(rng.integers(2, 6))
        in_dim = int(rng.integers(1, 4))
        if likelihood == "gaussian":
            spec = models.ModelSpec(input_dim=in_dim, hidden=(int(rng.integers(2, 6)),),
                                    sigma=float(rng.uniform(0.5, 2.0)),
                                    learn_sigma=bool(rng.integers(2)))
            y = rng.normal(size=(d_, 1))
        else:
            k = int(rng.integers(2, 5))
            spec = models.ModelSpec(input_dim=in_dim, output_dim=k,
                                    hidden=(int(rng.integers(2, 6)),),
                                    likelihood="categorical")
            y = rng.integers(0, k, d_)
        X = rng.normal(size=(d_, in_dim))
        theta = rng.normal(0.0, 0.7, size=(n_, spec.num_params))
        data = Dataset(X, y)
        _, cache = models.forward_batch(spec, theta, X, keep=True)
        if any(np.min(np.abs(z)) < KINK_MARGIN for _, z in cache[:-1]):
            continue
        L = models.loglik_batch(spec, theta, X, y)
        s = np.sort(L, axis=0)
        if n_ > 1 and np.min(np.diff(s, axis=0)) < KINK_MARGIN:
            continue
        return ParticleEnsemble(spec, theta), data


def relative_error(analytic, numeric):
    scale = max(float(np.max(np.abs(numeric))), 1e-8)
    return float(np.max(np.abs(analytic - numeric))) / scale


OBJECTIVES = {
    "var_h": (lambda e, d, p: updates.var_objective(e, d, p, "h"),
              lambda e, d, p: updates.var_grad(e, d, p, "h")),
    "var_h_m": (lambda e, d, p: updates.var_objective(e, d, p, "h_m"),
                lambda e, d, p: updates.var_grad(e, d, p, "h_m")),
    "var_h_median": (lambda e, d, p: updates.var_objective(e, d, p, "h_median"),
                     lambda e, d, p: updates.var_grad(e, d, p, "h_median")),
    "pac2e": (updates.pac2e_objective, updates.pac2e_grad),
    "dpp": (updates.dpp_objective, updates.dpp_grad),
}


def gradients_suite(rng, trials, objectives=None):
    """Analytic objective gradients against central differences (step 1e-5)."""
    rep = VerifyReport("gradients", trials)
    prior = models.Prior(0.0, float(rng.uniform(0.5, 2.0)))
    for name in objectives or OBJECTIVES:
        obj, grad = OBJECTIVES[name]
        for lik in ("gaussian", "categorical"):
            for _ in range(trials):
                ens, data = random_problem(rng, lik)
                fd = finite_diff_grad(lambda t: obj(ens.replace(t), data, prior), ens.particles)
                an = grad(ens, data, prior)
                err = relative_error(an, fd)
                rep.checks += 1
                rep.max_rel_error = max(rep.max_rel_error, err)
                if err >= GRAD_TOL:
                    rep.fail(f"{name}/{lik} gradient", ens.particles, err, GRAD_TOL)
    return rep


def middle_term_checks(rng):
    """Analytic vs numeric derivatives of the w-SGLD and GFSF loss-space terms.

    Returns the two relative errors.
    """
    L = rng.uniform(-5.0, 0.0, int(rng.integers(3, 10)))
    hw = float(jensen.bandwidth_inv_sq("h_w", L))
    _, g, _ = jensen.wsgld_middle_term(L, hw)
    fd = finite_diff_grad(lambda x: jensen.wsgld_middle_term(x, hw)[0], L)
    e1 = relative_error(g, fd)
    term = jensen.gfsf_term(L)
    _, g2, _ = jensen.gfsf_logdet_term(L, term.tilde_h, term.eps, hw)
    fd2 = finite_diff_grad(lambda x: jensen.gfsf_logdet_term(x, term.tilde_h, term.eps, hw)[0], L)
    return e1, relative_error(g2, fd2)


def single_particle_directions(ens, data, prior, rng):
    """Every rule's direction for a one-particle ensemble, keyed by tag."""
    out = {}
    for tag in updates.RULES:
        rule = updates.UpdateRule(tag)
        fprior = None
        if tag in updates.FUNCTION_RULES:
            fprior = models.fit_function_prior(ens.spec, prior, data.X, rng, 20)
        out[tag] = updates.direction(rule, ens, data, prior, 1.0, fprior)[0]
    return out


def function_space_map(ens, data, prior, fprior):
    """Function-space MAP step: J^T (d sum L / df + prior score)."""
    spec = ens.spec
    f, cache = models.forward_batch(spec, ens.particles, data.X, keep=True)
    _, dL_df, dls = models._loglik_terms(spec, f, data.y, models.log_sigma(spec, ens.particles))
    n, b, c = f.shape
    v = dL_df.reshape(n, -1) + fprior.score(f.reshape(n, -1))
    out = models.backward_batch(spec, ens.particles, cache, v.reshape(n, b, c))
    if spec.learn_sigma:
        out[:, -1] = dls.sum(axis=1) + models.grad_log_prior(prior, ens.particles)[:, -1]
    return out


def updates_suite(rng, trials):
    """Single-particle collapse, zero repulsion at coincidence, derivation checks."""
    rep = VerifyReport("updates", trials)
    prior = models.Prior(0.0, 1.0)
    for _ in range(trials):
        lik = ("gaussian", "categorical")[int(rng.integers(2))]
        ens, data = random_problem(rng, lik, n=1)
        dirs = single_particle_directions(ens, data, prior, rng)
        g_map = dirs["map"]
        for tag, v in dirs.items():
            target = g_map
            if tag in updates.FUNCTION_RULES:
                fprior = models.fit_function_prior(ens.spec, prior, data.X, rng, 20)
                v = updates.function_space_direction(tag, ens, data, fprior, prior=prior)
                target = function_space_map(ens, data, prior, fprior)
            err = float(np.max(np.abs(v - target)))
            rep.checks += 1
            if err > 1e-10 * max(1.0, float(np.max(np.abs(target)))):
                rep.fail(f"{tag} collapses to MAP at N=1", ens.particles, err, 0.0)
        # coincident particles: no repulsion for any rule
        twin = ens.replace(np.repeat(ens.particles, 3, axis=0))
        for tag in updates.RULES:
            if tag in updates.FUNCTION_RULES:
                fprior = models.fit_function_prior(ens.spec, prior, data.X, rng, 20)
                _, r = updates.function_space_direction(tag, twin, data, fprior, prior=prior,
                                                        return_repulsion=True)
            else:
                _, r, _ = updates.direction(updates.UpdateRule(tag), twin, data, prior)
            mag = float(np.max(np.abs(r)))
            rep.checks += 1
            if mag > 1e-10:
                rep.fail(f"{tag} repulsion vanishes for identical particles",
                         twin.particles, mag, 0.0)
        e1, e2 = middle_term_checks(rng)
        for name, e in (("w-SGLD middle term", e1), ("GFSF log-det term", e2)):
            rep.checks += 1
            rep.max_rel_error = max(rep.max_rel_error, e)
            if e >= 1e-5:
                rep.fail(f"{name} gradient", [], e, 1e-5)
    return rep


def verify(suite, rng, trials):
    if suite == "jensen":
        return jensen_suite(rng, trials)
    if suite == "identities":
        return identities_suite(rng, trials)
    if suite == "gradients":
        return gradients_suite(rng, trials)
    if suite == "updates":
        return updates_suite(rng, trials)
    raise ValueError(f"unknown suite {suite!r}; choose from {SUITES}")
