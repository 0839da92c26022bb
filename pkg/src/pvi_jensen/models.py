"""Feed-forward models p(y | f(x; theta)), priors and exact gradients.

Every particle is a flat float64 vector. Layer ``l`` stores its weight
matrix ``(fan_in, fan_out)`` row-major followed by its bias; a learnable
gaussian noise scale appends ``log sigma`` as the last entry.

The batched functions take ``params`` of shape ``(N, P)`` and evaluate all
particles on a shared input batch ``X`` of shape ``(D, input_dim)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .numerics import jitter_cholesky

LOG_2PI = float(np.log(2.0 * np.pi))


class DimensionMismatch(ValueError):
    pass


class NonFiniteOutput(ValueError):
    pass


_ACTIVATIONS = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z: (z > 0.0).astype(np.float64)),
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
    "identity": (lambda z: z, lambda z: np.ones_like(z)),
}


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    output_dim: int = 1
    hidden: tuple = ()
    activation: str = "relu"
    likelihood: str = "gaussian"  # "gaussian" or "categorical"
    sigma: float = 1.0
    learn_sigma: bool = False
    bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.likelihood not in ("gaussian", "categorical"):
            raise ValueError(f"unknown likelihood {self.likelihood!r}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.likelihood == "gaussian" and not self.sigma > 0:
            raise ValueError("gaussian sigma must be positive")
        if self.likelihood == "categorical" and self.output_dim < 2:
            raise ValueError("categorical likelihood needs output_dim >= 2")
        if self.learn_sigma and self.likelihood != "gaussian":
            raise ValueError("learn_sigma only applies to gaussian likelihoods")

    @property
    def widths(self):
        return (self.input_dim, *self.hidden, self.output_dim)

    @property
    def num_params(self):
        w = self.widths
        n = sum(a * b + (b if self.bias else 0) for a, b in zip(w[:-1], w[1:]))
        return n + int(self.learn_sigma)

    @property
    def num_classes(self):
        return self.output_dim if self.likelihood == "categorical" else None

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class Prior:
    """Isotropic gaussian prior over every parameter coordinate."""

    mean: float = 0.0
    variance: float = 1.0

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError("prior variance must be positive")


@dataclass
class FunctionPriorApprox:
    mean: np.ndarray
    covariance: np.ndarray
    num_prior_samples: int
    jitter: float = 0.0
    _chol: np.ndarray = field(default=None, repr=False)

    def score(self, f):
        """Gradient of the gaussian log density at flattened outputs ``f``."""
        if self._chol is None:
            self._chol, _ = jitter_cholesky(self.covariance)
        from scipy.linalg import cho_solve

        r = np.atleast_2d(f) - self.mean
        return -cho_solve((self._chol, True), r.T).T.reshape(np.shape(f))


# ---------------------------------------------------------------------------
# batched network evaluation


def _layers(spec, params):
    """Split ``(N, P)`` parameters into per-layer ``(W, b)`` views."""
    params = np.asarray(params, dtype=np.float64)
    if params.shape[-1] != spec.num_params:
        raise DimensionMismatch(
            f"expected {spec.num_params} parameters, got {params.shape[-1]}"
        )
    n = params.shape[0]
    out, k = [], 0
    w = spec.widths
    for a, b in zip(w[:-1], w[1:]):
        W = params[:, k : k + a * b].reshape(n, a, b)
        k += a * b
        if spec.bias:
            bias = params[:, k : k + b]
            k += b
        else:
            bias = None
        out.append((W, bias))
    return out


def log_sigma(spec, params):
    params = np.atleast_2d(params)
    if spec.learn_sigma:
        return params[:, -1]
    return np.full(params.shape[0], np.log(spec.sigma))


def _check_inputs(spec, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, spec.input_dim) if spec.input_dim == 1 else X[None, :]
    if X.shape[-1] != spec.input_dim:
        raise DimensionMismatch(
            f"expected inputs of width {spec.input_dim}, got {X.shape[-1]}"
        )
    return X


def forward_batch(spec, params, X, keep=False):
    """Outputs of shape ``(N, D, output_dim)``; optional cache for backprop."""
    X = _check_inputs(spec, X)
    act, _ = _ACTIVATIONS[spec.activation]
    layers = _layers(spec, np.atleast_2d(params))
    h = np.broadcast_to(X, (len(layers[0][0]),) + X.shape)
    cache = []
    for li, (W, b) in enumerate(layers):
        z = h @ W
        if b is not None:
            z = z + b[:, None, :]
        cache.append((h, z))
        h = act(z) if li < len(layers) - 1 else z
    return (h, cache) if keep else h


def backward_batch(spec, params, cache, cotangent):
    """Contract an output cotangent ``(N, D, out)`` through d f / d theta.

    Returns an ``(N, P)`` array. A learnable ``log sigma`` slot receives zero;
    callers add its direct contribution.
    """
    _, dact = _ACTIVATIONS[spec.activation]
    layers = _layers(spec, np.atleast_2d(params))
    n = cotangent.shape[0]
    grads = []
    g = cotangent
    for li in range(len(layers) - 1, -1, -1):
        W, b = layers[li]
        h, _ = cache[li]
        gW = np.einsum("nda,ndb->nab", h, g)
        part = [gW.reshape(n, -1)]
        if b is not None:
            part.append(g.sum(axis=1))
        grads.append(np.concatenate(part, axis=1))
        if li > 0:
            g = (g @ np.swapaxes(W, 1, 2)) * dact(cache[li - 1][1])
    grads.reverse()
    out = np.concatenate(grads, axis=1)
    if spec.learn_sigma:
        out = np.concatenate([out, np.zeros((n, 1))], axis=1)
    return out


def _loglik_terms(spec, f, y, log_sig, actions=None):
    """Per-datum log-likelihood and its derivatives.

    Returns ``(L, dL_df, dL_dlogsig)`` with shapes ``(N, D)``,
    ``(N, D, out)`` and ``(N, D)`` (the last is ``None`` unless gaussian).
    """
    n, d, c = f.shape
    if spec.likelihood == "gaussian":
        y = np.asarray(y, dtype=np.float64).reshape(d, -1)
        if actions is not None:
            actions = np.asarray(actions, dtype=int)
            sel = f[:, np.arange(d), actions][..., None]
        else:
            if y.shape[1] != c:
                raise DimensionMismatch("target width does not match outputs")
            sel = f
        var = np.exp(2.0 * log_sig)[:, None, None]
        r = y[None] - sel
        L = np.sum(-0.5 * (LOG_2PI + 2.0 * log_sig[:, None, None]) - r**2 / (2 * var), axis=2)
        dsel = r / var
        if actions is not None:
            dL_df = np.zeros_like(f)
            dL_df[:, np.arange(d), actions] = dsel[..., 0]
        else:
            dL_df = dsel
        dL_dls = np.sum(-1.0 + r**2 / var, axis=2)
        return L, dL_df, dL_dls
    y = np.asarray(y).astype(int).ravel()
    if y.shape[0] != d:
        raise DimensionMismatch("one class label per datum expected")
    if np.any((y < 0) | (y >= c)):
        raise DimensionMismatch("class label out of range")
    m = f.max(axis=2, keepdims=True)
    lse = np.log(np.sum(np.exp(f - m), axis=2, keepdims=True)) + m
    logp = f - lse
    L = logp[:, np.arange(d), y]
    dL_df = -np.exp(logp)
    dL_df[:, np.arange(d), y] += 1.0
    return L, dL_df, None


def loglik_batch(spec, params, X, y, actions=None):
    """``(N, D)`` matrix of ln p(y_d | x_d, theta_i)."""
    params = np.atleast_2d(params)
    f = forward_batch(spec, params, X)
    L, _, _ = _loglik_terms(spec, f, y, log_sigma(spec, params), actions)
    if not np.all(np.isfinite(L)):
        raise NonFiniteOutput("log-likelihood is not finite")
    return L


def loglik_vjp(spec, params, X, y, weights=None, actions=None):
    """Log-likelihood matrix and the weighted gradient sum.

    With weights ``w`` of shape ``(N, D)`` (default all ones) returns
    ``L`` and ``sum_d w[i, d] * d L[i, d] / d theta_i`` as an ``(N, P)`` array.
    """
    params = np.atleast_2d(np.asarray(params, dtype=np.float64))
    f, cache = forward_batch(spec, params, X, keep=True)
    L, dL_df, dL_dls = _loglik_terms(spec, f, y, log_sigma(spec, params), actions)
    if not np.all(np.isfinite(L)):
        raise NonFiniteOutput("log-likelihood is not finite")
    w = np.ones_like(L) if weights is None else np.asarray(weights, dtype=np.float64)
    grad = backward_batch(spec, params, cache, dL_df * w[..., None])
    if spec.learn_sigma:
        grad[:, -1] = np.sum(w * dL_dls, axis=1)
    return L, grad


# ---------------------------------------------------------------------------
# single particle / single datum convenience API


def forward(spec, params, x):
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return forward_batch(spec, np.asarray(params)[None], x)[0, 0]


def _datum(spec, datum):
    x, y = datum
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return x, np.asarray(y).reshape(1, -1) if spec.likelihood == "gaussian" else np.asarray([y])


def log_lik(spec, params, datum):
    x, y = _datum(spec, datum)
    return float(loglik_batch(spec, np.asarray(params)[None], x, y)[0, 0])


def grad_log_lik(spec, params, datum):
    x, y = _datum(spec, datum)
    _, g = loglik_vjp(spec, np.asarray(params)[None], x, y)
    return g[0]


def grad_output(spec, params, datum):
    """Output, d log_lik / d f, and a function mapping output cotangents to
    parameter space through the network jacobian."""
    x, y = _datum(spec, datum)
    p = np.asarray(params, dtype=np.float64)[None]
    f, cache = forward_batch(spec, p, x, keep=True)
    _, dL_df, _ = _loglik_terms(spec, f, y, log_sigma(spec, p))

    def jt_apply(v):
        v = np.asarray(v, dtype=np.float64).reshape(1, 1, -1)
        return backward_batch(spec, p, cache, v)[0]

    return f[0, 0], dL_df[0, 0], jt_apply


def log_prior(prior, params):
    """Sum of per-coordinate gaussian log densities (per particle if 2-D)."""
    p = np.asarray(params, dtype=np.float64)
    r = p - prior.mean
    lp = -0.5 * (np.log(2 * np.pi * prior.variance) + r**2 / prior.variance)
    return lp.sum(axis=-1) if p.ndim > 1 else float(lp.sum())


def grad_log_prior(prior, params):
    return -(np.asarray(params, dtype=np.float64) - prior.mean) / prior.variance


def init_params(spec, rng, n=None):
    """He-scaled gaussian weights (variance 2 / fan_in), zero biases."""
    size = 1 if n is None else n
    blocks = []
    w = spec.widths
    for a, b in zip(w[:-1], w[1:]):
        blocks.append(rng.normal(0.0, np.sqrt(2.0 / a), size=(size, a * b)))
        if spec.bias:
            blocks.append(np.zeros((size, b)))
    if spec.learn_sigma:
        blocks.append(np.full((size, 1), np.log(spec.sigma)))
    out = np.concatenate(blocks, axis=1)
    return out[0] if n is None else out


def sample_prior(spec, prior, rng, n):
    return rng.normal(prior.mean, np.sqrt(prior.variance), size=(n, spec.num_params))


def fit_function_prior(spec, prior, xs, rng=None, num_samples=100, samples=None):
    """Gaussian approximation of the function-space prior on a minibatch.

    Draws ``num_samples`` parameter vectors from ``prior`` (or uses the
    supplied ``samples``), evaluates the network on ``xs`` and fits an
    empirical mean and covariance over the flattened outputs.
    """
    if samples is None:
        if num_samples < 2:
            raise ValueError("need at least two prior samples")
        samples = sample_prior(spec, prior, rng, num_samples)
    samples = np.atleast_2d(samples)
    if samples.shape[0] < 2:
        raise ValueError("need at least two prior samples")
    f = forward_batch(spec, samples, xs).reshape(samples.shape[0], -1)
    mean = f.mean(axis=0)
    cov = np.atleast_2d(np.cov(f, rowvar=False, bias=True))
    scale = float(np.mean(np.diag(cov)))
    jitter = 1e-6 * scale if scale > 0 else 1e-6
    cov = cov + jitter * np.eye(cov.shape[0])
    jitter_cholesky(cov)
    return FunctionPriorApprox(mean, cov, samples.shape[0], jitter)
