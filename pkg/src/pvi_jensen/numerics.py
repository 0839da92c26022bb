"""Dense linear algebra, stable reductions and random streams."""

from __future__ import annotations

import numpy as np
import scipy.linalg as la


class NotPositiveDefinite(np.linalg.LinAlgError):
    pass


class NonFiniteEvaluation(ValueError):
    pass


def jitter_cholesky(m, jitter=0.0, ladder=(1.0, 10.0, 100.0)):
    """Lower Cholesky factor of ``m + jitter * I``, escalating the jitter.

    Tries ``jitter``, ``10 * jitter`` and ``100 * jitter`` in turn. When
    ``jitter`` is zero a failed plain factorization falls back to a ladder
    scaled by the mean diagonal (1e-12, 1e-11, 1e-10 of it).

    Returns
    -------
    chol : ndarray
        Lower triangular factor.
    used : float
        The jitter that was finally added to the diagonal.
    """
    m = np.asarray(m, dtype=np.float64)
    n = m.shape[0]
    if jitter > 0:
        tries = [jitter * s for s in ladder]
    else:
        scale = max(float(np.mean(np.diag(m))), 1.0) if n else 1.0
        tries = [0.0] + [scale * 1e-12 * s for s in ladder]
    eye = np.eye(n)
    for jit in tries:
        try:
            return la.cholesky(m + jit * eye, lower=True), jit
        except la.LinAlgError:
            continue
    raise NotPositiveDefinite(
        f"matrix not positive definite after jitter {tries[-1]:.3g}"
    )


def logdet_psd(m, jitter=0.0, return_jitter=False):
    """Log-determinant of a symmetric PSD matrix plus ``jitter * I``."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("logdet_psd expects a square matrix")
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if not np.allclose(m, m.T, rtol=1e-10, atol=1e-10 * scale):
        raise ValueError("logdet_psd expects a symmetric matrix")
    chol, used = jitter_cholesky(m, jitter)
    value = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return (value, used) if return_jitter else value


def logsumexp(v, axis=None):
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("logsumexp of an empty vector")
    vmax = np.max(v, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(v - vmax), axis=axis, keepdims=True)) + vmax
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def median(v):
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("median of an empty vector")
    return float(np.median(v))


def median_weights(v):
    """Indices and weights whose weighted sum is the median of ``v``.

    Used to differentiate a median: the selected order statistic(s) are
    treated as a fixed index selection. Ties resolve by stable sort order.
    """
    v = np.asarray(v, dtype=np.float64).ravel()
    order = np.argsort(v, kind="stable")
    n = v.size
    if n % 2:
        return order[n // 2 : n // 2 + 1], np.array([1.0])
    return order[n // 2 - 1 : n // 2 + 1], np.array([0.5, 0.5])


def finite_diff_grad(f, at, step=1e-5):
    """Central-difference gradient of the scalar function ``f`` at ``at``."""
    x = np.array(at, dtype=np.float64)
    shape = x.shape
    x = x.ravel()
    grad = np.empty_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + step
        fp = f(x.reshape(shape))
        x[i] = orig - step
        fm = f(x.reshape(shape))
        x[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteEvaluation(f"non-finite value at coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * step)
    return grad.reshape(shape)


def make_rng(seed):
    """PCG64 generator; identical seeds give identical streams."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def spawn(rng, n):
    """Independent child generators derived from ``rng``."""
    return [np.random.Generator(bg) for bg in rng.bit_generator.spawn(n)]
