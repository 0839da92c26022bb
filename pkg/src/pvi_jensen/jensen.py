"""Loss-based second-order Jensen inequalities and their repulsion terms.

Every function acts on ``L``, the log-likelihoods ln p(x | theta_i) of the
N particles at one datum. Most of them also accept an ``(N, D)`` matrix and
then work column by column (particles along axis 0).

All repulsions satisfy ``mean(L) <= mean(L) + R <= ln mean(exp(L))`` and
vanish when every particle has the same log-likelihood.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import logdet_psd, logsumexp, median_weights

CHAIN_TOL = 1e-9
KINDS = ("h", "h_m", "h_median", "h_w")


@dataclass(frozen=True)
class BandwidthKind:
    tag: str = "h"
    median_M: float | None = None  # None: estimate as the mean of L**2

    def __post_init__(self):
        if self.tag not in KINDS:
            raise ValueError(f"unknown bandwidth kind {self.tag!r}")
        if self.median_M is not None and not (
            math.isfinite(self.median_M) and self.median_M > 0
        ):
            raise ValueError("median_M must be finite and positive")


def _kind(kind):
    return kind if isinstance(kind, BandwidthKind) else BandwidthKind(kind)


def _as_cols(L):
    L = np.asarray(L, dtype=np.float64)
    if L.ndim == 0 or L.shape[0] == 0:
        raise ValueError("need at least one particle")
    if not np.all(np.isfinite(L)):
        raise ValueError("log-likelihoods must be finite")
    return L


def _unpack(x, L):
    return float(x) if np.ndim(L) == 1 else x


def bma_log_predictive(L):
    L = _as_cols(L)
    return _unpack(logsumexp(L, axis=0) - np.log(L.shape[0]), L)


def jensen_gap(L):
    """ln E exp(L) - E L, always non-negative."""
    L = _as_cols(L)
    gap = logsumexp(L, axis=0) - np.log(L.shape[0]) - L.mean(axis=0)
    return _unpack(np.maximum(gap, 0.0), L)


def _median_M(L, kind):
    if kind.median_M is not None:
        return np.full(L.shape[1:], kind.median_M)
    return np.mean(L**2, axis=0)


def _shift(L, kind):
    """The term added to L_i (before subtracting 2 max) in the exponent."""
    if kind.tag in ("h", "h_w"):
        return L.mean(axis=0)
    if kind.tag == "h_m":
        return L.min(axis=0)
    return np.median(L, axis=0) - np.sqrt(_median_M(L, kind))


def bandwidth_inv_sq(kind, L):
    """Inverse-square bandwidths.

    ``h``, ``h_m`` and ``h_median`` are per particle (same shape as ``L``);
    ``h_w`` is one scalar per column.
    """
    kind = _kind(kind)
    L = _as_cols(L)
    top = L.max(axis=0)
    a = _shift(L, kind)
    if kind.tag == "h_w":
        return _unpack(np.exp(L.min(axis=0) + a - 2.0 * top), L)
    return np.exp(L + a - 2.0 * top)


def repulsion_R(kind, L):
    """Weighted variance of the log-likelihoods, (1/N) sum h_i^-2 (L_i - m)^2 / 4."""
    kind = _kind(kind)
    L = _as_cols(L)
    w = bandwidth_inv_sq(kind, L)
    c = (L - L.mean(axis=0)) ** 2
    return _unpack(np.mean(w * c, axis=0) / 4.0, L)


def repulsion_R_grad(kind, L):
    """``repulsion_R`` and its derivative with respect to every L_i.

    The max, min and median selectors are frozen index choices (ties go to
    the lowest particle index); everything else is differentiated,
    including the mean and the estimated ``median_M``.
    """
    kind = _kind(kind)
    if kind.tag == "h_w":
        raise ValueError("repulsion_R uses a per-particle bandwidth")
    L = np.asarray(L, dtype=np.float64)
    squeeze = L.ndim == 1
    if squeeze:
        L = L[:, None]
    n, d = L.shape
    cols = np.arange(d)
    m = L.mean(axis=0)
    w = bandwidth_inv_sq(kind, L)
    dev = L - m
    c = dev**2
    S = np.sum(w * c, axis=0)
    R = S / (4.0 * n)

    da = np.zeros_like(L)
    if kind.tag == "h":
        da += 1.0 / n
    elif kind.tag == "h_m":
        da[np.argmin(L, axis=0), cols] = 1.0
    else:
        for j in range(d):
            idx, wt = median_weights(L[:, j])
            da[idx, j] += wt
        if kind.median_M is None:
            M = np.mean(L**2, axis=0)
            da -= L / (n * np.sqrt(M))
    da[np.argmax(L, axis=0), cols] -= 2.0

    grad = w * c + S * da + 2.0 * w * dev - (2.0 / n) * np.sum(w * dev, axis=0)
    grad /= 4.0 * n
    if squeeze:
        return float(R[0]), grad[:, 0]
    return R, grad


def _pairwise_sq(L):
    return (L[:, None, ...] - L[None, :, ...]) ** 2


def covariance_identity_check(L):
    """Both sides of (1/N) sum (L_i - m)^2 = (1/(2N^2)) sum_ij (L_i - L_j)^2."""
    L = np.asarray(L, dtype=np.float64)
    n = L.shape[0]
    lhs = np.mean((L - L.mean(axis=0)) ** 2, axis=0)
    rhs = np.sum(_pairwise_sq(L), axis=(0, 1)) / (2.0 * n * n)
    return _unpack(lhs, L), _unpack(rhs, L)


def repulsion_Rc(L):
    """Pairwise (covariance) form with the scalar bandwidth h_w."""
    L = _as_cols(L)
    n = L.shape[0]
    hw = bandwidth_inv_sq("h_w", L)
    return _unpack(hw * np.sum(_pairwise_sq(L), axis=(0, 1)) / (8.0 * n * n), L)


def gram_G(L, data_sum=False, hw_inv_sq=None):
    """Loss Gram matrix G_ij = exp(-(h_w^-2 / 8) (L_i - L_j)^2).

    With an ``(N, D)`` input the default returns one ``(D, N, N)`` stack.
    ``data_sum=True`` instead folds the data sum into one exponent,
    ``exp(-sum_d h_w,d^-2 (L_id - L_jd)^2 / 8)``.
    ``hw_inv_sq`` freezes the bandwidth (used for differentiation).
    """
    L = _as_cols(L)
    hw = bandwidth_inv_sq("h_w", L) if hw_inv_sq is None else hw_inv_sq
    sq = _pairwise_sq(L) * hw / 8.0
    if L.ndim == 1:
        return np.exp(-sq)
    if data_sum:
        return np.exp(-np.sum(sq, axis=2))
    return np.exp(-np.moveaxis(sq, 2, 0))


def repulsion_Rw(L, data_sum=False):
    """-(1/N) sum_i ln(sum_j G_ij / N), per column (or data-summed)."""
    L = _as_cols(L)
    n = L.shape[0]
    G = gram_G(L, data_sum=data_sum)
    r = -np.mean(np.log(np.sum(G, axis=-1) / n), axis=-1)
    if data_sum and L.ndim == 2:
        return float(r) / L.shape[1]
    return _unpack(r, L)


def wsgld_middle_term(L, hw_inv_sq):
    """mean(L) + R_w with a frozen bandwidth, and its gradient in L.

    Also returns the w-SGLD-shaped repulsion
    ``sum_j dG_ij/dL_j / sum_k G_jk + sum_j dG_ji/dL_j / sum_k G_ik``,
    which equals ``N`` times the gradient of the R_w part.
    """
    L = np.asarray(L, dtype=np.float64)
    n = L.shape[0]
    diff = L[:, None] - L[None, :]
    G = np.exp(-hw_inv_sq * diff**2 / 8.0)
    S = G.sum(axis=1)
    value = L.mean() - np.mean(np.log(S / n))
    # dG_ij / dL_j
    dG_dLj = G * hw_inv_sq * diff / 4.0
    wsgld = np.sum(dG_dLj / S[None, :], axis=1) + np.sum(dG_dLj, axis=1) / S
    grad = 1.0 / n + wsgld / n
    return value, grad, wsgld


@dataclass
class GramK:
    matrix: np.ndarray
    tilde_h: float
    degenerate: bool
    hw_inv_sq: float


def _gram_K(L, tilde_h, hw):
    n = L.shape[0]
    return np.exp(-tilde_h * math.log(n) * hw / 16.0 * _pairwise_sq(L))


def select_tilde_h(L, eps_row=0.5, max_doublings=60):
    """Smallest power-of-two tilde_h with every row sum of K below N - eps_row.

    Identical particles (or N = 1) cannot satisfy the rule; they return the
    all-ones matrix flagged ``degenerate``.
    """
    L = _as_cols(L)
    if L.ndim != 1:
        raise ValueError("select_tilde_h works on a single column")
    n = L.shape[0]
    hw = float(bandwidth_inv_sq("h_w", L))
    if n == 1 or np.ptp(L) == 0.0:
        return GramK(np.ones((n, n)), 1.0, True, hw)
    tilde_h = 1.0
    for _ in range(max_doublings + 1):
        K = _gram_K(L, tilde_h, hw)
        if np.all(K.sum(axis=1) < n - eps_row):
            return GramK(K, tilde_h, False, hw)
        tilde_h *= 2.0
    return GramK(K, tilde_h / 2.0, True, hw)


def default_gfsf_eps(n):
    """Largest ridge for which det(eps I + K) <= N holds for every unit-diagonal PSD K."""
    return n ** (1.0 / n) - 1.0 if n > 1 else 0.0


def _rg_value(K, tilde_h, eps):
    n = K.shape[0]
    return 2.0 / (tilde_h * n) * (math.log(n) - logdet_psd(K, jitter=eps))


@dataclass
class GFSFTerm:
    value: float
    tilde_h: float
    eps: float
    degenerate: bool
    certified_doublings: int = 0
    K: np.ndarray = field(default=None, repr=False)


def gfsf_term(L, eps=None, eps_row=0.5, certify=True, max_doublings=200):
    """Log-det repulsion (2/(tilde_h N)) (ln N - ln det(eps I + K)).

    ``tilde_h`` starts from :func:`select_tilde_h`. With ``certify`` it keeps
    doubling until the value is at most ``repulsion_Rc(L)``, which is itself a
    proven lower bound on the Jensen gap.
    """
    L = _as_cols(L)
    n = L.shape[0]
    eps = default_gfsf_eps(n) if eps is None else float(eps)
    gk = select_tilde_h(L, eps_row)
    if gk.degenerate:
        return GFSFTerm(0.0, gk.tilde_h, eps, True, 0, gk.matrix)
    tilde_h, K = gk.tilde_h, gk.matrix
    value = _rg_value(K, tilde_h, eps)
    steps = 0
    if certify:
        rc = float(repulsion_Rc(L))
        while value > rc and steps < max_doublings:
            tilde_h *= 2.0
            K = _gram_K(L, tilde_h, gk.hw_inv_sq)
            value = _rg_value(K, tilde_h, eps)
            steps += 1
    return GFSFTerm(value, tilde_h, eps, False, steps, K)


def repulsion_Rg(L, eps=None, eps_row=0.5, certify=True):
    L = _as_cols(L)
    if L.ndim == 1:
        return gfsf_term(L, eps, eps_row, certify).value
    return np.array([gfsf_term(L[:, j], eps, eps_row, certify).value
                     for j in range(L.shape[1])])


def gfsf_logdet_term(L, tilde_h, eps, hw_inv_sq):
    """-(2/(tilde_h N)) ln det(eps I + K) with frozen constants, and its gradient.

    Also returns the GFSF-shaped repulsion sum_j (K + eps I)^-1_ij dK_ij/dL_j.
    """
    L = np.asarray(L, dtype=np.float64)
    n = L.shape[0]
    K = _gram_K(L, tilde_h, hw_inv_sq)
    A = K + eps * np.eye(n)
    sign, logdet = np.linalg.slogdet(A)
    coef = 2.0 / (tilde_h * n)
    value = -coef * logdet
    Ainv = np.linalg.inv(A)
    diff = L[:, None] - L[None, :]
    a = tilde_h * math.log(n) * hw_inv_sq / 16.0
    dK_dLj = K * 2.0 * a * diff  # d K_ij / d L_j
    gfsf = np.sum(Ainv * dK_dLj, axis=1)
    # d ln det / d L_i = sum_ab Ainv_ab dK_ab/dL_i = -2 sum_j Ainv_ij dK_ij/dL_j
    grad = 2.0 * coef * gfsf
    return value, grad, gfsf


def repulsion_Rd(L, jitter=0.0):
    """DPP forms (upper, lower) with G~_ij = G_ij^(1/2).

    upper = (1/N) ln det(I - G~/N) (``nan`` for N = 1), lower =
    (2/N) ln det G~ - ln N. Singular matrices go through the jitter ladder.
    """
    L = _as_cols(L)
    if L.ndim == 2:
        pairs = [repulsion_Rd(L[:, j], jitter) for j in range(L.shape[1])]
        return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])
    n = L.shape[0]
    Gt = np.sqrt(gram_G(L))
    lower = 2.0 / n * logdet_psd(Gt, jitter=jitter) - math.log(n)
    if n == 1:
        return float("nan"), lower
    upper = logdet_psd(np.eye(n) - Gt / n, jitter=jitter) / n
    return upper, lower


def second_order_equality_witness(L, tol=1e-12):
    """Bracket the Jensen gap by the exact second-order equality.

    The gap equals ln(1 + E[(e^L - e^m)^2 / (2 g^2)]) for some g_i between
    e^{L_i} and e^m. Putting every g_i at the upper (lower) end gives the
    smallest (largest) value.

    Returns ``(low, high, gap, ok)``.
    """
    L = _as_cols(L)
    if L.ndim != 1:
        raise ValueError("witness works on a single column")
    s = L.max()
    y = np.exp(L - s)
    mu = math.exp(L.mean() - s)
    sq = (y - mu) ** 2
    g_hi = np.maximum(y, mu)
    g_lo = np.minimum(y, mu)
    nz = sq > 0
    with np.errstate(divide="ignore"):
        low = math.log1p(np.sum(sq[nz] / (2.0 * g_hi[nz] ** 2)) / L.size)
        high = math.log1p(np.sum(sq[nz] / (2.0 * g_lo[nz] ** 2)) / L.size)
    gap = jensen_gap(L)
    ok = low - tol * max(1.0, low) <= gap <= high + tol * max(1.0, high)
    return low, high, gap, bool(ok)


def lemma_sqrt_check(a, b, tol=1e-12):
    """(ln a - ln b)^2 a b <= (a - b)^2, the squared form of sqrt(ab) <= (a-b)/(ln a - ln b)."""
    if not (a > 0 and b > 0):
        raise ValueError("lemma needs positive arguments")
    if a == b:
        return True
    r = (a - b) / b
    lg = math.log1p(r) if abs(r) < 0.5 else math.log(a) - math.log(b)
    lhs = lg * lg * a * b
    rhs = (a - b) ** 2
    return lhs <= rhs + tol * max(1.0, rhs)


def predictive_variance_V(p_column):
    """(2 max p^2)^-1 Var(p) for raw likelihoods p."""
    p = np.asarray(p_column, dtype=np.float64)
    if np.any(p <= 0):
        raise ValueError("likelihoods must be positive")
    return _unpack(np.var(p, axis=0) / (2.0 * np.max(p, axis=0) ** 2), p)


def predictive_variance_V_log(L):
    """Same quantity from log-likelihoods, with its gradient in L (max frozen)."""
    L = np.asarray(L, dtype=np.float64)
    squeeze = L.ndim == 1
    if squeeze:
        L = L[:, None]
    n, d = L.shape
    top = np.argmax(L, axis=0)
    u = np.exp(L - L[top, np.arange(d)])
    ubar = u.mean(axis=0)
    V = 0.5 * np.mean((u - ubar) ** 2, axis=0)
    t = (u - ubar) * u / n
    grad = t.copy()
    grad[top, np.arange(d)] -= t.sum(axis=0)
    if squeeze:
        return float(V[0]), grad[:, 0]
    return V, grad


# ---------------------------------------------------------------------------
# chains and reports


def chain_values(L, eps=None, eps_row=0.5):
    """Every bound of one column, keyed by name."""
    L = _as_cols(L)
    up, lo = repulsion_Rd(L) if L.shape[0] > 1 else (float("nan"), 0.0)
    return {
        "mean": float(L.mean()),
        "bma": bma_log_predictive(L),
        "R_h": repulsion_R("h", L),
        "R_hm": repulsion_R("h_m", L),
        "R_hmedian": repulsion_R("h_median", L),
        "R_c": repulsion_Rc(L),
        "R_w": repulsion_Rw(L),
        "R_g": repulsion_Rg(L, eps, eps_row),
        "R_d_upper": up,
        "R_d_lower": lo,
    }


def chain_violations(v, tol=CHAIN_TOL):
    """Names of the orderings that fail for one column's ``chain_values``.

    The DPP forms are checked as mean + lower <= mean + upper <= BMA.
    Both lie below the mean, so they are not compared with it from above.
    """
    m, b = v["mean"], v["bma"]
    bad = []
    for name in ("R_h", "R_hm", "R_hmedian", "R_c", "R_w", "R_g"):
        r = v[name]
        if not (m <= m + r + tol and m + r <= b + tol):
            bad.append(name)
    if v["R_w"] > v["R_c"] + tol:
        bad.append("R_w<=R_c")
    if v["R_hm"] > v["R_h"] + tol:
        bad.append("R_hm<=R_h")
    if not math.isnan(v["R_d_upper"]):
        if m + v["R_d_upper"] > b + tol:
            bad.append("R_d_upper")
        if v["R_d_lower"] > v["R_d_upper"] + tol:
            bad.append("R_d_lower<=R_d_upper")
    if m + v["R_d_lower"] > m + tol or m + v["R_d_lower"] > m + v["R_c"] + tol:
        bad.append("R_d_lower")
    return bad


@dataclass
class RepulsionReport:
    gap: np.ndarray
    R_h: np.ndarray
    R_hm: np.ndarray
    R_hmedian: np.ndarray
    R_c: np.ndarray
    R_w: np.ndarray
    R_g: np.ndarray
    tilde_h: np.ndarray
    R_d_upper: np.ndarray
    R_d_lower: np.ndarray
    chain_ok: np.ndarray
    median_M: np.ndarray
    h_inv_sq: np.ndarray = field(repr=False)
    hm_inv_sq: np.ndarray = field(repr=False)
    hw_inv_sq: np.ndarray = field(repr=False)

    COLUMNS = ("datum_index", "gap", "R_h", "R_hm", "R_c", "R_w", "R_g",
               "R_d_upper", "R_d_lower", "chain_ok")

    def summary(self):
        return {
            "num_data": int(self.gap.size),
            "chain_ok_fraction": float(np.mean(self.chain_ok)),
            **{k: float(np.nanmean(getattr(self, k)))
               for k in ("gap", "R_h", "R_hm", "R_c", "R_w", "R_g",
                         "R_d_upper", "R_d_lower")},
        }

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for d in range(self.gap.size):
            w.writerow([d] + [repr(float(getattr(self, c)[d])) for c in self.COLUMNS[1:-1]]
                       + [int(self.chain_ok[d])])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def repulsion_report(Lmat, eps=None, eps_row=0.5):
    """Per-datum repulsion values for an ``(N, D)`` log-likelihood matrix.

    ``chain_ok`` records mean <= mean + R(h) <= BMA for each datum.
    """
    Lmat = _as_cols(np.atleast_2d(Lmat) if np.ndim(Lmat) == 2 else np.asarray(Lmat)[:, None])
    n, d = Lmat.shape
    m = Lmat.mean(axis=0)
    bma = bma_log_predictive(Lmat)
    R_h = repulsion_R("h", Lmat)
    if n > 1:
        up, lo = repulsion_Rd(Lmat)
    else:
        up, lo = np.full(d, np.nan), np.zeros(d)
    gterms = [gfsf_term(Lmat[:, j], eps, eps_row) for j in range(d)]
    chain_ok = (R_h >= -CHAIN_TOL) & (m + R_h <= bma + CHAIN_TOL)
    return RepulsionReport(
        gap=np.asarray(jensen_gap(Lmat)),
        R_h=R_h,
        R_hm=repulsion_R("h_m", Lmat),
        R_hmedian=repulsion_R("h_median", Lmat),
        R_c=repulsion_Rc(Lmat),
        R_w=repulsion_Rw(Lmat),
        R_g=np.array([g.value for g in gterms]),
        tilde_h=np.array([g.tilde_h for g in gterms]),
        R_d_upper=up,
        R_d_lower=lo,
        chain_ok=chain_ok,
        median_M=np.mean(Lmat**2, axis=0),
        h_inv_sq=bandwidth_inv_sq("h", Lmat),
        hm_inv_sq=bandwidth_inv_sq("h_m", Lmat),
        hw_inv_sq=bandwidth_inv_sq("h_w", Lmat),
    )
