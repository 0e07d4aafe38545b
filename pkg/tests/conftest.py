"""Shared oracles: partition enumeration, independent NIG marginals, probes."""

import math

import numpy as np
import pytest


def partition_labels(n):
    """Every canonical label vector of length n (restricted growth strings).

    Labels are 1-based and compact, numbered by first appearance, matching
    the sampler's convention. Yields Bell(n) vectors.
    """
    if n == 0:
        return
    stack = [([1], 1)]
    while stack:
        prefix, kmax = stack.pop()
        if len(prefix) == n:
            yield np.array(prefix, dtype=np.int64)
            continue
        for c in range(kmax + 1, 0, -1):
            stack.append((prefix + [c], max(kmax, c)))


def nig_log_marginal(resid, x1, nig):
    """Log marginal of one cluster's residuals, beta and sigma2 integrated out.

    Deliberately a different route from the library: dense matrix inverses
    and slogdet, no rank-one shortcuts.
    """
    r = np.asarray(resid, dtype=float).reshape(-1)
    x = np.asarray(x1, dtype=float).reshape(r.shape[0], -1)
    n_obs = r.shape[0]
    s0inv = np.linalg.inv(nig.sigma0)
    prec = s0inv + x.T @ x
    cov = np.linalg.inv(prec)
    rhs = s0inv @ nig.tau0 + x.T @ r
    tau = cov @ rhs
    b_star = nig.b0 + 0.5 * float(nig.tau0 @ s0inv @ nig.tau0 + r @ r - tau @ prec @ tau)
    _, logdet0 = np.linalg.slogdet(nig.sigma0)
    _, logdet1 = np.linalg.slogdet(cov)
    return (
        -0.5 * n_obs * math.log(2.0 * math.pi)
        + 0.5 * (logdet1 - logdet0)
        + nig.a0 * math.log(nig.b0)
        - (nig.a0 + 0.5 * n_obs) * math.log(b_star)
        + math.lgamma(nig.a0 + 0.5 * n_obs)
        - math.lgamma(nig.a0)
    )


def nig_posterior_params(resid, x1, nig):
    """Conjugate posterior (tau, cov, a, b) for one cluster, dense route."""
    r = np.asarray(resid, dtype=float).reshape(-1)
    x = np.asarray(x1, dtype=float).reshape(r.shape[0], -1)
    s0inv = np.linalg.inv(nig.sigma0)
    prec = s0inv + x.T @ x
    cov = np.linalg.inv(prec)
    tau = cov @ (s0inv @ nig.tau0 + x.T @ r)
    a_star = nig.a0 + 0.5 * r.shape[0]
    b_star = nig.b0 + 0.5 * float(nig.tau0 @ s0inv @ nig.tau0 + r @ r - tau @ prec @ tau)
    return tau, cov, a_star, b_star


def enumerate_kstar_posterior(y, x1, nig, log_prior_fn):
    """Exact posterior pmf of the cluster count for small n by enumeration."""
    n = np.asarray(y).shape[0]
    log_terms = []
    ks = []
    for labels in partition_labels(n):
        lp = log_prior_fn(labels)
        for c in range(1, labels.max() + 1):
            members = labels == c
            lp += nig_log_marginal(np.asarray(y)[members], np.asarray(x1)[members], nig)
        log_terms.append(lp)
        ks.append(int(labels.max()))
    log_terms = np.array(log_terms)
    weights = np.exp(log_terms - log_terms.max())
    weights /= weights.sum()
    pmf = np.zeros(max(ks) + 1)
    for k, wgt in zip(ks, weights):
        pmf[k] += wgt
    return pmf


class ProbeRng:
    """Stands in for a generator to expose what a conjugate update computed.

    standard_gamma records its argument and returns ``gamma_value``;
    standard_normal returns ``normal_fill`` (broadcast to the asked shape).
    With gamma_value 1 and zero fill, a draw sigma2 = b*/g equals b* and a
    draw mean + scale*perturb equals the mean.
    """

    def __init__(self, gamma_value=1.0, normal_fill=None):
        self.gamma_args = []
        self.normal_shapes = []
        self.gamma_value = gamma_value
        self.normal_fill = normal_fill

    def standard_gamma(self, a):
        self.gamma_args.append(np.array(a, dtype=float, copy=True))
        if np.ndim(a) == 0:
            return float(self.gamma_value)
        return np.full(np.shape(a), float(self.gamma_value))

    def standard_normal(self, size=None):
        self.normal_shapes.append(size)
        if size is None:
            return 0.0 if self.normal_fill is None else float(self.normal_fill)
        out = np.zeros(size)
        if self.normal_fill is not None:
            out[...] = self.normal_fill
        return out

    def random(self, n=None):
        raise AssertionError("label-sweep uniforms should not be drawn here")


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
