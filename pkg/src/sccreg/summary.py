"""Posterior summarization: representative draw, fit score, accuracy metrics.

The representative partition is the retained draw whose pairwise
co-membership matrix is closest (squared Frobenius distance) to the
posterior mean co-membership matrix; ties go to the earliest draw. Model
fit across smoothing weights is compared by the sum of log conditional
predictive ordinates, each computed as the harmonic mean of per-draw
likelihoods (larger is better).
"""

import math
from dataclasses import dataclass

import numpy as np

from .composition import recover_constrained
from .errors import InputError, NumericalError


def membership_matrix(z):
    """Symmetric 0/1 matrix with entry (i, j) = 1 when z_i == z_j."""
    z = np.asarray(z)
    if z.ndim != 1 or z.size < 1:
        raise InputError("label vector must be a nonempty 1-d array")
    return (z[:, None] == z[None, :]).astype(np.int8)


def _stacked_memberships(traces_z):
    zs = np.asarray(traces_z)
    if zs.ndim != 2 or zs.shape[0] < 1:
        raise InputError("need at least one retained draw")
    return (zs[:, :, None] == zs[:, None, :]).astype(np.float64)


def dahl_select(trace):
    """Index of the retained draw minimizing distance to the mean co-membership."""
    zs = [state.z for _, state in trace.snapshots]
    stacked = _stacked_memberships(zs)
    mean = stacked.mean(axis=0)
    dists = ((stacked - mean[None, :, :]) ** 2).sum(axis=(1, 2))
    return int(np.argmin(dists))


def lpml(trace):
    """Sum over observations of the log harmonic-mean predictive ordinate.

    CPO_i is the inverse of the average of inverse per-draw likelihoods;
    computed stably from the stored log likelihoods via log-sum-exp.
    """
    ll = np.asarray(trace.loglik, dtype=float)
    if ll.ndim != 2 or ll.shape[0] < 1:
        raise InputError("trace has no retained log-likelihood rows")
    if not np.all(np.isfinite(ll)):
        raise NumericalError("non-finite log likelihood in trace")
    m = ll.shape[0]
    neg = -ll
    peak = neg.max(axis=0)
    log_mean_inv = peak + np.log(np.exp(neg - peak[None, :]).sum(axis=0)) - math.log(m)
    return float(-log_mean_inv.sum())


def rand_index(a, b):
    """Fraction of observation pairs on which two partitions agree."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 1 or a.shape != b.shape:
        raise InputError(f"label vectors must share one dimension, got {a.shape} vs {b.shape}")
    n = a.shape[0]
    if n < 2:
        raise InputError("rand index needs at least two observations")
    # contingency-table pair counting
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    same_both = (table * (table - 1) // 2).sum()
    rows = table.sum(axis=1)
    cols = table.sum(axis=0)
    same_a = (rows * (rows - 1) // 2).sum()
    same_b = (cols * (cols - 1) // 2).sum()
    pairs = n * (n - 1) // 2
    agreements = pairs + 2 * same_both - same_a - same_b
    return agreements / pairs


def estimation_metrics(estimates, truth):
    """Mean absolute bias, sampling spread, and mean squared error per coefficient.

    ``estimates`` is (replicates, locations, coefficients) for per-location
    coefficients or (replicates, coefficients) for global ones; ``truth``
    drops the replicate axis. The spread uses the (replicates - 1) divisor and
    location-indexed inputs are averaged over locations.
    """
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.ndim == 2:
        est = est[:, None, :]
        tru = tru[None, :]
    if est.ndim != 3 or tru.shape != est.shape[1:]:
        raise InputError(
            f"estimates {np.asarray(estimates).shape} and truth {tru.shape} do not align"
        )
    reps = est.shape[0]
    if reps < 2:
        raise InputError(f"spread needs at least 2 replicates, got {reps}")
    err = est - tru[None, :, :]
    mab = np.abs(err).mean(axis=0).mean(axis=0)
    msd = est.std(axis=0, ddof=1).mean(axis=0)
    mmse = (err**2).mean(axis=0).mean(axis=0)
    return {"mab": mab, "msd": msd, "mmse": mmse}


@dataclass(frozen=True)
class PosteriorSummary:
    """Representative-draw summary of one chain."""

    m_best: int              # index into the retained draws
    z_hat: np.ndarray        # labels 1..k_hat
    k_hat: int
    beta_tilde_hat: np.ndarray  # (k_hat, parts) zero-sum rows
    sigma2_hat: np.ndarray
    eta_hat: np.ndarray
    lpml: float


def summarize(trace, projection):
    """Pick the representative draw and back-project its coefficients."""
    m_best = dahl_select(trace)
    _, state = trace.snapshots[m_best]
    beta_tilde = np.stack(
        [recover_constrained(state.betas[k], projection.m1) for k in range(state.k_star)]
    )
    return PosteriorSummary(
        m_best=m_best,
        z_hat=state.z.copy(),
        k_hat=state.k_star,
        beta_tilde_hat=beta_tilde,
        sigma2_hat=state.sigma2s.copy(),
        eta_hat=state.eta.copy(),
        lpml=lpml(trace),
    )
