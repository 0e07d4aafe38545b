"""Partition prior for a mixture of finite mixtures, with spatial smoothing.

The component count minus one is Poisson, component weights are symmetric
Dirichlet. Marginalizing both gives an exchangeable partition prior
proportional to V_n(t) * prod_c gamma^(ascending |c|), where V_n is an
infinite series over the component count computed here in log space with
a streamed, tolerance-truncated log-sum-exp. The urn representation of the
same prior supplies the label-update weights, optionally tilted by a
Markov-random-field agreement term over a spatial graph.
"""

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, NumericalError
from .graph import mrf_log_weight

DEFAULT_SERIES_TOL = 1e-12
_MAX_SERIES_TERMS = 10**6
_CONSECUTIVE_SMALL = 5


@dataclass(frozen=True)
class MfmHyper:
    """Dirichlet concentration, Poisson rate (of components minus one), n."""

    gamma: float = 1.0
    zeta: float = 1.0
    n: int = 1

    def __post_init__(self):
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise InputError(f"gamma must be positive and finite, got {self.gamma}")
        if not (self.zeta > 0 and math.isfinite(self.zeta)):
            raise InputError(f"zeta must be positive and finite, got {self.zeta}")
        if int(self.n) != self.n or self.n < 1:
            raise InputError(f"n must be a positive integer, got {self.n}")
        object.__setattr__(self, "n", int(self.n))


def log_ascending_factorial(x, m):
    """log of x(x+1)...(x+m-1); zero terms for m = 0."""
    if m < 0 or int(m) != m:
        raise InputError(f"ascending factorial length must be a nonnegative integer, got {m}")
    if x <= 0:
        raise InputError(f"ascending factorial base must be positive, got {x}")
    return math.lgamma(x + m) - math.lgamma(x)


def log_descending_factorial(k, m):
    """log of k(k-1)...(k-m+1); -inf when m > k (the product hits zero)."""
    if m < 0 or int(m) != m or int(k) != k or k < 0:
        raise InputError(f"descending factorial needs integers k >= 0, m >= 0, got k={k}, m={m}")
    if m > k:
        return -math.inf
    return math.lgamma(k + 1) - math.lgamma(k - m + 1)


def _log_poisson_shifted(k, zeta):
    # component count k >= 1 with k - 1 Poisson(zeta)
    return -zeta + (k - 1) * math.log(zeta) - math.lgamma(k)


@dataclass(frozen=True)
class VnTable:
    """Cached log V_n(w) values for w = 1..n+1 (index 0 unused)."""

    hyper: MfmHyper
    tol: float
    log_v: np.ndarray = field(repr=False)

    def log_ratio(self, k_star):
        """log V_n(k_star + 1) - log V_n(k_star), the new-cluster series ratio."""
        if not 1 <= k_star <= self.hyper.n:
            raise InputError(f"k_star must be in 1..{self.hyper.n}, got {k_star}")
        return float(self.log_v[k_star + 1] - self.log_v[k_star])


def _log_vn(w, hyper, tol):
    gamma, zeta, n = hyper.gamma, hyper.zeta, hyper.n
    log_tol = math.log(tol)
    total = -math.inf
    small_run = 0
    k = max(w, 1)
    first_k = k
    while True:
        term = (
            log_descending_factorial(k, w)
            - log_ascending_factorial(gamma * k, n)
            + _log_poisson_shifted(k, zeta)
        )
        total = np.logaddexp(total, term)
        if term - total < log_tol:
            small_run += 1
            if small_run >= _CONSECUTIVE_SMALL:
                return float(total)
        else:
            small_run = 0
        k += 1
        if k - first_k >= _MAX_SERIES_TERMS:
            raise NumericalError(
                f"series for V_n(w={w}) did not satisfy tol={tol:g} "
                f"within {_MAX_SERIES_TERMS} terms"
            )


_TABLE_CACHE = {}


def build_vn_table(hyper, tol=DEFAULT_SERIES_TOL):
    """Compute log V_n(w) for w = 1..n+1. Cached per (gamma, zeta, n, tol)."""
    if not (0 < tol < 1):
        raise InputError(f"series tolerance must be in (0, 1), got {tol}")
    key = (hyper.gamma, hyper.zeta, hyper.n, tol)
    hit = _TABLE_CACHE.get(key)
    if hit is not None:
        return hit
    log_v = np.full(hyper.n + 2, np.nan)
    for w in range(1, hyper.n + 2):
        log_v[w] = _log_vn(w, hyper, tol)
    if hyper.gamma == 1.0 and hyper.zeta == 1.0:
        # sanity property of the series at the default hyperparameters
        if not np.all(np.diff(log_v[1:]) < 0):
            raise NumericalError("log V_n(w) is not strictly decreasing in w")
    log_v.flags.writeable = False
    table = VnTable(hyper=hyper, tol=tol, log_v=log_v)
    _TABLE_CACHE[key] = table
    return table


def _cluster_sizes(labels):
    sizes = Counter(labels)
    if any(s is None for s in sizes):
        raise InputError("labels must not contain None")
    return sizes


def partition_log_prior(labels, hyper, table=None):
    """Log prior of the partition encoded by a full label vector."""
    labels = list(labels)
    if len(labels) != hyper.n:
        raise InputError(f"label vector has length {len(labels)}, expected n={hyper.n}")
    if table is None:
        table = build_vn_table(hyper)
    elif table.hyper != hyper:
        raise InputError("V_n table was built for different hyperparameters")
    sizes = _cluster_sizes(labels)
    t = len(sizes)
    out = float(table.log_v[t])
    for size in sizes.values():
        out += log_ascending_factorial(hyper.gamma, size)
    return out


def urn_log_weights(i, labels, graph, lam, hyper, table=None):
    """Unnormalized log urn weights for relabeling vertex i.

    ``labels[i]`` is ignored; the remaining entries define the competing
    clusters. Returns ``(existing, new)`` where ``existing`` lists one log
    weight per currently occupied label in sorted label order:
    log(size + gamma) + lam * (neighbors of i sharing that label), and
    ``new`` is log(gamma) plus the V_n series ratio. With no other
    observations only the new-cluster weight is meaningful and it is 0.
    """
    labels = list(labels)
    if graph.n != len(labels):
        raise InputError(f"graph has {graph.n} vertices but {len(labels)} labels given")
    if len(labels) != hyper.n:
        raise InputError(f"label vector has length {len(labels)}, expected n={hyper.n}")
    if not 0 <= i < len(labels):
        raise InputError(f"vertex index {i} out of range")
    if lam < 0:
        raise InputError(f"smoothing weight must be nonnegative, got {lam}")
    if table is None:
        table = build_vn_table(hyper)
    elif table.hyper != hyper:
        raise InputError("V_n table was built for different hyperparameters")
    sizes = _cluster_sizes(labels[:i] + labels[i + 1 :])
    k_star = len(sizes)
    if k_star == 0:
        return np.empty(0), 0.0
    ordered = sorted(sizes)
    existing = np.empty(k_star)
    for pos, lab in enumerate(ordered):
        existing[pos] = math.log(sizes[lab] + hyper.gamma) + mrf_log_weight(
            labels, i, lab, graph, lam
        )
    new = math.log(hyper.gamma) + table.log_ratio(k_star)
    return existing, new
