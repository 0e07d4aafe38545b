"""Log-contrast design construction for simplex-valued covariates.

A composition matrix holds rows on the probability simplex. Regression on
log-composition columns under a zero-sum coefficient constraint is made
unconstrained by projecting through the orthonormal Helmert sub-matrix:
with ``beta = H @ beta_tilde`` the design column block becomes
``X1 = Z @ M1`` where ``Z`` is the row-wise log of the compositions and
``M1`` is the right inverse of ``H`` whose columns sum to zero. The fitted
unconstrained coefficients map back through :func:`recover_constrained`.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, NumericalError

ROW_SUM_TOL = 1e-6
DEFAULT_ZERO_PSEUDOCOUNT = 1e-5
ZERO_SUM_TOL = 1e-10


def _as_float_matrix(values, what):
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 2:
        raise InputError(f"{what} must be 2-dimensional, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise InputError(f"{what} needs at least one row")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{what} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class CompositionMatrix:
    """Validated matrix of compositions, one simplex point per row.

    Rows must be nonnegative with sums within ``ROW_SUM_TOL`` of 1; rows are
    renormalized to sum exactly to 1 on construction.
    """

    values: np.ndarray

    def __post_init__(self):
        arr = _as_float_matrix(self.values, "composition matrix")
        if arr.shape[1] < 2:
            raise InputError(f"compositions need at least 2 parts, got {arr.shape[1]}")
        if np.any(arr < 0):
            bad = int(np.argwhere(arr < 0)[0][0])
            raise InputError(f"composition row {bad} has a negative entry")
        sums = arr.sum(axis=1)
        off = np.abs(sums - 1.0)
        if np.any(off > ROW_SUM_TOL):
            bad = int(np.argmax(off))
            raise InputError(
                f"composition row {bad} sums to {sums[bad]:.9g}, "
                f"outside 1 +/- {ROW_SUM_TOL:g}"
            )
        arr = arr / sums[:, None]
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def rows(self):
        return self.values.shape[0]

    @property
    def parts(self):
        return self.values.shape[1]


def helmert_submatrix(parts):
    """Orthonormal (parts-1) x parts matrix with rows orthogonal to ones.

    Row j (1-based) has j leading entries 1/sqrt(j(j+1)), then -j/sqrt(j(j+1)),
    then zeros.
    """
    if parts < 2:
        raise InputError(f"need at least 2 parts for a Helmert sub-matrix, got {parts}")
    h = np.zeros((parts - 1, parts))
    for j in range(1, parts):
        s = np.sqrt(j * (j + 1.0))
        h[j - 1, :j] = 1.0 / s
        h[j - 1, j] = -j / s
    return h


def inverse_projection(h):
    """Right inverse of a zero-sum projection matrix.

    Given ``h`` with orthonormal-style full row rank (parts-1) x parts and rows
    orthogonal to the ones vector, returns ``m1`` with ``h @ m1 = I`` and
    columns summing to zero. Built by inverting the square matrix obtained by
    appending the ones row, so any full-row-rank ``h`` orthogonal to ones works;
    for the orthonormal Helmert sub-matrix the result equals ``h.T``.
    """
    h = _as_float_matrix(h, "projection matrix")
    k1, parts = h.shape
    if k1 != parts - 1:
        raise InputError(f"projection must be (parts-1) x parts, got {h.shape}")
    full = np.vstack([h, np.ones((1, parts))])
    try:
        inv = np.linalg.inv(full)
    except np.linalg.LinAlgError as exc:
        raise InputError("projection matrix is rank deficient") from exc
    return inv[:, : parts - 1]


@dataclass(frozen=True)
class HelmertProjection:
    """Helmert sub-matrix of a given order together with its right inverse."""

    parts: int
    h: np.ndarray = field(repr=False)
    m1: np.ndarray = field(repr=False)

    @classmethod
    def of_order(cls, parts):
        h = helmert_submatrix(parts)
        m1 = inverse_projection(h)
        for a in (h, m1):
            a.flags.writeable = False
        return cls(parts=parts, h=h, m1=m1)


def log_transform(compositions, zero_pseudocount=DEFAULT_ZERO_PSEUDOCOUNT):
    """Element-wise log of compositions, with zeros replaced first.

    Zero entries are set to ``zero_pseudocount`` and rows renormalized before
    taking logs, so the result is always finite.
    """
    if not isinstance(compositions, CompositionMatrix):
        compositions = CompositionMatrix(np.asarray(compositions, dtype=float))
    if not (0.0 < zero_pseudocount < 1.0):
        raise InputError(f"zero_pseudocount must be in (0, 1), got {zero_pseudocount}")
    arr = np.array(compositions.values)
    zeros = arr == 0.0
    if zeros.any():
        arr[zeros] = zero_pseudocount
        arr /= arr.sum(axis=1, keepdims=True)
    return np.log(arr)


def recover_constrained(beta, m1):
    """Map unconstrained coefficients back to the zero-sum scale."""
    beta = np.asarray(beta, dtype=float)
    m1 = np.asarray(m1, dtype=float)
    if beta.ndim != 1 or m1.ndim != 2 or m1.shape[1] != beta.shape[0]:
        raise InputError(
            f"incompatible shapes for back-projection: {m1.shape} vs {beta.shape}"
        )
    beta_tilde = m1 @ beta
    total = float(beta_tilde.sum())
    if not np.isfinite(total) or abs(total) > ZERO_SUM_TOL:
        raise NumericalError(f"back-projected coefficients sum to {total:.3e}, not 0")
    return beta_tilde


@dataclass(frozen=True)
class CompositionalDataset:
    """One observed dataset: ids, responses, compositions, plain covariates."""

    ids: tuple
    y: np.ndarray
    composition: CompositionMatrix
    covariates: np.ndarray

    def __post_init__(self):
        ids = tuple(str(s) for s in self.ids)
        if len(set(ids)) != len(ids):
            raise InputError("dataset ids must be unique")
        y = np.asarray(self.y, dtype=float)
        cov = _as_float_matrix(self.covariates, "covariate matrix") if np.size(self.covariates) else np.asarray(self.covariates, dtype=float).reshape(len(ids), -1)
        n = self.composition.rows
        if y.shape != (n,) or len(ids) != n or cov.shape[0] != n:
            raise InputError(
                f"dataset pieces disagree on n: ids={len(ids)}, y={y.shape}, "
                f"composition={n}, covariates={cov.shape}"
            )
        if not np.all(np.isfinite(y)):
            raise InputError("response vector contains non-finite entries")
        y.flags.writeable = False
        cov = np.ascontiguousarray(cov)
        cov.flags.writeable = False
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "covariates", cov)

    @property
    def n(self):
        return self.composition.rows


@dataclass(frozen=True)
class LogContrastDesign:
    """Design pieces consumed by the sampler.

    z:  row-wise log compositions, n x parts
    x1: projected log-contrast block, n x (parts-1)
    x2: plain covariates, n x p (p may be 0)
    y:  responses, length n
    """

    z: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        z = np.ascontiguousarray(self.z, dtype=float)
        x1 = np.ascontiguousarray(self.x1, dtype=float)
        x2 = np.ascontiguousarray(np.asarray(self.x2, dtype=float).reshape(z.shape[0], -1))
        y = np.asarray(self.y, dtype=float)
        n = z.shape[0]
        if x1.shape != (n, z.shape[1] - 1) or y.shape != (n,) or x2.shape[0] != n:
            raise InputError(
                f"design shapes disagree: z={z.shape}, x1={x1.shape}, "
                f"x2={x2.shape}, y={y.shape}"
            )
        for a in (z, x1, x2, y):
            a.flags.writeable = False
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "x1", x1)
        object.__setattr__(self, "x2", x2)
        object.__setattr__(self, "y", y)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def n_contrast(self):
        return self.x1.shape[1]

    @property
    def n_covariates(self):
        return self.x2.shape[1]


def build_design(dataset, projection=None, zero_pseudocount=DEFAULT_ZERO_PSEUDOCOUNT):
    """Assemble the sampler design from a dataset.

    Returns ``(design, projection)`` so callers can back-project coefficients.
    """
    if projection is None:
        projection = HelmertProjection.of_order(dataset.composition.parts)
    elif projection.parts != dataset.composition.parts:
        raise InputError(
            f"projection order {projection.parts} does not match "
            f"{dataset.composition.parts} composition parts"
        )
    z = log_transform(dataset.composition, zero_pseudocount)
    design = LogContrastDesign(z=z, x1=z @ projection.m1, x2=dataset.covariates, y=dataset.y)
    return design, projection
