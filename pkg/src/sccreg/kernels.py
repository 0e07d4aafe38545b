"""Label-sweep kernel selection and the per-chain precomputation bundle.

Two interchangeable kernels perform one full Gibbs sweep over the cluster
labels: a Cython extension (built at install time when a compiler is
available) and a pure-Python twin. Both follow the same arithmetic order and
the extension is compiled without floating-point contraction, so the two
produce bit-identical chains; tests assert exact agreement. Selection order:
the SCCREG_BACKEND environment variable ("compiled" or "python") if set,
otherwise the compiled kernel when importable.
"""

import os
from types import SimpleNamespace

import numpy as np

from .errors import InputError

try:
    from . import _sweep as _compiled
except ImportError:
    _compiled = None
from . import _sweep_py as _pure

_names = {"python": True, "compiled": _compiled is not None}


class SweepPlan:
    """Immutable per-chain arrays consumed by the sweep kernels.

    Holds the design block, graph structure (CSR), the log V_n table, and the
    per-observation constants of the single-observation marginal likelihood:
    with precision P_i = Sigma0^-1 + x1_i x1_i^T and Sigma_i = P_i^-1,

        a_quad[i] = u0' Sigma_i u0          (u0 = Sigma0^-1 tau0)
        b_quad[i] = x1_i' Sigma_i u0
        c_quad[i] = x1_i' Sigma_i x1_i
        half_logdet[i] = (log|Sigma_i| - log|Sigma0|) / 2
        su0[i] = Sigma_i u0,  sx1[i] = Sigma_i x1_i
        chol[i] = lower Cholesky factor of Sigma_i

    so the new-cluster log marginal for residual r is
    lmarg_const + half_logdet[i] - (a0 + 1/2) log(b0 + quad/2) with
    quad = t0q + r^2 - (a_quad[i] + 2 r b_quad[i] + r^2 c_quad[i]),
    and a newborn cluster draws its parameters from the NIG posterior
    (su0[i] + r sx1[i], Sigma_i, a0 + 1/2, b0 + quad/2).
    """

    __slots__ = (
        "n", "q", "x1", "a_quad", "b_quad", "c_quad", "half_logdet", "su0",
        "sx1", "chol", "indptr", "indices", "log_vn", "gamma", "log_gamma",
        "a0", "b0", "a1", "t0q", "lmarg_const", "loglik_const", "_lists",
    )

    def __init__(self, *, x1, a_quad, b_quad, c_quad, half_logdet, su0, sx1,
                 chol, indptr, indices, log_vn, gamma, a0, b0, t0q, lmarg_const):
        self.n, self.q = x1.shape
        self.x1 = np.ascontiguousarray(x1)
        self.a_quad = np.ascontiguousarray(a_quad)
        self.b_quad = np.ascontiguousarray(b_quad)
        self.c_quad = np.ascontiguousarray(c_quad)
        self.half_logdet = np.ascontiguousarray(half_logdet)
        self.su0 = np.ascontiguousarray(su0)
        self.sx1 = np.ascontiguousarray(sx1)
        self.chol = np.ascontiguousarray(chol)
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        self.log_vn = np.ascontiguousarray(log_vn)
        self.gamma = float(gamma)
        self.log_gamma = float(np.log(gamma))
        self.a0 = float(a0)
        self.b0 = float(b0)
        self.a1 = float(a0) + 0.5
        self.t0q = float(t0q)
        self.lmarg_const = float(lmarg_const)
        self.loglik_const = -0.5 * float(np.log(2.0 * np.pi))
        self._lists = None

    def lists(self):
        """Row-list mirror of the arrays, for the pure-Python kernel."""
        if self._lists is None:
            self._lists = SimpleNamespace(
                x1=[tuple(row) for row in self.x1.tolist()],
                a_quad=self.a_quad.tolist(),
                b_quad=self.b_quad.tolist(),
                c_quad=self.c_quad.tolist(),
                half_logdet=self.half_logdet.tolist(),
                su0=[tuple(row) for row in self.su0.tolist()],
                sx1=[tuple(row) for row in self.sx1.tolist()],
                chol=[[tuple(r) for r in m] for m in self.chol.tolist()],
                indptr=self.indptr.tolist(),
                indices=self.indices.tolist(),
                log_vn=self.log_vn.tolist(),
            )
        return self._lists


def available_backends():
    """Names of importable sweep kernels."""
    return tuple(name for name, ok in _names.items() if ok)


def _env_choice():
    choice = os.environ.get("SCCREG_BACKEND")
    if choice is None:
        return None
    if choice not in _names:
        raise InputError(f"SCCREG_BACKEND={choice!r}; expected 'compiled' or 'python'")
    if not _names[choice]:
        raise InputError(f"SCCREG_BACKEND={choice!r} but that kernel is not built")
    return choice

_active = _env_choice() or ("compiled" if _compiled is not None else "python")


def active_backend():
    return _active


def set_backend(name):
    """Select the sweep kernel globally (mainly for tests and benchmarks)."""
    global _active
    if name not in _names:
        raise InputError(f"unknown backend {name!r}; expected 'compiled' or 'python'")
    if not _names[name]:
        raise InputError(f"backend {name!r} is not built")
    _active = name


def get_sweep(backend=None):
    """The label-sweep callable for a backend (default: the active one)."""
    name = backend or _active
    if name == "compiled":
        if _compiled is None:
            raise InputError("compiled kernel is not built")
        return _compiled.label_sweep
    if name == "python":
        return _pure.label_sweep
    raise InputError(f"unknown backend {name!r}; expected 'compiled' or 'python'")
