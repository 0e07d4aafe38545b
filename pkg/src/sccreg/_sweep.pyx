# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled Gibbs label sweep.

Bit-identical twin of ``sccreg._sweep_py.label_sweep``: same arithmetic, same
operation order, same RNG call sequence. The build disables floating-point
contraction so results match the pure kernel exactly. Keep edits synchronized
between the two files.
"""

from libc.math cimport INFINITY, exp, log, sqrt


def label_sweep(plan, double lam, const double[::1] resid, const double[::1] u,
                long[::1] z, long[::1] sizes, double[:, ::1] betas,
                double[::1] sigma2s, double[::1] lsig, long k_star,
                rng, double[::1] w, double[::1] cnt):
    """See the pure-Python twin for the contract."""
    cdef const double[:, ::1] x1 = plan.x1
    cdef const double[::1] a_quad = plan.a_quad
    cdef const double[::1] b_quad = plan.b_quad
    cdef const double[::1] c_quad = plan.c_quad
    cdef const double[::1] half_logdet = plan.half_logdet
    cdef const double[:, ::1] su0 = plan.su0
    cdef const double[:, ::1] sx1 = plan.sx1
    cdef const double[:, :, ::1] chol = plan.chol
    cdef const long[::1] indptr = plan.indptr
    cdef const long[::1] indices = plan.indices
    cdef const double[::1] log_vn = plan.log_vn
    cdef long n = plan.n
    cdef long q = plan.q
    cdef double gamma = plan.gamma
    cdef double log_gamma = plan.log_gamma
    cdef double b0 = plan.b0
    cdef double a1 = plan.a1
    cdef double t0q = plan.t0q
    cdef double lmarg_const = plan.lmarg_const
    cdef double llc = plan.loglik_const

    cdef long i, j, k, d, t, c, choice, e2
    cdef double r, m, e, wk, wmax, quad, b_birth, vratio, wnew, total, target
    cdef double g, s2_new, s, acc
    cdef double[::1] znv

    for i in range(n):
        c = z[i]
        sizes[c] -= 1
        if sizes[c] == 0:
            for k in range(c, k_star - 1):
                sizes[k] = sizes[k + 1]
                sigma2s[k] = sigma2s[k + 1]
                lsig[k] = lsig[k + 1]
                for d in range(q):
                    betas[k, d] = betas[k + 1, d]
            k_star -= 1
            for j in range(n):
                if z[j] > c:
                    z[j] -= 1
        for k in range(k_star):
            cnt[k] = 0.0
        for t in range(indptr[i], indptr[i + 1]):
            cnt[z[indices[t]]] += 1.0
        r = resid[i]
        wmax = -INFINITY
        for k in range(k_star):
            m = 0.0
            for d in range(q):
                m += x1[i, d] * betas[k, d]
            e = r - m
            wk = log(sizes[k] + gamma) + lam * cnt[k] + llc - 0.5 * lsig[k] - 0.5 * e * e / sigma2s[k]
            w[k] = wk
            if wk > wmax:
                wmax = wk
        quad = t0q + r * r - (a_quad[i] + 2.0 * r * b_quad[i] + r * r * c_quad[i])
        b_birth = b0 + 0.5 * quad
        if k_star == 0:
            vratio = 0.0
        else:
            vratio = log_vn[k_star + 1] - log_vn[k_star]
        wnew = log_gamma + vratio + lmarg_const + half_logdet[i] - a1 * log(b_birth)
        w[k_star] = wnew
        if wnew > wmax:
            wmax = wnew
        total = 0.0
        for k in range(k_star + 1):
            total += exp(w[k] - wmax)
            w[k] = total
        target = u[i] * total
        choice = k_star
        for k in range(k_star + 1):
            if w[k] > target:
                choice = k
                break
        if choice == k_star:
            g = rng.standard_gamma(a1)
            s2_new = b_birth / g
            znv = rng.standard_normal(q)
            s = sqrt(s2_new)
            for d in range(q):
                acc = su0[i, d] + r * sx1[i, d]
                for e2 in range(d + 1):
                    acc += s * chol[i, d, e2] * znv[e2]
                betas[k_star, d] = acc
            sigma2s[k_star] = s2_new
            lsig[k_star] = log(s2_new)
            sizes[k_star] = 1
            z[i] = k_star
            k_star += 1
        else:
            z[i] = choice
            sizes[choice] += 1
    return k_star
