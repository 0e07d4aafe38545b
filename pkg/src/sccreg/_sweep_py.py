"""Pure-Python Gibbs label sweep.

Reference twin of the compiled kernel in _sweep.pyx: every floating-point
operation appears in the same order, so the two backends yield bit-identical
chains. Keep edits synchronized between the two files.
"""

from math import exp, inf, log, sqrt


def label_sweep(plan, lam, resid, u, z, sizes, betas, sigma2s, lsig, k_star, rng, w, cnt):
    """One full conditional update of every label, in ascending vertex order.

    Mutates z, sizes, betas, sigma2s and lsig in place (arrays sized to
    capacity n + 1 rows) and returns the new cluster count. ``resid`` holds
    y - X2 @ eta for the current eta, ``u`` one uniform draw per vertex.
    """
    lsts = plan.lists()
    x1 = lsts.x1
    a_quad = lsts.a_quad
    b_quad = lsts.b_quad
    c_quad = lsts.c_quad
    half_logdet = lsts.half_logdet
    su0 = lsts.su0
    sx1 = lsts.sx1
    chol = lsts.chol
    indptr = lsts.indptr
    indices = lsts.indices
    log_vn = lsts.log_vn
    n = plan.n
    q = plan.q
    gamma = plan.gamma
    log_gamma = plan.log_gamma
    b0 = plan.b0
    a1 = plan.a1
    t0q = plan.t0q
    lmarg_const = plan.lmarg_const
    llc = plan.loglik_const

    zl = z.tolist()
    res = resid.tolist()
    ul = u.tolist()
    sz = sizes[:k_star].tolist()
    bt = [row[:] for row in betas[:k_star].tolist()]
    s2 = sigma2s[:k_star].tolist()
    ls = lsig[:k_star].tolist()
    wl = [0.0] * (n + 2)
    ct = [0.0] * (n + 2)

    for i in range(n):
        c = zl[i]
        sz[c] -= 1
        if sz[c] == 0:
            del sz[c]
            del bt[c]
            del s2[c]
            del ls[c]
            k_star -= 1
            for j in range(n):
                if zl[j] > c:
                    zl[j] -= 1
        for k in range(k_star):
            ct[k] = 0.0
        for t in range(indptr[i], indptr[i + 1]):
            ct[zl[indices[t]]] += 1.0
        r = res[i]
        x1i = x1[i]
        wmax = -inf
        for k in range(k_star):
            bk = bt[k]
            m = 0.0
            for d in range(q):
                m += x1i[d] * bk[d]
            e = r - m
            wk = log(sz[k] + gamma) + lam * ct[k] + llc - 0.5 * ls[k] - 0.5 * e * e / s2[k]
            wl[k] = wk
            if wk > wmax:
                wmax = wk
        quad = t0q + r * r - (a_quad[i] + 2.0 * r * b_quad[i] + r * r * c_quad[i])
        b_birth = b0 + 0.5 * quad
        if k_star == 0:
            vratio = 0.0
        else:
            vratio = log_vn[k_star + 1] - log_vn[k_star]
        wnew = log_gamma + vratio + lmarg_const + half_logdet[i] - a1 * log(b_birth)
        wl[k_star] = wnew
        if wnew > wmax:
            wmax = wnew
        total = 0.0
        for k in range(k_star + 1):
            total += exp(wl[k] - wmax)
            wl[k] = total
        target = ul[i] * total
        choice = k_star
        for k in range(k_star + 1):
            if wl[k] > target:
                choice = k
                break
        if choice == k_star:
            g = float(rng.standard_gamma(a1))
            s2_new = b_birth / g
            zn = rng.standard_normal(q).tolist()
            s = sqrt(s2_new)
            row = [0.0] * q
            su0i = su0[i]
            sx1i = sx1[i]
            choli = chol[i]
            for d in range(q):
                acc = su0i[d] + r * sx1i[d]
                crow = choli[d]
                for e2 in range(d + 1):
                    acc += s * crow[e2] * zn[e2]
                row[d] = acc
            bt.append(row)
            s2.append(s2_new)
            ls.append(log(s2_new))
            sz.append(1)
            zl[i] = k_star
            k_star += 1
        else:
            zl[i] = choice
            sz[choice] += 1

    z[:] = zl
    sizes[:k_star] = sz
    for k in range(k_star):
        betas[k, :] = bt[k]
    sigma2s[:k_star] = s2
    lsig[:k_star] = ls
    return k_star
