"""JIT-compiled adaptive Metropolis-within-Gibbs chain runner.

One chain = sequential scalar random-walk Metropolis updates on every
coefficient, every latent-effect entry, each log precision, and the log
dispersion, with per-site Robbins-Monro scale adaptation during burn-in only.
Each proper random-effect block additionally gets a joint level-shift move
against the intercept (likelihood-invariant, accepted on the prior ratio),
which removes the slow-mixing level redundancy.

The per-row log-likelihood kernel and the linear predictors are cached and
updated incrementally; caches are refreshed periodically to bound float
drift.  The observation family is dispatched as a compile-time literal and
every sweep lives in its own small compiled function so the hot loops stay
register-allocated.  The reference implementations in ``likelihoods`` and
``effects`` are the source of truth; tests assert this module agrees with
them.

Family codes: 0 poisson, 1 negbin, 2 binomial, 3 beta, 4 multinomial.
Effect codes: 0 none, 1 structured, 2 unstructured.
Trend codes: 0 rw1, 1 ar1.
"""

import math

import numpy as np
from numba import literally, njit

FAM = {"poisson": 0, "negbin": 1, "binomial": 2, "beta": 3, "multinomial": 4}
EFF = {"none": 0, "structured": 1, "unstructured": 2}
TREND = {"rw1": 0, "ar1": 1}

STATUS_OK = 0
STATUS_NONFINITE_START = 1

_SCALE_MIN = math.exp(-12.0)
_SCALE_MAX = math.exp(6.0)


@njit(inline="always")
def _krow(family, e1, e2, i, y, trials, logr, log1r, ymat, ntot, phi):
    """Per-row log-likelihood kernel, omitting terms constant in (eta, phi).

    Omitted per family: poisson/negbin -lgamma(y+1); negbin additionally
    lgamma(y+phi)-lgamma(phi) (tracked separately since it moves with phi);
    binomial the binomial coefficient; beta +lgamma(phi) (tracked
    separately); multinomial the factorial terms.
    """
    if family == 0:
        if e1 > 700.0:
            return -np.inf
        return y[i] * e1 - math.exp(e1)
    if family == 1:
        if e1 >= 0.0:
            return -np.inf
        return y[i] * e1 + phi * math.log(-math.expm1(e1))
    if family == 2:
        if e1 > 0.0:
            lse = e1 + math.log1p(math.exp(-e1))
        else:
            lse = math.log1p(math.exp(e1))
        return y[i] * e1 - trials[i] * lse
    if family == 3:
        if e1 >= 0.0:
            mu = 1.0 / (1.0 + math.exp(-e1))
        else:
            ex = math.exp(e1)
            mu = ex / (1.0 + ex)
        a = mu * phi
        b = phi - a
        if a <= 0.0 or b <= 0.0:
            return -np.inf
        return (a - 1.0) * logr[i] + (b - 1.0) * log1r[i] \
            - math.lgamma(a) - math.lgamma(b)
    mx = 0.0
    if e1 > mx:
        mx = e1
    if e2 > mx:
        mx = e2
    lse = mx + math.log(math.exp(-mx) + math.exp(e1 - mx) + math.exp(e2 - mx))
    return ymat[i, 0] * e1 + ymat[i, 1] * e2 - ntot[i] * lse


@njit
def _disp_offset(family, y, n_rows, phi):
    """Kernel terms that depend on phi alone (given the data)."""
    if family == 1:
        s = 0.0
        for i in range(n_rows):
            s += math.lgamma(y[i] + phi)
        return s - n_rows * math.lgamma(phi)
    if family == 3:
        return n_rows * math.lgamma(phi)
    return 0.0


@njit
def _recompute_eta(effects, X, offset, coefs, spatial, trend, cell,
                   area, period, J, T, eta1, eta2):
    N = J * T
    k = X.shape[1]
    Q = coefs.shape[0]
    for i in range(N):
        j = i // T
        t = i - j * T
        acc = offset[i]
        for c in range(k):
            acc += X[i, c] * coefs[0, c]
        if effects == 1:
            acc += spatial[j] + trend[t] + cell[i]
        elif effects == 2:
            acc += area[0, j] + period[0, t]
        eta1[i] = acc
        if Q == 2:
            acc2 = offset[i]
            for c in range(k):
                acc2 += X[i, c] * coefs[1, c]
            if effects == 2:
                acc2 += area[1, j] + period[1, t]
            eta2[i] = acc2
        else:
            eta2[i] = 0.0


@njit
def _recompute_llv(family, eta1, eta2, y, trials, logr, log1r, ymat, ntot,
                   phi, llv):
    s = 0.0
    for i in range(llv.shape[0]):
        kv = _krow(family, eta1[i], eta2[i], i, y, trials, logr, log1r,
                   ymat, ntot, phi)
        llv[i] = kv
        s += kv
    return s


@njit
def _adapt(scales, accepts, window, window_index, target):
    """Robbins-Monro multiplicative step on the per-site proposal scales."""
    delta = 1.0 / math.sqrt(window_index)
    if delta > 0.25:
        delta = 0.25
    flat_sc = scales.reshape(-1)
    flat_acc = accepts.reshape(-1)
    for s in range(flat_sc.shape[0]):
        rate = flat_acc[s] / window
        v = flat_sc[s] * math.exp(delta * (rate - target))
        if v < _SCALE_MIN:
            v = _SCALE_MIN
        elif v > _SCALE_MAX:
            v = _SCALE_MAX
        flat_sc[s] = v
        flat_acc[s] = 0.0


@njit
def _sweep_coefs(family, q, X, eta_q, eta_other, coefs, sc, acc, zbuf, ubuf,
                 site0, llv, scratch, ll_sum, coef_var, prior_only,
                 y, trials, logr, log1r, ymat, ntot, phi):
    """One pass of scalar updates over the coefficients of predictor q.

    ``eta_q`` is the predictor that moves; for the composition family the
    kernel receives (employed, unemployed) predictors in fixed order, so the
    caller passes moving-first for q == 0 and moving-second otherwise.
    """
    N = eta_q.shape[0]
    k = X.shape[1]
    site = site0
    for c in range(k):
        step = sc[q, c] * zbuf[site]
        lu = math.log(ubuf[site])
        site += 1
        old = coefs[q, c]
        new = old + step
        dprior = -(new * new - old * old) / (2.0 * coef_var)
        s_new = 0.0
        dll = 0.0
        if not prior_only:
            if q == 0:
                for i in range(N):
                    kv = _krow(family, eta_q[i] + step * X[i, c], eta_other[i],
                               i, y, trials, logr, log1r, ymat, ntot, phi)
                    scratch[i] = kv
                    s_new += kv
            else:
                for i in range(N):
                    kv = _krow(family, eta_other[i], eta_q[i] + step * X[i, c],
                               i, y, trials, logr, log1r, ymat, ntot, phi)
                    scratch[i] = kv
                    s_new += kv
            dll = s_new - ll_sum
        if lu < dprior + dll:
            coefs[q, c] = new
            if not prior_only:
                ll_sum = s_new
                for i in range(N):
                    llv[i] = scratch[i]
            for i in range(N):
                eta_q[i] += step * X[i, c]
            acc[q, c] += 1.0
    return ll_sum


@njit
def _sweep_region_block(family, q, field, row, T, tau, gaussian, nbr_indptr,
                        nbr_indices, eta_q, eta_other, sc, acc, zbuf, ubuf,
                        site0, llv, scratch, ll_sum, prior_only,
                        y, trials, logr, log1r, ymat, ntot, phi):
    """Scalar updates of a per-region effect (spatial ICAR or iid area).

    ``field`` is the (J,) slice being updated; ``row`` gives each region's
    first design row (region-major layout, T consecutive rows per region).
    ``gaussian`` selects the iid prior; otherwise the ICAR pairwise one.
    """
    J = field.shape[0]
    site = site0
    for j in range(J):
        step = sc[j] * zbuf[site]
        lu = math.log(ubuf[site])
        site += 1
        old = field[j]
        new = old + step
        if gaussian:
            dprior = -0.5 * tau * (new * new - old * old)
        else:
            snbr = 0.0
            deg = 0.0
            for p in range(nbr_indptr[j], nbr_indptr[j + 1]):
                snbr += field[nbr_indices[p]]
                deg += 1.0
            dprior = -0.5 * tau * (deg * (new * new - old * old)
                                   - 2.0 * (new - old) * snbr)
        base = row[j]
        dll = 0.0
        if not prior_only:
            if q == 0:
                for t in range(T):
                    i = base + t
                    kv = _krow(family, eta_q[i] + step, eta_other[i], i, y,
                               trials, logr, log1r, ymat, ntot, phi)
                    scratch[t] = kv
                    dll += kv - llv[i]
            else:
                for t in range(T):
                    i = base + t
                    kv = _krow(family, eta_other[i], eta_q[i] + step, i, y,
                               trials, logr, log1r, ymat, ntot, phi)
                    scratch[t] = kv
                    dll += kv - llv[i]
        if lu < dprior + dll:
            field[j] = new
            for t in range(T):
                i = base + t
                eta_q[i] += step
                if not prior_only:
                    llv[i] = scratch[t]
            ll_sum += dll
            acc[j] += 1.0
    return ll_sum


@njit
def _sweep_quarter_block(family, q, field, J, T, tau, kind, ar1_rho,
                         eta_q, eta_other, sc, acc, zbuf, ubuf, site0,
                         llv, scratch, ll_sum, prior_only,
                         y, trials, logr, log1r, ymat, ntot, phi):
    """Scalar updates of a per-quarter effect.

    ``kind``: 0 random walk, 1 AR(1) with fixed rho, 2 iid (period effect).
    Rows for quarter t are t, t + T, ..., t + (J-1) T.
    """
    site = site0
    for t in range(T):
        step = sc[t] * zbuf[site]
        lu = math.log(ubuf[site])
        site += 1
        old = field[t]
        new = old + step
        dq = 0.0
        if kind == 0:
            if t > 0:
                dq += (new - field[t - 1]) ** 2 - (old - field[t - 1]) ** 2
            if t < T - 1:
                dq += (field[t + 1] - new) ** 2 - (field[t + 1] - old) ** 2
        elif kind == 1:
            if t == 0:
                dq += (1.0 - ar1_rho * ar1_rho) * (new * new - old * old)
            else:
                dq += ((new - ar1_rho * field[t - 1]) ** 2
                       - (old - ar1_rho * field[t - 1]) ** 2)
            if t < T - 1:
                dq += ((field[t + 1] - ar1_rho * new) ** 2
                       - (field[t + 1] - ar1_rho * old) ** 2)
        else:
            dq += new * new - old * old
        dprior = -0.5 * tau * dq
        dll = 0.0
        if not prior_only:
            if q == 0:
                for j in range(J):
                    i = j * T + t
                    kv = _krow(family, eta_q[i] + step, eta_other[i], i, y,
                               trials, logr, log1r, ymat, ntot, phi)
                    scratch[j] = kv
                    dll += kv - llv[i]
            else:
                for j in range(J):
                    i = j * T + t
                    kv = _krow(family, eta_other[i], eta_q[i] + step, i, y,
                               trials, logr, log1r, ymat, ntot, phi)
                    scratch[j] = kv
                    dll += kv - llv[i]
        if lu < dprior + dll:
            field[t] = new
            for j in range(J):
                i = j * T + t
                eta_q[i] += step
                if not prior_only:
                    llv[i] = scratch[j]
            ll_sum += dll
            acc[t] += 1.0
    return ll_sum


@njit
def _sweep_cell(family, cell, tau, eta1, eta2, sc, acc, zbuf, ubuf, site0,
                llv, ll_sum, prior_only, y, trials, logr, log1r, ymat, ntot,
                phi):
    """Scalar updates of the iid cell-level effect, one site per row."""
    N = cell.shape[0]
    site = site0
    for i in range(N):
        step = sc[i] * zbuf[site]
        lu = math.log(ubuf[site])
        site += 1
        old = cell[i]
        new = old + step
        dprior = -0.5 * tau * (new * new - old * old)
        dll = 0.0
        kv = 0.0
        if not prior_only:
            kv = _krow(family, eta1[i] + step, eta2[i], i, y, trials,
                       logr, log1r, ymat, ntot, phi)
            dll = kv - llv[i]
        if lu < dprior + dll:
            cell[i] = new
            eta1[i] += step
            if not prior_only:
                llv[i] = kv
                ll_sum += dll
            acc[i] += 1.0
    return ll_sum


@njit
def _shift_move(field, coefs, q, tau, coef_var, sc, acc, slot, z, u):
    """Joint move: field += delta, intercept -= delta (likelihood-invariant)."""
    delta = sc[slot] * z
    n = field.shape[0]
    ssum = 0.0
    for i in range(n):
        ssum += field[i]
    alpha = coefs[q, 0]
    dpost = (-0.5 * tau * (2.0 * delta * ssum + n * delta * delta)
             - ((alpha - delta) ** 2 - alpha * alpha) / (2.0 * coef_var))
    if math.log(u) < dpost:
        for i in range(n):
            field[i] += delta
        coefs[q, 0] = alpha - delta
        acc[slot] += 1.0


@njit
def _shear_iid(field, shear, coefs, q, c, tau, coef_var, sc, acc, slot, z, u):
    """Joint move along the coefficient/field ridge for an iid-prior field.

    Proposes beta_qc += delta, field -= delta * shear, which leaves the
    linear predictor untouched; accepted on the prior ratio alone.
    """
    delta = sc[slot] * z
    dot = 0.0
    ssq = 0.0
    flat_f = field.reshape(-1)
    flat_s = shear.reshape(-1)
    for i in range(flat_f.shape[0]):
        dot += flat_f[i] * flat_s[i]
        ssq += flat_s[i] * flat_s[i]
    beta = coefs[q, c]
    dpost = (-0.5 * tau * (-2.0 * delta * dot + delta * delta * ssq)
             - ((beta + delta) ** 2 - beta * beta) / (2.0 * coef_var))
    if math.log(u) < dpost:
        for i in range(flat_f.shape[0]):
            flat_f[i] -= delta * flat_s[i]
        coefs[q, c] = beta + delta
        acc[slot] += 1.0


@njit
def _shear_icar(field, shear, coefs, c, tau, coef_var, nbr_indptr,
                nbr_indices, sc, acc, slot, z, u):
    """Coefficient/spatial-field shear; prior ratio over the ICAR pairwise form."""
    delta = sc[slot] * z
    dot = 0.0
    ssq = 0.0
    for j in range(field.shape[0]):
        for p in range(nbr_indptr[j], nbr_indptr[j + 1]):
            nb = nbr_indices[p]
            if nb > j:
                df = field[j] - field[nb]
                ds = shear[j] - shear[nb]
                dot += df * ds
                ssq += ds * ds
    beta = coefs[0, c]
    dpost = (-0.5 * tau * (-2.0 * delta * dot + delta * delta * ssq)
             - ((beta + delta) ** 2 - beta * beta) / (2.0 * coef_var))
    if math.log(u) < dpost:
        for j in range(field.shape[0]):
            field[j] -= delta * shear[j]
        coefs[0, c] = beta + delta
        acc[slot] += 1.0


@njit
def _shear_walk(field, shear, coefs, c, tau, coef_var, kind, rho,
                sc, acc, slot, z, u):
    """Coefficient/temporal-field shear under the walk or AR(1) prior."""
    delta = sc[slot] * z
    T = field.shape[0]
    dot = 0.0
    ssq = 0.0
    if kind == 0:
        for t in range(1, T):
            df = field[t] - field[t - 1]
            ds = shear[t] - shear[t - 1]
            dot += df * ds
            ssq += ds * ds
    else:
        w0 = 1.0 - rho * rho
        dot += w0 * field[0] * shear[0]
        ssq += w0 * shear[0] * shear[0]
        for t in range(1, T):
            df = field[t] - rho * field[t - 1]
            ds = shear[t] - rho * shear[t - 1]
            dot += df * ds
            ssq += ds * ds
    beta = coefs[0, c]
    dpost = (-0.5 * tau * (-2.0 * delta * dot + delta * delta * ssq)
             - ((beta + delta) ** 2 - beta * beta) / (2.0 * coef_var))
    if math.log(u) < dpost:
        for t in range(T):
            field[t] -= delta * shear[t]
        coefs[0, c] = beta + delta
        acc[slot] += 1.0


@njit
def _icar_quadform(field, nbr_indptr, nbr_indices):
    qf = 0.0
    for j in range(field.shape[0]):
        for p in range(nbr_indptr[j], nbr_indptr[j + 1]):
            nb = nbr_indices[p]
            if nb > j:
                d = field[j] - field[nb]
                qf += d * d
    return qf


@njit
def _sum_sq(field):
    s = 0.0
    flat = field.reshape(-1)
    for i in range(flat.shape[0]):
        s += flat[i] * flat[i]
    return s


@njit
def _update_log_prec(log_prec, p_idx, rank, qf, prec_shape, prec_rate,
                     sc, acc, z, u):
    old_lt = log_prec[p_idx]
    new_lt = old_lt + sc[p_idx] * z
    tau_old = math.exp(old_lt)
    tau_new = math.exp(new_lt)
    dpost = (0.5 * rank * (new_lt - old_lt)
             - 0.5 * qf * (tau_new - tau_old)
             + prec_shape * (new_lt - old_lt)
             - prec_rate * (tau_new - tau_old))
    if math.log(u) < dpost:
        log_prec[p_idx] = new_lt
        acc[p_idx] += 1.0


@njit(cache=True)
def run_chain(family, effects, trend_kind, ar1_rho,
              X, offset, J, T,
              y, trials, logr, log1r, ymat, ntot,
              nbr_indptr, nbr_indices, col_kind,
              coef_var, prec_shape, prec_rate, disp_shape, disp_rate,
              iterations, burn_in, thinning, adapt_window, target_accept,
              seed, prior_only, has_intercept,
              init_coefs, init_log_disp, const_total):
    literally(family)
    np.random.seed(seed)
    N = J * T
    k = X.shape[1]
    Q = init_coefs.shape[0]
    has_disp = (family == 1) or (family == 3)
    n_prec = 3 if effects == 1 else (2 if effects == 2 else 0)
    n_draws = (iterations - burn_in + thinning - 1) // thinning

    coefs = init_coefs.copy()
    spatial = np.zeros(J)
    trend = np.zeros(T)
    cell = np.zeros(N)
    area = np.zeros((Q, J))
    period = np.zeros((Q, T))
    log_prec = np.zeros(max(n_prec, 1))
    log_disp = init_log_disp
    phi = math.exp(log_disp) if has_disp else 1.0
    region_row = np.arange(J) * T

    eta1 = np.zeros(N)
    eta2 = np.zeros(N)
    llv = np.zeros(N)
    scratch = np.zeros(N)

    coef_draws = np.zeros((n_draws, Q, k))
    spatial_draws = np.zeros((n_draws, J if effects == 1 else 0))
    trend_draws = np.zeros((n_draws, T if effects == 1 else 0))
    cell_draws = np.zeros((n_draws, N if effects == 1 else 0))
    area_draws = np.zeros((n_draws, Q, J if effects == 2 else 0))
    period_draws = np.zeros((n_draws, Q, T if effects == 2 else 0))
    prec_draws = np.zeros((n_draws, n_prec))
    disp_draws = np.full(n_draws, np.nan)
    dev_draws = np.full(n_draws, np.nan)

    _recompute_eta(effects, X, offset, coefs, spatial, trend, cell,
                   area, period, J, T, eta1, eta2)
    ll_sum = 0.0
    disp_off = 0.0
    if not prior_only:
        ll_sum = _recompute_llv(family, eta1, eta2, y, trials, logr, log1r,
                                ymat, ntot, phi, llv)
        if has_disp:
            disp_off = _disp_offset(family, y, N, phi)
        if not np.isfinite(ll_sum):
            return (STATUS_NONFINITE_START, coef_draws, spatial_draws,
                    trend_draws, cell_draws, area_draws, period_draws,
                    prec_draws, disp_draws, dev_draws)

    sc_coef = np.full((Q, k), 0.1)
    sc_spatial = np.full(J, 0.3)
    sc_trend = np.full(T, 0.3)
    sc_cell = np.full(N, 0.3)
    sc_area = np.full((Q, J), 0.3)
    sc_period = np.full((Q, T), 0.3)
    sc_prec = np.ones(max(n_prec, 1))
    sc_disp = np.full(1, 0.5)
    acc_coef = np.zeros((Q, k))
    acc_spatial = np.zeros(J)
    acc_trend = np.zeros(T)
    acc_cell = np.zeros(N)
    acc_area = np.zeros((Q, J))
    acc_period = np.zeros((Q, T))
    acc_prec = np.zeros(max(n_prec, 1))
    acc_disp = np.zeros(1)

    if has_intercept and effects == 1:
        n_shift = 1
    elif has_intercept and effects == 2:
        n_shift = 2 * Q
    else:
        n_shift = 0
    sc_shift = np.full(max(n_shift, 1), 0.5)
    acc_shift = np.zeros(max(n_shift, 1))

    # per-covariate shear vectors over the matching effect's index set
    shear_region = np.zeros((k, J))
    shear_quarter = np.zeros((k, T))
    shear_cell = np.zeros((k, N))
    for c in range(k):
        if col_kind[c] == 1:
            for j in range(J):
                shear_region[c, j] = X[j * T, c]
        elif col_kind[c] == 2:
            for t in range(T):
                shear_quarter[c, t] = X[t, c]
        elif col_kind[c] == 3:
            for i in range(N):
                shear_cell[c, i] = X[i, c]
    n_shear = Q * k if effects != 0 else 0
    sc_shear = np.full(max(n_shear, 1), 0.5)
    acc_shear = np.zeros(max(n_shear, 1))
    n_ridge = 1 if (family == 1 and has_intercept) else 0
    sc_ridge = np.full(1, 0.5)
    acc_ridge = np.zeros(1)

    # one shared draw pool per iteration: a (normal, uniform) pair per site
    n_sites = Q * k + n_prec + 1 + n_shift + n_shear + n_ridge
    if effects == 1:
        n_sites += J + T + N
    elif effects == 2:
        n_sites += Q * (J + T)

    for it in range(iterations):
        adapting = it < burn_in
        zbuf = np.random.standard_normal(n_sites)
        ubuf = np.random.uniform(0.0, 1.0, n_sites)
        site = 0

        for q in range(Q):
            eta_q = eta1 if q == 0 else eta2
            eta_other = eta2 if q == 0 else eta1
            ll_sum = _sweep_coefs(family, q, X, eta_q, eta_other, coefs,
                                  sc_coef, acc_coef, zbuf, ubuf, site, llv,
                                  scratch, ll_sum, coef_var, prior_only,
                                  y, trials, logr, log1r, ymat, ntot, phi)
            site += k

        if effects == 1:
            ll_sum = _sweep_region_block(
                family, 0, spatial, region_row, T, math.exp(log_prec[0]),
                False, nbr_indptr, nbr_indices, eta1, eta2, sc_spatial,
                acc_spatial, zbuf, ubuf, site, llv, scratch, ll_sum,
                prior_only, y, trials, logr, log1r, ymat, ntot, phi)
            site += J
            ll_sum = _sweep_quarter_block(
                family, 0, trend, J, T, math.exp(log_prec[1]), trend_kind,
                ar1_rho, eta1, eta2, sc_trend, acc_trend, zbuf, ubuf, site,
                llv, scratch, ll_sum, prior_only, y, trials, logr, log1r,
                ymat, ntot, phi)
            site += T
            ll_sum = _sweep_cell(
                family, cell, math.exp(log_prec[2]), eta1, eta2, sc_cell,
                acc_cell, zbuf, ubuf, site, llv, ll_sum, prior_only,
                y, trials, logr, log1r, ymat, ntot, phi)
            site += N
        elif effects == 2:
            for q in range(Q):
                eta_q = eta1 if q == 0 else eta2
                eta_other = eta2 if q == 0 else eta1
                ll_sum = _sweep_region_block(
                    family, q, area[q], region_row, T, math.exp(log_prec[0]),
                    True, nbr_indptr, nbr_indices, eta_q, eta_other,
                    sc_area[q], acc_area[q], zbuf, ubuf, site, llv, scratch,
                    ll_sum, prior_only, y, trials, logr, log1r, ymat, ntot,
                    phi)
                site += J
                ll_sum = _sweep_quarter_block(
                    family, q, period[q], J, T, math.exp(log_prec[1]), 2,
                    ar1_rho, eta_q, eta_other, sc_period[q], acc_period[q],
                    zbuf, ubuf, site, llv, scratch, ll_sum, prior_only,
                    y, trials, logr, log1r, ymat, ntot, phi)
                site += T

        # ---- intercept/effect level-shift moves --------------------------
        if n_shift > 0:
            if effects == 1:
                _shift_move(cell, coefs, 0, math.exp(log_prec[2]), coef_var,
                            sc_shift, acc_shift, 0, zbuf[site], ubuf[site])
                site += 1
            else:
                for q in range(Q):
                    _shift_move(area[q], coefs, q, math.exp(log_prec[0]),
                                coef_var, sc_shift, acc_shift, 2 * q,
                                zbuf[site], ubuf[site])
                    site += 1
                    _shift_move(period[q], coefs, q, math.exp(log_prec[1]),
                                coef_var, sc_shift, acc_shift, 2 * q + 1,
                                zbuf[site], ubuf[site])
                    site += 1

        # ---- coefficient/field shear moves --------------------------------
        if n_shear > 0:
            for q in range(Q):
                for c in range(k):
                    kind = col_kind[c]
                    z = zbuf[site]
                    u = ubuf[site]
                    site += 1
                    slot = q * k + c
                    if kind == 0:
                        continue
                    if effects == 1:
                        if kind == 1:
                            _shear_icar(spatial, shear_region[c], coefs, c,
                                        math.exp(log_prec[0]), coef_var,
                                        nbr_indptr, nbr_indices, sc_shear,
                                        acc_shear, slot, z, u)
                        elif kind == 2:
                            _shear_walk(trend, shear_quarter[c], coefs, c,
                                        math.exp(log_prec[1]), coef_var,
                                        trend_kind, ar1_rho, sc_shear,
                                        acc_shear, slot, z, u)
                        else:
                            _shear_iid(cell, shear_cell[c], coefs, 0, c,
                                       math.exp(log_prec[2]), coef_var,
                                       sc_shear, acc_shear, slot, z, u)
                    else:
                        if kind == 1:
                            _shear_iid(area[q], shear_region[c], coefs, q, c,
                                       math.exp(log_prec[0]), coef_var,
                                       sc_shear, acc_shear, slot, z, u)
                        elif kind == 2:
                            _shear_iid(period[q], shear_quarter[c], coefs, q,
                                       c, math.exp(log_prec[1]), coef_var,
                                       sc_shear, acc_shear, slot, z, u)

        # ---- precisions ---------------------------------------------------
        if effects == 1:
            _update_log_prec(log_prec, 0, J - 1.0,
                             _icar_quadform(spatial, nbr_indptr, nbr_indices),
                             prec_shape, prec_rate, sc_prec, acc_prec,
                             zbuf[site], ubuf[site])
            site += 1
            if trend_kind == 0:
                qf = 0.0
                for t in range(1, T):
                    d = trend[t] - trend[t - 1]
                    qf += d * d
                rank = T - 1.0
            else:
                qf = (1.0 - ar1_rho * ar1_rho) * trend[0] * trend[0]
                for t in range(1, T):
                    d = trend[t] - ar1_rho * trend[t - 1]
                    qf += d * d
                rank = float(T)
            _update_log_prec(log_prec, 1, rank, qf, prec_shape, prec_rate,
                             sc_prec, acc_prec, zbuf[site], ubuf[site])
            site += 1
            _update_log_prec(log_prec, 2, float(N), _sum_sq(cell),
                             prec_shape, prec_rate, sc_prec, acc_prec,
                             zbuf[site], ubuf[site])
            site += 1
        elif effects == 2:
            _update_log_prec(log_prec, 0, float(Q * J), _sum_sq(area),
                             prec_shape, prec_rate, sc_prec, acc_prec,
                             zbuf[site], ubuf[site])
            site += 1
            _update_log_prec(log_prec, 1, float(Q * T), _sum_sq(period),
                             prec_shape, prec_rate, sc_prec, acc_prec,
                             zbuf[site], ubuf[site])
            site += 1

        # ---- dispersion ------------------------------------------------
        if has_disp:
            step = sc_disp[0] * zbuf[site]
            lu = math.log(ubuf[site])
            site += 1
            new_ld = log_disp + step
            phi_new = math.exp(new_ld)
            dprior = (disp_shape * (new_ld - log_disp)
                      - disp_rate * (phi_new - phi))
            dll = 0.0
            s_new = 0.0
            new_off = 0.0
            if not prior_only:
                s_new = _recompute_llv(family, eta1, eta2, y, trials, logr,
                                       log1r, ymat, ntot, phi_new, scratch)
                new_off = _disp_offset(family, y, N, phi_new)
                dll = (s_new + new_off) - (ll_sum + disp_off)
            if lu < dprior + dll:
                log_disp = new_ld
                phi = phi_new
                if not prior_only:
                    ll_sum = s_new
                    disp_off = new_off
                    for i in range(N):
                        llv[i] = scratch[i]
                acc_disp[0] += 1.0

        # ---- overdispersed-count intercept/dispersion ridge move ---------
        # mu = phi e^eta / (1 - e^eta) is nearly invariant along
        # (alpha + delta, log phi - delta) when e^eta is small, so a joint
        # proposal decorrelates the two; requires one full kernel pass.
        if family == 1 and has_intercept:
            delta = sc_ridge[0] * zbuf[site]
            lu = math.log(ubuf[site])
            site += 1
            new_ld = log_disp - delta
            phi_new = math.exp(new_ld)
            alpha = coefs[0, 0]
            new_alpha = alpha + delta
            dprior = (disp_shape * (new_ld - log_disp)
                      - disp_rate * (phi_new - phi)
                      - (new_alpha * new_alpha - alpha * alpha) / (2.0 * coef_var))
            dll = 0.0
            s_new = 0.0
            new_off = 0.0
            if not prior_only:
                s_new = 0.0
                for i in range(N):
                    kv = _krow(family, eta1[i] + delta, eta2[i], i, y, trials,
                               logr, log1r, ymat, ntot, phi_new)
                    scratch[i] = kv
                    s_new += kv
                new_off = _disp_offset(family, y, N, phi_new)
                dll = (s_new + new_off) - (ll_sum + disp_off)
            if lu < dprior + dll:
                coefs[0, 0] = new_alpha
                log_disp = new_ld
                phi = phi_new
                for i in range(N):
                    eta1[i] += delta
                if not prior_only:
                    ll_sum = s_new
                    disp_off = new_off
                    for i in range(N):
                        llv[i] = scratch[i]
                acc_ridge[0] += 1.0

        # ---- recenter intrinsic fields, absorb level into intercept -----
        if effects == 1 and has_intercept:
            c1 = 0.0
            for j in range(J):
                c1 += spatial[j]
            c1 /= J
            for j in range(J):
                spatial[j] -= c1
            c2 = 0.0
            if trend_kind == 0:
                for t in range(T):
                    c2 += trend[t]
                c2 /= T
                for t in range(T):
                    trend[t] -= c2
            coefs[0, 0] += c1 + c2

        # ---- adaptation --------------------------------------------------
        if adapting and (it + 1) % adapt_window == 0:
            wi = (it + 1) // adapt_window
            _adapt(sc_coef, acc_coef, adapt_window, wi, target_accept)
            if effects == 1:
                _adapt(sc_spatial, acc_spatial, adapt_window, wi, target_accept)
                _adapt(sc_trend, acc_trend, adapt_window, wi, target_accept)
                _adapt(sc_cell, acc_cell, adapt_window, wi, target_accept)
            elif effects == 2:
                _adapt(sc_area, acc_area, adapt_window, wi, target_accept)
                _adapt(sc_period, acc_period, adapt_window, wi, target_accept)
            if n_prec > 0:
                _adapt(sc_prec[:n_prec], acc_prec[:n_prec], adapt_window, wi,
                       target_accept)
            if n_shift > 0:
                _adapt(sc_shift[:n_shift], acc_shift[:n_shift], adapt_window,
                       wi, target_accept)
            if n_shear > 0:
                _adapt(sc_shear, acc_shear, adapt_window, wi, target_accept)
            if n_ridge > 0:
                _adapt(sc_ridge, acc_ridge, adapt_window, wi, target_accept)
            if has_disp:
                _adapt(sc_disp, acc_disp, adapt_window, wi, target_accept)

        # ---- cache refresh -------------------------------------------------
        if (it + 1) % 512 == 0:
            _recompute_eta(effects, X, offset, coefs, spatial, trend,
                           cell, area, period, J, T, eta1, eta2)
            if not prior_only:
                ll_sum = _recompute_llv(family, eta1, eta2, y, trials, logr,
                                        log1r, ymat, ntot, phi, llv)

        # ---- storage ---------------------------------------------------------
        if it >= burn_in and (it - burn_in) % thinning == 0:
            s = (it - burn_in) // thinning
            for q in range(Q):
                for c in range(k):
                    coef_draws[s, q, c] = coefs[q, c]
            if effects == 1:
                for j in range(J):
                    spatial_draws[s, j] = spatial[j]
                for t in range(T):
                    trend_draws[s, t] = trend[t]
                for i in range(N):
                    cell_draws[s, i] = cell[i]
            elif effects == 2:
                for q in range(Q):
                    for j in range(J):
                        area_draws[s, q, j] = area[q, j]
                    for t in range(T):
                        period_draws[s, q, t] = period[q, t]
            for p_idx in range(n_prec):
                prec_draws[s, p_idx] = math.exp(log_prec[p_idx])
            if has_disp:
                disp_draws[s] = math.exp(log_disp)
            if not prior_only:
                dev_draws[s] = -2.0 * (ll_sum + const_total + disp_off)

    return (STATUS_OK, coef_draws, spatial_draws, trend_draws, cell_draws,
            area_draws, period_draws, prec_draws, disp_draws, dev_draws)
