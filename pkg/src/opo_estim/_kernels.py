"""Compiled whole-path loops.

These mirror the readable step functions in :mod:`opo_estim.filters` and
:mod:`opo_estim.sde` one-for-one (same update order, same hygiene rules) and
exist only for speed: a Monte Carlo trial is 1e5..1e6 steps for four
filters.  ``tests/test_kernels.py`` checks them against the step functions.

Covariances are advanced with the first-order linear-fractional step of the
Riccati equation (see :func:`opo_estim.filters.riccati_step`); means with
an Euler step using the pre-step gain.

Conventions: path arrays have one row per grid point ``t_k = k dt``; a belief
row ``k`` is the estimate at ``t_k`` *before* consuming increment ``dy[k]``.
"""

import numpy as np
from numba import njit

CLIP_TOL = 1e-9


@njit(cache=True)
def _clip_sym2(v00, v01, v11):
    """Clip negative eigenvalues of a symmetric 2x2 matrix; returns (v00, v01, v11, clipped)."""
    half_tr = 0.5 * (v00 + v11)
    rad = np.sqrt(0.25 * (v00 - v11) ** 2 + v01 * v01)
    lam_min = half_tr - rad
    if not lam_min < -CLIP_TOL:
        return v00, v01, v11, False
    lam_max = half_tr + rad
    if lam_max <= 0.0:
        return 0.0, 0.0, 0.0, True
    # eigenvector of lam_max
    if abs(v01) > 0.0:
        e0, e1 = v01, lam_max - v00
    elif v00 >= v11:
        e0, e1 = 1.0, 0.0
    else:
        e0, e1 = 0.0, 1.0
    nrm = np.sqrt(e0 * e0 + e1 * e1)
    e0 /= nrm
    e1 /= nrm
    return lam_max * e0 * e0, lam_max * e0 * e1, lam_max * e1 * e1, True


@njit(cache=True)
def _clip_sym3(v):
    """In-place eigenvalue clipping of a symmetric 3x3 matrix; cheap minor test first."""
    scale = CLIP_TOL * (1.0 + abs(v[0, 0] + v[1, 1] + v[2, 2]))
    d0, d1, d2 = v[0, 0], v[1, 1], v[2, 2]
    m01 = d0 * d1 - v[0, 1] * v[1, 0]
    m02 = d0 * d2 - v[0, 2] * v[2, 0]
    m12 = d1 * d2 - v[1, 2] * v[2, 1]
    det = (
        d0 * m12
        - v[0, 1] * (v[1, 0] * d2 - v[1, 2] * v[2, 0])
        + v[0, 2] * (v[1, 0] * v[2, 1] - d1 * v[2, 0])
    )
    if (d0 >= -scale and d1 >= -scale and d2 >= -scale and m01 >= -scale
            and m02 >= -scale and m12 >= -scale and det >= -scale):
        return False
    lam, vec = np.linalg.eigh(v)
    if lam[0] >= -CLIP_TOL:
        return False
    for i in range(3):
        if lam[i] < 0.0:
            lam[i] = 0.0
    for i in range(3):
        for j in range(3):
            s = 0.0
            for r in range(3):
                s += vec[i, r] * lam[r] * vec[j, r]
            v[i, j] = s
    return True


@njit(cache=True)
def _inv3(a, out):
    """Inverse of a 3x3 matrix by cofactors, written into ``out``."""
    c00 = a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1]
    c01 = a[1, 2] * a[2, 0] - a[1, 0] * a[2, 2]
    c02 = a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0]
    det = a[0, 0] * c00 + a[0, 1] * c01 + a[0, 2] * c02
    out[0, 0] = c00 / det
    out[1, 0] = c01 / det
    out[2, 0] = c02 / det
    out[0, 1] = (a[0, 2] * a[2, 1] - a[0, 1] * a[2, 2]) / det
    out[1, 1] = (a[0, 0] * a[2, 2] - a[0, 2] * a[2, 0]) / det
    out[2, 1] = (a[0, 1] * a[2, 0] - a[0, 0] * a[2, 1]) / det
    out[0, 2] = (a[0, 1] * a[1, 2] - a[0, 2] * a[1, 1]) / det
    out[1, 2] = (a[0, 2] * a[1, 0] - a[0, 0] * a[1, 2]) / det
    out[2, 2] = (a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]) / det


@njit(cache=True)
def ou_path(eps0, mu, c, g, dt, xi):
    """Euler-Maruyama path of ``d eps = mu (eps - c) dt + g dW`` with ``len(xi) + 1`` points."""
    n = xi.shape[0] + 1
    out = np.empty(n)
    out[0] = eps0
    sq = np.sqrt(dt)
    for k in range(n - 1):
        e = out[k]
        out[k + 1] = e + mu * (e - c) * dt + g * sq * xi[k]
    return out


@njit(cache=True)
def latent_path(eps, gamma, x0, b, c, m, dv, dt):
    """Latent quadratures and measurement increments driven by shared noise ``dv`` (n, 6)."""
    n = eps.shape[0]
    k_ch = c.shape[0]
    nv = b.shape[1]
    x = np.empty((n, 2))
    dy = np.empty((n, k_ch))
    q, p = x0[0], x0[1]
    for k in range(n):
        x[k, 0] = q
        x[k, 1] = p
        for j in range(k_ch):
            s = (c[j, 0] * q + c[j, 1] * p) * dt
            for l in range(nv):
                s += m[j, l] * dv[k, l]
            dy[k, j] = s
        e = eps[k]
        qn = q + (e - gamma) * q * dt
        pn = p + (-e - gamma) * p * dt
        for l in range(nv):
            qn += b[0, l] * dv[k, l]
            pn += b[1, l] * dv[k, l]
        q, p = qn, pn
    return x, dy


@njit(cache=True)
def riccati_aux(c, gt, r_inv, d):
    """``(Gamma^T R^-1 C, D - Gamma^T R^-1 Gamma, C^T R^-1 C)`` for the Riccati step."""
    k_ch = c.shape[0]
    lc = np.zeros((2, 2))
    dbar = d.copy()
    smat = np.zeros((2, 2))
    for i in range(2):
        for l in range(k_ch):
            for j in range(k_ch):
                gr = gt[i, l] * r_inv[l, j]
                for col in range(2):
                    lc[i, col] += gr * c[j, col]
                    dbar[i, col] -= gr * gt[col, j]
                    smat[i, col] += c[l, i] * r_inv[l, j] * c[j, col]
    return lc, dbar, smat


@njit(cache=True)
def _kb_update(mean, v, e, gamma, c, gt, r_inv, lc, dbar, smat, dy_k, dt, s, kg, w):
    """One Kalman-Bucy step on (mean, v) in place; v is a 2x2 array. Returns clipped flag."""
    k_ch = c.shape[0]
    m0, m1 = mean[0], mean[1]
    v00, v01, v11 = v[0, 0], v[0, 1], v[1, 1]
    a0 = e - gamma
    a1 = -e - gamma
    for j in range(k_ch):
        w[j] = dy_k[j] - (c[j, 0] * m0 + c[j, 1] * m1) * dt
        s[0, j] = v00 * c[j, 0] + v01 * c[j, 1] + gt[0, j]
        s[1, j] = v01 * c[j, 0] + v11 * c[j, 1] + gt[1, j]
    for i in range(2):
        for j in range(k_ch):
            acc = 0.0
            for l in range(k_ch):
                acc += s[i, l] * r_inv[l, j]
            kg[i, j] = acc
    dm0 = a0 * m0 * dt
    dm1 = a1 * m1 * dt
    for j in range(k_ch):
        dm0 += kg[0, j] * w[j]
        dm1 += kg[1, j] * w[j]
    # X = V + (Abar V + Dbar) dt,  Y = I + (S V - Abar^T) dt,  V' = X Y^-1
    b00 = a0 - lc[0, 0]
    b01 = -lc[0, 1]
    b10 = -lc[1, 0]
    b11 = a1 - lc[1, 1]
    x00 = v00 + (b00 * v00 + b01 * v01 + dbar[0, 0]) * dt
    x01 = v01 + (b00 * v01 + b01 * v11 + dbar[0, 1]) * dt
    x10 = v01 + (b10 * v00 + b11 * v01 + dbar[1, 0]) * dt
    x11 = v11 + (b10 * v01 + b11 * v11 + dbar[1, 1]) * dt
    y00 = 1.0 + (smat[0, 0] * v00 + smat[0, 1] * v01 - b00) * dt
    y01 = (smat[0, 0] * v01 + smat[0, 1] * v11 - b10) * dt
    y10 = (smat[1, 0] * v00 + smat[1, 1] * v01 - b01) * dt
    y11 = 1.0 + (smat[1, 0] * v01 + smat[1, 1] * v11 - b11) * dt
    det = y00 * y11 - y01 * y10
    i00 = y11 / det
    i01 = -y01 / det
    i10 = -y10 / det
    i11 = y00 / det
    n00 = x00 * i00 + x01 * i10
    n01 = x00 * i01 + x01 * i11
    n10 = x10 * i00 + x11 * i10
    n11 = x10 * i01 + x11 * i11
    n00, n01, n11, clipped = _clip_sym2(n00, 0.5 * (n01 + n10), n11)
    mean[0] = m0 + dm0
    mean[1] = m1 + dm1
    v[0, 0] = n00
    v[0, 1] = n01
    v[1, 0] = n01
    v[1, 1] = n11
    return clipped


@njit(cache=True)
def kalman_bucy_path(eps, gamma, c, gt, r_inv, d, dy, mean0, v0, dt):
    """Kalman-Bucy filter with drift ``A(eps[k])`` at step ``k``."""
    n = dy.shape[0]
    k_ch = c.shape[0]
    means = np.empty((n, 2))
    covs = np.empty((n, 2, 2))
    mean = mean0.copy()
    v = v0.copy()
    s = np.empty((2, k_ch))
    kg = np.empty((2, k_ch))
    w = np.empty(k_ch)
    lc, dbar, smat = riccati_aux(c, gt, r_inv, d)
    n_clip = 0
    for k in range(n):
        means[k] = mean
        covs[k] = v
        if _kb_update(mean, v, eps[k], gamma, c, gt, r_inv, lc, dbar, smat, dy[k], dt, s, kg, w):
            n_clip += 1
    return means, covs, n_clip


@njit(cache=True)
def dual_kf_path(gamma, mu, g, c_level, c, gt, r_inv, d, dy, mean0, v0, eps0, var0, dt):
    """Dual KF: state KB filter at ``A(eps_hat)`` plus scalar pump filter, parallel commit."""
    n = dy.shape[0]
    k_ch = c.shape[0]
    means = np.empty((n, 2))
    covs = np.empty((n, 2, 2))
    eps_hat = np.empty(n)
    eps_var = np.empty(n)
    mean = mean0.copy()
    v = v0.copy()
    e = eps0
    ve = var0
    s = np.empty((2, k_ch))
    kg = np.empty((2, k_ch))
    w = np.empty(k_ch)
    c_eps = np.empty(k_ch)
    lc, dbar, smat = riccati_aux(c, gt, r_inv, d)
    n_clip = 0
    for k in range(n):
        means[k] = mean
        covs[k] = v
        eps_hat[k] = e
        eps_var[k] = ve
        # pump filter quantities from the pre-update state mean
        for j in range(k_ch):
            c_eps[j] = c[j, 0] * mean[0] - c[j, 1] * mean[1]
        de = mu * (e - c_level) * dt
        krk = 0.0
        for j in range(k_ch):
            innov = dy[k, j] - (c[j, 0] * mean[0] + c[j, 1] * mean[1]) * dt
            gain = 0.0
            for l in range(k_ch):
                gain += ve * c_eps[l] * r_inv[l, j]
            de += gain * innov
            krk += gain * c_eps[j] * ve
        if _kb_update(mean, v, e, gamma, c, gt, r_inv, lc, dbar, smat, dy[k], dt, s, kg, w):
            n_clip += 1
        e = e + de
        ve = ve + (2.0 * mu * ve + g * g - krk) * dt
        if ve < -CLIP_TOL:
            ve = 0.0
            n_clip += 1
    return means, covs, eps_hat, eps_var, n_clip


@njit(cache=True)
def joint_ekf_path(gamma, mu, g, c_level, c, gt, r_inv, d, dy, z0, v0, dt):
    """Joint EKF on ``z = (q, p, eps - c)``."""
    n = dy.shape[0]
    k_ch = c.shape[0]
    zs = np.empty((n, 3))
    covs = np.empty((n, 3, 3))
    z = z0.copy()
    v = v0.copy()
    jac = np.zeros((3, 3))
    s = np.empty((3, k_ch))
    kg = np.empty((3, k_ch))
    w = np.empty(k_ch)
    vn = np.empty((3, 3))
    abar = np.empty((3, 3))
    xm = np.empty((3, 3))
    ym = np.empty((3, 3))
    yi = np.empty((3, 3))
    lc2, dbar2, smat2 = riccati_aux(c, gt, r_inv, d)
    dbar = np.zeros((3, 3))
    smat = np.zeros((3, 3))
    lc = np.zeros((3, 3))
    dbar[:2, :2] = dbar2
    dbar[2, 2] = g * g
    smat[:2, :2] = smat2
    lc[:2, :2] = lc2
    n_clip = 0
    for k in range(n):
        zs[k] = z
        covs[k] = v
        e = z[2] + c_level
        jac[0, 0] = e - gamma
        jac[1, 1] = -e - gamma
        jac[2, 2] = mu
        jac[0, 2] = z[0]
        jac[1, 2] = -z[1]
        for j in range(k_ch):
            w[j] = dy[k, j] - (c[j, 0] * z[0] + c[j, 1] * z[1]) * dt
            for i in range(3):
                acc = v[i, 0] * c[j, 0] + v[i, 1] * c[j, 1]
                if i < 2:
                    acc += gt[i, j]
                s[i, j] = acc
        for i in range(3):
            for j in range(k_ch):
                acc = 0.0
                for l in range(k_ch):
                    acc += s[i, l] * r_inv[l, j]
                kg[i, j] = acc
        z0n = z[0] + (e - gamma) * z[0] * dt
        z1n = z[1] + (-e - gamma) * z[1] * dt
        z2n = z[2] + mu * z[2] * dt
        for j in range(k_ch):
            z0n += kg[0, j] * w[j]
            z1n += kg[1, j] * w[j]
            z2n += kg[2, j] * w[j]
        for i in range(3):
            for l in range(3):
                abar[i, l] = jac[i, l] - lc[i, l]
        for i in range(3):
            for l in range(3):
                xa = 0.0
                ya = 0.0
                for r in range(3):
                    xa += abar[i, r] * v[r, l]
                    ya += smat[i, r] * v[r, l]
                xm[i, l] = v[i, l] + (xa + dbar[i, l]) * dt
                ym[i, l] = (ya - abar[l, i]) * dt
            ym[i, i] += 1.0
        _inv3(ym, yi)
        for i in range(3):
            for l in range(3):
                acc = 0.0
                for r in range(3):
                    acc += xm[i, r] * yi[r, l]
                vn[i, l] = acc
        for i in range(3):
            for l in range(3):
                v[i, l] = 0.5 * (vn[i, l] + vn[l, i])
        if not (np.isfinite(v).all() and np.isfinite(z0n) and np.isfinite(z1n)
                and np.isfinite(z2n)):
            # diverged: leave the remainder non-finite for the harness to report
            zs[k + 1:] = np.nan
            covs[k + 1:] = np.nan
            break
        if _clip_sym3(v):
            n_clip += 1
        z[0] = z0n
        z[1] = z1n
        z[2] = z2n
    return zs, covs, n_clip
