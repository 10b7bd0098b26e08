"""Pure-numpy implementations of the inner-loop kernels.

Used when the compiled extension is unavailable or disabled. Both backends
implement the same contracts:

``da_messages(beta, xi, max_iter, tol, damping)``
    Iterate the bipartite association messages until the largest
    measurement-to-track message change drops below ``tol``. Returns
    (nu, zeta, iterations, converged) with nu of shape (M, K) and zeta of
    shape (K, M).

``particle_log_weights(states, pts, wm, wc, direct, pa, miss, amp, xi, z,
c_z, max_iter, tol)``
    Association-marginalized log-likelihood increment per particle. For
    particle i and track k the measurement-space moments (mu_ik, S_ik -
    c_z) come from pushing the object-position sigma points ``pts[k]``
    (weights ``wm``, ``wc``) through the measurement map at that particle's
    state, so each particle sees the object uncertainty from its own pose;
    angle outputs are re-centered around the first sigma point before the
    moments are formed. That yields a per-particle association table

        b_i[k, 0] = miss[k],  b_i[k, m] = amp[k] * N(z_m; mu_ik, S_ik)

    on which the same bipartite message iteration as ``da_messages`` runs
    (new-object weights ``xi``, per-particle convergence at ``tol``), and

        logw[i] = sum_k log(b_i[k, 0] + sum_m nu_i[m, k] * b_i[k, m]).
"""

from __future__ import annotations

import numpy as np

# Relative denominator floors keep degenerate tables (rows with a zero
# missed-detection weight) finite without breaking row-scale invariance.
_REL_FLOOR = 1e-16
_ABS_FLOOR = 1e-300
_LOG_FLOOR = 1e-300


def da_messages(beta, xi, max_iter=100000, tol=1e-6, damping=0.0):
    beta = np.asarray(beta, dtype=float)
    xi = np.asarray(xi, dtype=float)
    k_tracks = beta.shape[0]
    m_meas = beta.shape[1] - 1
    nu = np.ones((m_meas, k_tracks))
    zeta = np.zeros((k_tracks, m_meas))
    if m_meas == 0 or k_tracks == 0:
        return nu, zeta, 0, True
    b0 = beta[:, :1]
    bm = beta[:, 1:]
    converged = False
    iters = 0
    for iters in range(1, max_iter + 1):
        prod = bm * nu.T
        total = b0 + prod.sum(axis=1, keepdims=True)
        denom = total - prod
        np.maximum(denom, _ABS_FLOOR + _REL_FLOOR * total, out=denom)
        zeta = bm / denom
        colsum = xi + zeta.sum(axis=0)
        denom2 = colsum[:, None] - zeta.T
        np.maximum(denom2, _ABS_FLOOR + _REL_FLOOR * colsum[:, None], out=denom2)
        nu_new = 1.0 / denom2
        if damping > 0.0:
            nu_new = damping * nu + (1.0 - damping) * nu_new
        delta = float(np.max(np.abs(nu_new - nu)))
        nu = nu_new
        if delta < tol:
            converged = True
            break
    return nu, zeta, iters, converged


def _wrap(a):
    w = np.mod(a, 2.0 * np.pi)
    return np.where(w > np.pi, w - 2.0 * np.pi, w)


_NN_FLOOR = 1e-24  # squared wall-normal length; guards the mirror division


def _channel(pos, kappa, psi, pa, is_direct):
    """(dist, aoa, aod) of one object position seen from every particle."""
    diff = psi - pos
    dist = np.hypot(diff[:, 0], diff[:, 1])
    aoa = np.arctan2(diff[:, 1], diff[:, 0]) - kappa
    if is_direct:
        dep = pos - psi
    else:
        normal = psi - pa
        nn = max(float(normal @ normal), _NN_FLOOR)
        mid = 0.5 * (psi + pa)
        q = pos - mid
        proj = (q @ normal) / nn
        dep = pos - 2.0 * proj[:, None] * normal - pa
    aod = np.arctan2(dep[:, 1], dep[:, 0])
    return dist, aoa, aod


def particle_log_weights(states, pts, wm, wc, direct, pa, miss, amp, xi, z,
                         c_z, max_iter=100000, tol=1e-6):
    states = np.asarray(states, dtype=float)
    pts = np.asarray(pts, dtype=float)
    wm = np.asarray(wm, dtype=float)
    wc = np.asarray(wc, dtype=float)
    direct = np.asarray(direct, dtype=np.uint8)
    pa = np.asarray(pa, dtype=float)
    miss = np.asarray(miss, dtype=float)
    amp = np.asarray(amp, dtype=float)
    xi = np.asarray(xi, dtype=float)
    z = np.asarray(z, dtype=float)
    c_z = np.asarray(c_z, dtype=float)

    n = states.shape[0]
    k_tracks = pts.shape[0]
    n_sigma = pts.shape[1]
    m_meas = z.shape[0]
    if k_tracks == 0:
        return np.zeros(n)
    if m_meas == 0:
        return np.full(n, np.sum(np.log(np.maximum(miss, _LOG_FLOOR))))

    pos = states[:, 0:2]
    kappa = states[:, 4]
    b = np.empty((n, k_tracks, m_meas))
    for k in range(k_tracks):
        y = np.empty((n_sigma, n, 3))
        for s in range(n_sigma):
            y[s, :, 0], y[s, :, 1], y[s, :, 2] = _channel(
                pos, kappa, pts[k, s], pa, bool(direct[k])
            )
        # Re-center the angle outputs around the first sigma point so the
        # weighted moments stay consistent across the branch cut.
        for a in (1, 2):
            y[1:, :, a] = y[0, :, a] + _wrap(y[1:, :, a] - y[0, :, a])
        mean = np.einsum("s,sna->na", wm, y)
        dev = y - mean
        cov = np.einsum("s,sna,snb->nab", wc, dev, dev) + c_z
        # Closed-form 3x3 inverse through the adjugate; cov + c_z is PD.
        c00 = cov[:, 1, 1] * cov[:, 2, 2] - cov[:, 1, 2] * cov[:, 2, 1]
        c01 = cov[:, 1, 2] * cov[:, 2, 0] - cov[:, 1, 0] * cov[:, 2, 2]
        c02 = cov[:, 1, 0] * cov[:, 2, 1] - cov[:, 1, 1] * cov[:, 2, 0]
        det = cov[:, 0, 0] * c00 + cov[:, 0, 1] * c01 + cov[:, 0, 2] * c02
        c11 = cov[:, 0, 0] * cov[:, 2, 2] - cov[:, 0, 2] * cov[:, 2, 0]
        c12 = cov[:, 0, 1] * cov[:, 2, 0] - cov[:, 0, 0] * cov[:, 2, 1]
        c22 = cov[:, 0, 0] * cov[:, 1, 1] - cov[:, 0, 1] * cov[:, 1, 0]
        lognorm = -0.5 * (3.0 * np.log(2.0 * np.pi) + np.log(det))
        for m in range(m_meas):
            i0 = z[m, 0] - mean[:, 0]
            i1 = _wrap(z[m, 1] - mean[:, 1])
            i2 = _wrap(z[m, 2] - mean[:, 2])
            quad = (
                c00 * i0 * i0 + c11 * i1 * i1 + c22 * i2 * i2
                + 2.0 * (c01 * i0 * i1 + c02 * i0 * i2 + c12 * i1 * i2)
            ) / det
            with np.errstate(under="ignore"):
                b[:, k, m] = amp[k] * np.exp(-0.5 * quad + lognorm)

    # Per-particle message iteration; converged particles freeze while the
    # rest keep sweeping, mirroring an independent run per particle.
    nu = np.ones((n, m_meas, k_tracks))
    active = np.arange(n)
    it = 0
    while active.size and it < max_iter:
        it += 1
        bs = b[active]
        prod = bs * np.swapaxes(nu[active], 1, 2)
        total = miss[None, :, None] + prod.sum(axis=2, keepdims=True)
        denom = total - prod
        np.maximum(denom, _ABS_FLOOR + _REL_FLOOR * total, out=denom)
        zeta = bs / denom
        colsum = xi[None, :] + zeta.sum(axis=1)
        denom2 = colsum[:, :, None] - np.swapaxes(zeta, 1, 2)
        np.maximum(denom2, _ABS_FLOOR + _REL_FLOOR * colsum[:, :, None],
                   out=denom2)
        nu_new = 1.0 / denom2
        delta = np.max(np.abs(nu_new - nu[active]), axis=(1, 2))
        nu[active] = nu_new
        active = active[delta >= tol]

    like = miss[None, :] + np.einsum("nkm,nmk->nk", b, nu)
    return np.sum(np.log(np.maximum(like, _LOG_FLOOR)), axis=1)
