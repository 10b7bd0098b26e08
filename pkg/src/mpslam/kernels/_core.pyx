# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled inner loops: association message passing and particle
reweighting. Mirrors ``_fallback`` exactly; see that module for contracts.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport atan2, exp, fmod, log, sqrt
from libc.stdlib cimport free, malloc

cnp.import_array()

cdef double REL_FLOOR = 1e-16
cdef double ABS_FLOOR = 1e-300
cdef double LOG_FLOOR = 1e-300
cdef double NN_FLOOR = 1e-24
cdef double PI = 3.141592653589793238462643383279502884
cdef double TWO_PI = 6.283185307179586476925286766559005768


cdef inline double _wrap(double a) noexcept nogil:
    cdef double w = fmod(a, TWO_PI)
    if w < 0.0:
        w += TWO_PI
    if w > PI:
        w -= TWO_PI
    return w


def da_messages(object beta_in, object xi_in, int max_iter=100000,
                double tol=1e-6, double damping=0.0):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] beta = \
        np.ascontiguousarray(beta_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xi = \
        np.ascontiguousarray(xi_in, dtype=np.float64)
    cdef int k_tracks = beta.shape[0]
    cdef int m_meas = beta.shape[1] - 1
    cdef cnp.ndarray[cnp.float64_t, ndim=2] nu = np.ones((m_meas, k_tracks))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] zeta = np.zeros((k_tracks, m_meas))
    if m_meas == 0 or k_tracks == 0:
        return nu, zeta, 0, True

    cdef cnp.ndarray[cnp.float64_t, ndim=1] prod = np.empty(m_meas)
    cdef int it = 0, k, m
    cdef double total, denom, colsum, d2, val, delta, floor_
    cdef bint converged = False
    for it in range(1, max_iter + 1):
        delta = 0.0
        for k in range(k_tracks):
            total = beta[k, 0]
            for m in range(m_meas):
                prod[m] = beta[k, m + 1] * nu[m, k]
                total += prod[m]
            floor_ = ABS_FLOOR + REL_FLOOR * total
            for m in range(m_meas):
                denom = total - prod[m]
                if denom < floor_:
                    denom = floor_
                zeta[k, m] = beta[k, m + 1] / denom
        for m in range(m_meas):
            colsum = xi[m]
            for k in range(k_tracks):
                colsum += zeta[k, m]
            floor_ = ABS_FLOOR + REL_FLOOR * colsum
            for k in range(k_tracks):
                d2 = colsum - zeta[k, m]
                if d2 < floor_:
                    d2 = floor_
                val = 1.0 / d2
                if damping > 0.0:
                    val = damping * nu[m, k] + (1.0 - damping) * val
                if val - nu[m, k] > delta:
                    delta = val - nu[m, k]
                elif nu[m, k] - val > delta:
                    delta = nu[m, k] - val
                nu[m, k] = val
        if delta < tol:
            converged = True
            break
    return nu, zeta, it, converged


def particle_log_weights(object states_in, object pts_in, object wm_in,
                         object wc_in, object direct_in, object pa_in,
                         object miss_in, object amp_in, object xi_in,
                         object z_in, object cz_in, int max_iter=100000,
                         double tol=1e-6):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] states = \
        np.ascontiguousarray(states_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=3] pts = \
        np.ascontiguousarray(pts_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] wm = \
        np.ascontiguousarray(wm_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] wc = \
        np.ascontiguousarray(wc_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] direct = \
        np.ascontiguousarray(direct_in, dtype=np.uint8)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] pa = \
        np.ascontiguousarray(pa_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] miss = \
        np.ascontiguousarray(miss_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] amp = \
        np.ascontiguousarray(amp_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xi = \
        np.ascontiguousarray(xi_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] z = \
        np.ascontiguousarray(z_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] cz = \
        np.ascontiguousarray(cz_in, dtype=np.float64)

    cdef int n = states.shape[0]
    cdef int k_tracks = pts.shape[0]
    cdef int n_sigma = pts.shape[1]
    cdef int m_meas = z.shape[0]
    if k_tracks == 0:
        return np.zeros(n)
    if m_meas == 0:
        return np.full(n, np.sum(np.log(np.maximum(miss, LOG_FLOOR))))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] logw = np.zeros(n)

    cdef double* y = <double*> malloc(
        (n_sigma * 3 + 3 * k_tracks * m_meas + m_meas) * sizeof(double))
    if y == NULL:
        raise MemoryError("kernel scratch allocation failed")
    cdef double* b = y + n_sigma * 3
    cdef double* nu = b + k_tracks * m_meas
    cdef double* zeta = nu + m_meas * k_tracks
    cdef double* prod = zeta + k_tracks * m_meas

    cdef int i, k, m, s, it
    cdef double px, py, kap, ox, oy, dx, dy, dist, aoa, aod
    cdef double nx, ny, nn, mx, my, proj, rx, ry
    cdef double mu0, mu1, mu2, d0, d1, d2, w
    cdef double a00, a01, a02, a11, a12, a22
    cdef double c00, c01, c02, c11, c12, c22, det, lognorm
    cdef double acc, i0, i1, i2, quad
    cdef double total, denom, colsum, d2m, val, delta, floor_
    try:
        with nogil:
            for i in range(n):
                px = states[i, 0]
                py = states[i, 1]
                kap = states[i, 4]
                for k in range(k_tracks):
                    for s in range(n_sigma):
                        ox = pts[k, s, 0]
                        oy = pts[k, s, 1]
                        dx = ox - px
                        dy = oy - py
                        dist = sqrt(dx * dx + dy * dy)
                        aoa = atan2(dy, dx) - kap
                        if direct[k]:
                            aod = atan2(py - oy, px - ox)
                        else:
                            nx = ox - pa[0]
                            ny = oy - pa[1]
                            nn = nx * nx + ny * ny
                            if nn < NN_FLOOR:
                                nn = NN_FLOOR
                            mx = 0.5 * (ox + pa[0])
                            my = 0.5 * (oy + pa[1])
                            proj = ((px - mx) * nx + (py - my) * ny) / nn
                            rx = px - 2.0 * proj * nx
                            ry = py - 2.0 * proj * ny
                            aod = atan2(ry - pa[1], rx - pa[0])
                        y[s * 3 + 0] = dist
                        y[s * 3 + 1] = aoa
                        y[s * 3 + 2] = aod
                    # Re-center angles around the first sigma point before
                    # forming the weighted moments.
                    for s in range(1, n_sigma):
                        y[s * 3 + 1] = y[1] + _wrap(y[s * 3 + 1] - y[1])
                        y[s * 3 + 2] = y[2] + _wrap(y[s * 3 + 2] - y[2])
                    mu0 = 0.0
                    mu1 = 0.0
                    mu2 = 0.0
                    for s in range(n_sigma):
                        mu0 += wm[s] * y[s * 3 + 0]
                        mu1 += wm[s] * y[s * 3 + 1]
                        mu2 += wm[s] * y[s * 3 + 2]
                    a00 = cz[0, 0]
                    a01 = cz[0, 1]
                    a02 = cz[0, 2]
                    a11 = cz[1, 1]
                    a12 = cz[1, 2]
                    a22 = cz[2, 2]
                    for s in range(n_sigma):
                        d0 = y[s * 3 + 0] - mu0
                        d1 = y[s * 3 + 1] - mu1
                        d2 = y[s * 3 + 2] - mu2
                        w = wc[s]
                        a00 += w * d0 * d0
                        a01 += w * d0 * d1
                        a02 += w * d0 * d2
                        a11 += w * d1 * d1
                        a12 += w * d1 * d2
                        a22 += w * d2 * d2
                    c00 = a11 * a22 - a12 * a12
                    c01 = a12 * a02 - a01 * a22
                    c02 = a01 * a12 - a11 * a02
                    c11 = a00 * a22 - a02 * a02
                    c12 = a01 * a02 - a00 * a12
                    c22 = a00 * a11 - a01 * a01
                    det = a00 * c00 + a01 * c01 + a02 * c02
                    lognorm = -0.5 * (3.0 * log(TWO_PI) + log(det))
                    for m in range(m_meas):
                        i0 = z[m, 0] - mu0
                        i1 = _wrap(z[m, 1] - mu1)
                        i2 = _wrap(z[m, 2] - mu2)
                        quad = (c00 * i0 * i0 + c11 * i1 * i1 + c22 * i2 * i2
                                + 2.0 * (c01 * i0 * i1 + c02 * i0 * i2
                                         + c12 * i1 * i2)) / det
                        b[k * m_meas + m] = amp[k] * exp(-0.5 * quad + lognorm)
                # Per-particle association messages, same scheme and floors
                # as da_messages.
                for m in range(m_meas):
                    for k in range(k_tracks):
                        nu[m * k_tracks + k] = 1.0
                for it in range(max_iter):
                    delta = 0.0
                    for k in range(k_tracks):
                        total = miss[k]
                        for m in range(m_meas):
                            prod[m] = b[k * m_meas + m] * nu[m * k_tracks + k]
                            total += prod[m]
                        floor_ = ABS_FLOOR + REL_FLOOR * total
                        for m in range(m_meas):
                            denom = total - prod[m]
                            if denom < floor_:
                                denom = floor_
                            zeta[k * m_meas + m] = b[k * m_meas + m] / denom
                    for m in range(m_meas):
                        colsum = xi[m]
                        for k in range(k_tracks):
                            colsum += zeta[k * m_meas + m]
                        floor_ = ABS_FLOOR + REL_FLOOR * colsum
                        for k in range(k_tracks):
                            d2m = colsum - zeta[k * m_meas + m]
                            if d2m < floor_:
                                d2m = floor_
                            val = 1.0 / d2m
                            if val - nu[m * k_tracks + k] > delta:
                                delta = val - nu[m * k_tracks + k]
                            elif nu[m * k_tracks + k] - val > delta:
                                delta = nu[m * k_tracks + k] - val
                            nu[m * k_tracks + k] = val
                    if delta < tol:
                        break
                for k in range(k_tracks):
                    acc = miss[k]
                    for m in range(m_meas):
                        acc += nu[m * k_tracks + k] * b[k * m_meas + m]
                    if acc < LOG_FLOOR:
                        acc = LOG_FLOOR
                    logw[i] += log(acc)
    finally:
        free(y)
    return logw
