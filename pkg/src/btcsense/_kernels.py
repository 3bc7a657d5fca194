"""Numba inner loops for the trajectory integrator.

Each trajectory's state/tangent pair is advanced through a whole block of
steps with its matrices resident in cache, which beats batched BLAS by a
large factor at these matrix sizes (d <= ~10).  The numpy step functions in
:mod:`btcsense.monitoring` implement the identical discrete scheme and remain
the reference path (single-trajectory records, twin filters, or when numba is
unavailable); both paths consume the per-trajectory random streams in the
same order, so they produce the same records up to floating-point roundoff.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        return wrap

    prange = range


@njit(cache=True, inline="always", fastmath=True)
def _matmul(a, b, out, d):
    for i in range(d):
        for j in range(d):
            s = 0.0 + 0.0j
            for l in range(d):
                s += a[i, l] * b[l, j]
            out[i, j] = s


@njit(cache=True, inline="always", fastmath=True)
def _matmul_bdag(a, b, out, d):
    # out = a @ b^dag
    for i in range(d):
        for j in range(d):
            s = 0.0 + 0.0j
            for l in range(d):
                s += a[i, l] * np.conj(b[j, l])
            out[i, j] = s


@njit(cache=True, parallel=True, fastmath=True)
def homodyne_block(pair, rnd, m0, c, g, drift_op, phase, sqrt_eta, dt, res_w):
    """Advance all trajectories through rnd.shape[1] homodyne steps."""
    n_b = pair.shape[1]
    n_k = rnd.shape[1]
    d = m0.shape[0]
    sq_dt = np.sqrt(dt)
    for b in prange(n_b):
        r = pair[0, b]
        t = pair[1, b]
        mm = np.empty((d, d), np.complex128)
        a1 = np.empty((d, d), np.complex128)
        a2 = np.empty((d, d), np.complex128)
        rn = np.empty((d, d), np.complex128)
        tn = np.empty((d, d), np.complex128)
        w = np.empty((d, d), np.complex128)
        for k in range(n_k):
            m_val = 0.0 + 0.0j
            for i in range(d):
                for l in range(d):
                    m_val += drift_op[i, l] * r[l, i]
            m_quad = 2.0 * (phase * m_val).real
            y = sqrt_eta * m_quad * dt + rnd[b, k] * sq_dt
            yc = sqrt_eta * phase * y
            for i in range(d):
                for j in range(d):
                    mm[i, j] = m0[i, j] + yc * c[i, j]

            _matmul(mm, r, a1, d)
            _matmul_bdag(a1, mm, rn, d)
            _matmul(mm, t, a1, d)
            _matmul_bdag(a1, mm, tn, d)
            if res_w > 0.0:
                _matmul(c, r, a1, d)
                _matmul_bdag(a1, c, a2, d)
                for i in range(d):
                    for j in range(d):
                        rn[i, j] += res_w * a2[i, j]
                _matmul(c, t, a1, d)
                _matmul_bdag(a1, c, a2, d)
                for i in range(d):
                    for j in range(d):
                        tn[i, j] += res_w * a2[i, j]
            _matmul(g, r, a1, d)
            _matmul_bdag(a1, mm, w, d)
            for i in range(d):
                for j in range(d):
                    tn[i, j] += w[i, j] + np.conj(w[j, i])

            tr = 0.0
            for i in range(d):
                tr += rn[i, i].real
            inv = 1.0 / tr
            for i in range(d):
                for j in range(d):
                    r[i, j] = rn[i, j] * inv
                    t[i, j] = tn[i, j] * inv
    return 0


@njit(cache=True, parallel=True, fastmath=True)
def photodetection_block(
    pair, rnd, m0, c, g, cdc_diag, nojump_op, eta, dt, res_w, n_jumps
):
    """Advance all trajectories through rnd.shape[1] photodetection steps.

    Returns the largest per-step jump probability seen (step-size guard)."""
    n_b = pair.shape[1]
    n_k = rnd.shape[1]
    d = m0.shape[0]
    q_max = 0.0
    for b in prange(n_b):
        r = pair[0, b]
        t = pair[1, b]
        a1 = np.empty((d, d), np.complex128)
        a2 = np.empty((d, d), np.complex128)
        rn = np.empty((d, d), np.complex128)
        tn = np.empty((d, d), np.complex128)
        w = np.empty((d, d), np.complex128)
        q_loc = 0.0
        for k in range(n_k):
            emission = 0.0
            for i in range(d):
                emission += cdc_diag[i] * r[i, i].real
            t_jump = eta * dt * emission
            t_stay = res_w * emission
            for i in range(d):
                for l in range(d):
                    t_stay += (nojump_op[i, l] * r[l, i]).real
            q = t_jump / (t_stay + t_jump)
            if q > q_loc:
                q_loc = q
            if rnd[b, k] < q:
                _matmul(c, r, a1, d)
                _matmul_bdag(a1, c, rn, d)
                _matmul(c, t, a1, d)
                _matmul_bdag(a1, c, tn, d)
                n_jumps[b] += 1
            else:
                _matmul(m0, r, a1, d)
                _matmul_bdag(a1, m0, rn, d)
                _matmul(m0, t, a1, d)
                _matmul_bdag(a1, m0, tn, d)
                if res_w > 0.0:
                    _matmul(c, r, a1, d)
                    _matmul_bdag(a1, c, a2, d)
                    for i in range(d):
                        for j in range(d):
                            rn[i, j] += res_w * a2[i, j]
                    _matmul(c, t, a1, d)
                    _matmul_bdag(a1, c, a2, d)
                    for i in range(d):
                        for j in range(d):
                            tn[i, j] += res_w * a2[i, j]
                _matmul(g, r, a1, d)
                _matmul_bdag(a1, m0, w, d)
                for i in range(d):
                    for j in range(d):
                        tn[i, j] += w[i, j] + np.conj(w[j, i])

            tr = 0.0
            for i in range(d):
                tr += rn[i, i].real
            inv = 1.0 / tr
            for i in range(d):
                for j in range(d):
                    r[i, j] = rn[i, j] * inv
                    t[i, j] = tn[i, j] * inv
        q_max = max(q_max, q_loc)
    return q_max
