# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.  Semantics match ``_kernels_py`` exactly."""

import numpy as np



cdef inline double _rr_average(long long[::1] qrs, Py_ssize_t k) nogil:
    cdef Py_ssize_t first
    if k < 2:
        return 0.0
    first = k - 9
    if first < 0:
        first = 0
    return <double>(qrs[k - 1] - qrs[first]) / <double>(k - 1 - first)


cdef inline Py_ssize_t _search_back(const double[::1] y, long long[::1] noise, Py_ssize_t n_noise,
                                    Py_ssize_t lo, Py_ssize_t hi, double thr2) nogil:
    cdef Py_ssize_t best = -1
    cdef Py_ssize_t k, j
    for k in range(n_noise - 1, -1, -1):
        j = noise[k]
        if j < lo:
            break
        if j < hi and y[j] > thr2 and (best < 0 or y[j] >= y[best]):
            best = j
    return best


def pan_tompkins_pick(mwi, double fs):
    cdef const double[::1] y = np.ascontiguousarray(mwi, dtype=np.float64)
    cdef Py_ssize_t n = y.shape[0]
    if n < 3:
        return np.zeros(0, dtype=np.int64)
    cdef Py_ssize_t refractory = <Py_ssize_t>(0.2 * fs + 0.5)
    cdef Py_ssize_t init = <Py_ssize_t>(2.0 * fs)
    if init > n:
        init = n
    cdef double mx = y[0]
    cdef double sm = 0.0
    cdef Py_ssize_t i
    for i in range(init):
        if y[i] > mx:
            mx = y[i]
    sm = float(np.asarray(y[:init]).sum())
    cdef double spki = 0.25 * mx
    cdef double npki = 0.5 * (sm / init)
    cdef double thr1 = npki + 0.25 * (spki - npki)
    cdef double thr2 = 0.5 * thr1
    cdef double v, rr_avg
    qrs_arr = np.empty(n, dtype=np.int64)
    noise_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] qrs = qrs_arr
    cdef long long[::1] noise = noise_arr
    cdef Py_ssize_t nq = 0, nn = 0, best

    with nogil:
        for i in range(1, n - 1):
            v = y[i]
            if not (v > y[i - 1] and v >= y[i + 1] and v > 0.0):
                continue
            if nq > 0:
                rr_avg = _rr_average(qrs, nq)
                if rr_avg > 0.0 and i - qrs[nq - 1] > 1.66 * rr_avg:
                    best = _search_back(y, noise, nn, qrs[nq - 1] + refractory, i, thr2)
                    if best >= 0:
                        qrs[nq] = best
                        nq += 1
                        spki = 0.25 * y[best] + 0.75 * spki
                        thr1 = npki + 0.25 * (spki - npki)
                        thr2 = 0.5 * thr1
                if i - qrs[nq - 1] < refractory:
                    if v > y[qrs[nq - 1]]:
                        qrs[nq - 1] = i
                    continue
            if v > thr1:
                qrs[nq] = i
                nq += 1
                spki = 0.125 * v + 0.875 * spki
            else:
                noise[nn] = i
                nn += 1
                npki = 0.125 * v + 0.875 * npki
            thr1 = npki + 0.25 * (spki - npki)
            thr2 = 0.5 * thr1

        if nq > 0:
            rr_avg = _rr_average(qrs, nq)
            if rr_avg > 0.0 and (n - 1) - qrs[nq - 1] > 1.66 * rr_avg:
                best = _search_back(y, noise, nn, qrs[nq - 1] + refractory, n, thr2)
                if best >= 0:
                    qrs[nq] = best
                    nq += 1
    return qrs_arr[:nq].copy()


def best_splits(Xs, order, node_of, g, h, G, H, double reg_lambda):
    cdef const double[::1, :] xs = np.asfortranarray(Xs, dtype=np.float64)
    cdef const long long[::1, :] o = np.asfortranarray(order, dtype=np.int64)
    cdef const long long[::1] node = np.ascontiguousarray(node_of, dtype=np.int64)
    cdef const double[::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef const double[::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    cdef const double[::1] Gn = np.ascontiguousarray(G, dtype=np.float64)
    cdef const double[::1] Hn = np.ascontiguousarray(H, dtype=np.float64)
    cdef Py_ssize_t n = xs.shape[0], F = xs.shape[1], K = Gn.shape[0]
    best_gain_arr = np.zeros(K)
    best_f_arr = np.full(K, -1, dtype=np.int64)
    best_thr_arr = np.zeros(K)
    GL_arr = np.zeros(K)
    HL_arr = np.zeros(K)
    prev_arr = np.zeros(K)
    seen_arr = np.zeros(K, dtype=np.uint8)
    base_arr = np.asarray(G, dtype=np.float64) ** 2 / (np.asarray(H, dtype=np.float64) + reg_lambda)
    cdef double[::1] best_gain = best_gain_arr
    cdef long long[::1] best_f = best_f_arr
    cdef double[::1] best_thr = best_thr_arr
    cdef double[::1] GL = GL_arr
    cdef double[::1] HL = HL_arr
    cdef double[::1] prev = prev_arr
    cdef unsigned char[::1] seen = seen_arr
    cdef const double[::1] base = np.ascontiguousarray(base_arr)
    cdef Py_ssize_t f, i, r, k
    cdef double xr, GR, HR, gain, thr
    with nogil:
        for f in range(F):
            for k in range(K):
                GL[k] = 0.0
                HL[k] = 0.0
                seen[k] = 0
            for i in range(n):
                r = o[i, f]
                k = node[r]
                if k < 0:
                    continue
                xr = xs[i, f]
                if seen[k] and xr > prev[k]:
                    GR = Gn[k] - GL[k]
                    HR = Hn[k] - HL[k]
                    gain = 0.5 * (GL[k] * GL[k] / (HL[k] + reg_lambda) + GR * GR / (HR + reg_lambda) - base[k])
                    if gain > 0.0:
                        thr = 0.5 * (prev[k] + xr)
                        if best_f[k] < 0 or gain > best_gain[k] or (gain == best_gain[k] and thr < best_thr[k]):
                            best_gain[k] = gain
                            best_thr[k] = thr
                            best_f[k] = f
                GL[k] = GL[k] + gv[r]
                HL[k] = HL[k] + hv[r]
                prev[k] = xr
                seen[k] = 1
    return best_gain_arr, best_f_arr, best_thr_arr
