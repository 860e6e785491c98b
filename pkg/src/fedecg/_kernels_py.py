"""Pure-Python/numpy implementations of the hot kernels.

These mirror ``_kernels.pyx`` operation for operation so both backends
return bitwise-identical results.
"""

from __future__ import annotations

import numpy as np


def _rr_average(qrs: list[int]) -> float:
    k = len(qrs)
    if k < 2:
        return 0.0
    first = max(0, k - 9)
    return (qrs[k - 1] - qrs[first]) / (k - 1 - first)


def pan_tompkins_pick(mwi: np.ndarray, fs: float) -> np.ndarray:
    """Adaptive-threshold QRS decision on an integrated Pan-Tompkins signal.

    Returns indices (into ``mwi``) of accepted QRS fiducial marks.
    """
    y = np.ascontiguousarray(mwi, dtype=np.float64)
    n = y.shape[0]
    if n < 3:
        return np.zeros(0, dtype=np.int64)
    refractory = int(0.2 * fs + 0.5)
    init = min(n, int(2.0 * fs))
    spki = 0.25 * float(y[:init].max())
    npki = 0.5 * float(y[:init].sum() / init)
    thr1 = npki + 0.25 * (spki - npki)
    thr2 = 0.5 * thr1
    qrs: list[int] = []
    noise: list[int] = []

    cand = np.flatnonzero((y[1:-1] > y[:-2]) & (y[1:-1] >= y[2:]) & (y[1:-1] > 0.0)) + 1
    for i in cand.tolist():
        if qrs:
            rr_avg = _rr_average(qrs)
            if rr_avg > 0.0 and i - qrs[-1] > 1.66 * rr_avg:
                best = _search_back(y, noise, qrs[-1] + refractory, i, thr2)
                if best >= 0:
                    qrs.append(best)
                    spki = 0.25 * y[best] + 0.75 * spki
                    thr1 = npki + 0.25 * (spki - npki)
                    thr2 = 0.5 * thr1
            if i - qrs[-1] < refractory:
                if y[i] > y[qrs[-1]]:
                    qrs[-1] = i
                continue
        v = y[i]
        if v > thr1:
            qrs.append(i)
            spki = 0.125 * v + 0.875 * spki
        else:
            noise.append(i)
            npki = 0.125 * v + 0.875 * npki
        thr1 = npki + 0.25 * (spki - npki)
        thr2 = 0.5 * thr1

    if qrs:
        rr_avg = _rr_average(qrs)
        if rr_avg > 0.0 and (n - 1) - qrs[-1] > 1.66 * rr_avg:
            best = _search_back(y, noise, qrs[-1] + refractory, n, thr2)
            if best >= 0:
                qrs.append(best)
    return np.array(qrs, dtype=np.int64)


def _search_back(y, noise, lo, hi, thr2) -> int:
    best = -1
    for j in reversed(noise):
        if j < lo:
            break
        if j < hi and y[j] > thr2 and (best < 0 or y[j] >= y[best]):
            best = j
    return best


def best_splits(Xs, order, node_of, g, h, G, H, reg_lambda):
    """Exact greedy split search for every node of one tree level.

    ``order`` is the stable per-column argsort of the feature matrix and
    ``Xs`` the matching sorted values.  ``node_of[r]`` is the node index of
    row ``r`` (-1 for rows not being split); ``G``/``H`` are per-node
    gradient and hessian totals.  Returns arrays ``(gain, feature,
    threshold)`` with ``feature == -1`` where no split has positive gain.
    Ties on gain go to the lowest threshold, then the lowest feature index.
    """
    K = len(G)
    best_gain = np.zeros(K)
    best_f = np.full(K, -1, dtype=np.int64)
    best_thr = np.zeros(K)
    node_sorted = node_of[order]
    for k in range(K):
        G_k, H_k = G[k], H[k]
        m = node_sorted == k
        m_count = int(m[:, 0].sum())
        if m_count < 2:
            continue
        # rows of node k in (value, row) order for every feature column
        cols = np.nonzero(m.T)[1].reshape(Xs.shape[1], m_count).T
        xs = np.take_along_axis(Xs, cols, axis=0)
        rows = np.take_along_axis(order, cols, axis=0)
        GL = np.cumsum(g[rows], axis=0)[:-1]
        HL = np.cumsum(h[rows], axis=0)[:-1]
        GR = G_k - GL
        HR = H_k - HL
        base = G_k ** 2 / (H_k + reg_lambda)
        gain = 0.5 * (GL * GL / (HL + reg_lambda) + GR * GR / (HR + reg_lambda) - base)
        gain = np.where(xs[1:] > xs[:-1], gain, -np.inf)
        best = gain.max()
        if not best > 0.0:
            continue
        thr = 0.5 * (xs[:-1] + xs[1:])
        ii, ff = np.nonzero(gain == best)
        cand = thr[ii, ff]
        pick = np.lexsort((ff, cand))[0]
        best_gain[k], best_f[k], best_thr[k] = best, ff[pick], cand[pick]
    return best_gain, best_f, best_thr
