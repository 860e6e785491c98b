"""Multilevel Daubechies-4 discrete wavelet transform with symmetric extension.

The output layout and boundary handling follow the common ``wavedec``
convention: a level-``L`` decomposition returns ``[cA_L, cD_L, ..., cD_1]``
and each stage produces ``floor((n + 7) / 2)`` coefficients.
"""

from __future__ import annotations

import numpy as np

from .errors import ArgumentError, CapabilityError

# Daubechies wavelet with 4 vanishing moments (8 taps), decomposition low-pass.
DB4_DEC_LO = np.array([
    -0.010597401785069032,
    0.0328830116668852,
    0.030841381835560764,
    -0.18703481171909309,
    -0.027983769416859854,
    0.6308807679298589,
    0.7148465705529157,
    0.2303778133088965,
])
# Quadrature mirror: hi[k] = (-1)^(k+1) * lo[L-1-k]
DB4_DEC_HI = DB4_DEC_LO[::-1] * np.array([(-1.0) ** (k + 1) for k in range(8)])

MODES = ("symmetric", "periodization")


def dwt_single(x: np.ndarray, mode: str = "symmetric") -> tuple[np.ndarray, np.ndarray]:
    """One analysis stage; returns (approximation, detail)."""
    x = np.asarray(x, dtype=np.float64)
    taps = len(DB4_DEC_LO)
    if mode == "symmetric":
        if len(x) < 1:
            raise CapabilityError("empty input")
        n_out = (len(x) + taps - 1) // 2
        # half-sample symmetric padding; np.pad reflects repeatedly when taps > len(x)
        xp = np.pad(x, taps - 1, mode="symmetric")
        lo = np.convolve(xp, DB4_DEC_LO)[taps:taps + 2 * n_out:2]
        hi = np.convolve(xp, DB4_DEC_HI)[taps:taps + 2 * n_out:2]
        return lo, hi
    if mode == "periodization":
        n = len(x)
        if n % 2:
            x = np.append(x, x[-1])
            n += 1
        n_out = n // 2
        idx = (2 * np.arange(n_out)[:, None] + taps // 2 - np.arange(taps)[None, :]) % n
        return x[idx] @ DB4_DEC_LO, x[idx] @ DB4_DEC_HI
    raise ArgumentError(f"mode must be one of {MODES}, got {mode!r}")


def dwt(channel: np.ndarray, level: int = 4, mode: str = "symmetric") -> list[np.ndarray]:
    """Decompose ``channel`` into ``[cA_level, cD_level, ..., cD_1]``."""
    x = np.asarray(channel, dtype=np.float64)
    if x.ndim != 1:
        raise ArgumentError("dwt expects a 1-D sequence")
    if level < 1:
        raise ArgumentError("level must be >= 1")
    taps = len(DB4_DEC_LO)
    details = []
    approx = x
    for _ in range(level):
        if len(approx) < taps:
            raise CapabilityError(
                f"signal too short for a level-{level} db4 decomposition (len {len(x)})")
        approx, detail = dwt_single(approx, mode)
        details.append(detail)
    return [approx] + details[::-1]
