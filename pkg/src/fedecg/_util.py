from __future__ import annotations

import math

import numpy as np


def round_half_up(x: float) -> int:
    # Python's round() is banker's rounding; counts and lengths use half-up.
    return int(math.floor(x + 0.5))


def derive_seed(*parts: int) -> int:
    """Derive an independent 32-bit seed from a tuple of integers."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])
