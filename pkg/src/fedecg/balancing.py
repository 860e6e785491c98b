"""Hybrid over/under-sampling toward the mean class count.

Every class moves a fraction ``beta`` of the way to ``T* = round(mean n_c)``.
Minority classes grow by duplication (ROS) or neighbour interpolation
(SMOTE); majority classes shrink by uniform elimination (RUS).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ._util import round_half_up
from .errors import ArgumentError, StateError
from .features import FeatureMatrix

log = logging.getLogger(__name__)

ROS_RUS = "ROS+RUS"
SMOTE_RUS = "SMOTE+RUS"
MODES = (ROS_RUS, SMOTE_RUS)


@dataclass(frozen=True)
class BalancePlan:
    beta: float
    classes: tuple[int, ...]
    counts: tuple[int, ...]
    targets: tuple[int, ...]
    reference: int
    tau: int
    mode: str = ROS_RUS

    @property
    def executed_ops(self) -> int:
        return sum(abs(t - n) for t, n in zip(self.targets, self.counts))

    @property
    def is_noop(self) -> bool:
        return self.targets == self.counts

    def target_of(self, cls: int) -> int:
        return self.targets[self.classes.index(cls)]

    def to_dict(self) -> dict:
        return {
            "mode": self.mode, "beta": self.beta, "reference": self.reference,
            "tau": self.tau, "executed_ops": self.executed_ops,
            "classes": {str(c): {"count": n, "target": t}
                        for c, n, t in zip(self.classes, self.counts, self.targets)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def _largest_remainder(magnitudes: np.ndarray, total: int) -> np.ndarray:
    """Integers with the given sum, each the floor or ceil of its magnitude."""
    base = np.floor(magnitudes).astype(np.int64)
    short = total - int(base.sum())
    if short > 0:
        frac = magnitudes - base
        order = np.lexsort((np.arange(frac.size), -frac))
        base[order[:short]] += 1
    return base


def plan_balance(counts: Mapping[int, int] | Sequence[int], beta: float = 1.0,
                 mode: str = ROS_RUS) -> BalancePlan:
    """Per-class targets ``T_c`` for a move of ``beta`` toward the mean count.

    ``counts`` maps class -> count (a sequence is read as classes 0..n-1).
    Classes with zero count are left out of the plan.  The real-valued
    moves ``beta * (T* - n_c)`` are rounded by largest remainder so the
    executed operation total equals ``round(sum |beta (T* - n_c)|)``; with
    two classes that is exactly ``tau``.
    """
    if mode not in MODES:
        raise ArgumentError(f"unknown balancing mode {mode!r}")
    if not 0.0 <= beta <= 1.0:
        raise ArgumentError(f"beta must lie in [0, 1], got {beta}")
    items = sorted(counts.items()) if isinstance(counts, Mapping) else list(enumerate(counts))
    if any(int(n) < 0 for _, n in items):
        raise ArgumentError("class counts must be non-negative")
    items = [(int(c), int(n)) for c, n in items if int(n) > 0]
    if not items:
        raise ArgumentError("balancing needs at least one non-empty class")
    classes = tuple(c for c, _ in items)
    n = np.array([k for _, k in items], dtype=np.int64)
    ref = round_half_up(float(n.mean()))
    moves = beta * (ref - n).astype(np.float64)
    mag = np.abs(moves)
    steps = _largest_remainder(mag, round_half_up(float(mag.sum())))
    targets = n + np.sign(ref - n) * steps
    tau = round_half_up(float(n.max() - n.min()) * beta)
    return BalancePlan(float(beta), classes, tuple(n.tolist()), tuple(targets.tolist()),
                       ref, tau, mode)


def _check(fm: FeatureMatrix, plan: BalancePlan) -> None:
    cls, cnt = np.unique(fm.y, return_counts=True)
    have = {int(c): int(k) for c, k in zip(cls, cnt)}
    want = dict(zip(plan.classes, plan.counts))
    if have != want:
        raise StateError(f"plan counts {want} do not match data counts {have}")


def _undersample(rows: np.ndarray, target: int, rng: np.random.Generator) -> np.ndarray:
    return np.sort(rng.choice(rows, size=target, replace=False))


def interpolate(x: np.ndarray, x_nn: np.ndarray, u) -> np.ndarray:
    """``x + u (x_nn - x)`` clipped to the segment's bounding box."""
    x = np.asarray(x, dtype=np.float64)
    x_nn = np.asarray(x_nn, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == 1 and x.ndim == 2:
        u = u[:, None]
    out = x + u * (x_nn - x)
    return np.clip(out, np.minimum(x, x_nn), np.maximum(x, x_nn))


def nearest_neighbors(X: np.ndarray, queries: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest rows of ``X`` to each query row of ``X``.

    Self matches are excluded; distance ties go to the lower row index.
    """
    out = np.empty((queries.size, k), dtype=np.int64)
    sq = np.einsum("ij,ij->i", X, X)
    for start in range(0, queries.size, 256):
        q = queries[start:start + 256]
        d2 = sq[q, None] - 2.0 * X[q] @ X.T + sq[None, :]
        d2[np.arange(q.size), q] = np.inf
        cols = np.arange(X.shape[0])
        for i in range(q.size):
            out[start + i] = np.lexsort((cols, d2[i]))[:k]
    return out


def _rebuild(fm: FeatureMatrix, keep: np.ndarray, X_new: list, y_new: list, ids_new: list) -> FeatureMatrix:
    keep = np.sort(keep)
    X = np.vstack([fm.X[keep]] + X_new) if X_new else fm.X[keep]
    y = np.concatenate([fm.y[keep]] + y_new) if y_new else fm.y[keep]
    ids = [fm.ids[i] for i in keep] + [i for chunk in ids_new for i in chunk]
    kept = set(fm.ids[i] for i in keep)
    return FeatureMatrix(X, y, ids, fm.registry, {k: v for k, v in fm.flags.items() if k in kept})


def _apply(fm: FeatureMatrix, plan: BalancePlan, seed: int, k: int, smote: bool) -> FeatureMatrix:
    _check(fm, plan)
    rng = np.random.default_rng(seed)
    keep: list[np.ndarray] = []
    X_new, y_new, ids_new = [], [], []
    for cls, n_c, t_c in zip(plan.classes, plan.counts, plan.targets):
        rows = np.flatnonzero(fm.y == cls)
        if t_c <= n_c:
            keep.append(rows if t_c == n_c else _undersample(rows, t_c, rng))
            continue
        keep.append(rows)
        extra = t_c - n_c
        base = rng.integers(0, n_c, size=extra)
        if smote and n_c >= 2:
            kk = min(k, n_c - 1)
            Xc = fm.X[rows]
            uniq, inv = np.unique(base, return_inverse=True)
            nn = nearest_neighbors(Xc, uniq, kk)
            pick = nn[inv, rng.integers(0, kk, size=extra)]
            u = rng.random(extra)
            X_new.append(interpolate(Xc[base], Xc[pick], u))
            tag = "smote"
        else:
            if smote:
                log.warning("class %d has a single member; duplicating instead of interpolating", cls)
            X_new.append(fm.X[rows[base]].copy())
            tag = "dup"
        y_new.append(np.full(extra, cls, dtype=fm.y.dtype))
        ids_new.append([f"{fm.ids[rows[b]]}#{tag}{j}" for j, b in enumerate(base)])
    return _rebuild(fm, np.concatenate(keep), X_new, y_new, ids_new)


def ros_rus(fm: FeatureMatrix, plan: BalancePlan, seed: int = 0) -> FeatureMatrix:
    """Duplicate minority rows (with replacement) and drop majority rows."""
    if plan.mode != ROS_RUS:
        raise StateError(f"plan mode {plan.mode} is not {ROS_RUS}")
    return _apply(fm, plan, seed, 0, smote=False)


def smote_rus(fm: FeatureMatrix, plan: BalancePlan, k: int = 5, seed: int = 0) -> FeatureMatrix:
    """Interpolate toward same-class neighbours for minorities; drop majority rows."""
    if plan.mode != SMOTE_RUS:
        raise StateError(f"plan mode {plan.mode} is not {SMOTE_RUS}")
    if k < 1:
        raise ArgumentError("SMOTE needs k >= 1")
    return _apply(fm, plan, seed, k, smote=True)


def balance(fm: FeatureMatrix, beta: float = 1.0, mode: str = ROS_RUS, seed: int = 0,
            k: int = 5) -> tuple[FeatureMatrix, BalancePlan]:
    """Plan from ``fm``'s own counts and apply it."""
    cls, cnt = np.unique(fm.y, return_counts=True)
    plan = plan_balance(dict(zip(cls.tolist(), cnt.tolist())), beta, mode)
    out = ros_rus(fm, plan, seed) if mode == ROS_RUS else smote_rus(fm, plan, k, seed)
    return out, plan
