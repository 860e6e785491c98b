"""Robust scaling fitted across clients with a threshold/count bisection protocol.

The coordinator never sees feature values.  Each protocol round it
broadcasts one threshold per feature and every client answers with how many
of its local values are <= that threshold.  Quantiles are recovered by
bisecting on the value axis, using the linear-interpolation definition
``h = (N - 1) q`` between the two bracketing order statistics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CapabilityError, ConvergenceError, SchemaError
from .features import MISSING_AGE, FeatureMatrix, FeatureRegistry, FeatureVector

MAX_EXPANSIONS = 64


@dataclass(frozen=True)
class CountExchange:
    """One protocol round with one client: thresholds out, counts back."""

    client_id: int
    features: np.ndarray
    thresholds: np.ndarray
    counts: np.ndarray

    def pairs(self) -> list[tuple[float, int]]:
        return list(zip(self.thresholds.tolist(), self.counts.tolist()))


@dataclass
class Transcript:
    exchanges: list[CountExchange] = field(default_factory=list)

    def record(self, ex: CountExchange) -> None:
        self.exchanges.append(ex)

    def messages(self):
        for ex in self.exchanges:
            yield from ex.pairs()

    def __len__(self) -> int:
        return sum(len(ex.counts) for ex in self.exchanges)


class CountingClient:
    """Holds a client's private values and answers count queries only.

    ``values`` is (n, F).  Entries flagged in ``missing`` are excluded from
    every count.
    """

    def __init__(self, values: np.ndarray, client_id: int = 0, missing: np.ndarray | None = None):
        v = np.asarray(values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        self._values = v
        self._valid = ~missing if missing is not None else np.ones(v.shape, dtype=bool)
        self.client_id = client_id

    @property
    def n_features(self) -> int:
        return self._values.shape[1]

    def count_leq(self, features: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
        cols = self._values[:, features]
        hit = (cols <= thresholds[None, :]) & self._valid[:, features]
        return hit.sum(axis=0).astype(np.int64)


def _as_clients(clients) -> list[CountingClient]:
    out = []
    for k, c in enumerate(clients):
        out.append(c if isinstance(c, CountingClient) else CountingClient(np.asarray(c), k))
    if not out:
        raise CapabilityError("federated quantile over an empty federation")
    return out


def _query(clients, features, thresholds, transcript):
    total = np.zeros(len(features), dtype=np.int64)
    for c in clients:
        counts = c.count_leq(features, thresholds)
        if transcript is not None:
            transcript.record(CountExchange(c.client_id, features.copy(), thresholds.copy(), counts))
        total += counts
    return total


def _order_statistic(clients, features, rank, lo, hi, eps, transcript):
    """Bisect for the value of the 0-based order statistic ``rank`` per feature."""
    lo = lo.astype(np.float64).copy()
    hi = hi.astype(np.float64).copy()
    need = rank + 1
    # bracket invariant: count(<= lo) < need <= count(<= hi)
    for attempt in range(MAX_EXPANSIONS + 1):
        c_lo = _query(clients, features, lo, transcript)
        c_hi = _query(clients, features, hi, transcript)
        low_bad = c_lo >= need
        high_bad = c_hi < need
        if not (low_bad.any() or high_bad.any()):
            break
        if attempt == MAX_EXPANSIONS:
            raise ConvergenceError("quantile bracket not found after bound expansion")
        width = np.maximum(hi - lo, eps)
        lo = np.where(low_bad, lo - width, lo)
        hi = np.where(high_bad, hi + width, hi)
    active = np.ones(len(features), dtype=bool)
    while True:
        mid = 0.5 * (lo + hi)
        # stop at the tolerance or when the interval can no longer be split
        active &= (hi - lo > eps) & (mid > lo) & (mid < hi)
        if not active.any():
            break
        idx = np.flatnonzero(active)
        counts = _query(clients, features[idx], mid[idx], transcript)
        upper = counts >= need[idx]
        hi[idx] = np.where(upper, mid[idx], hi[idx])
        lo[idx] = np.where(upper, lo[idx], mid[idx])
    return 0.5 * (lo + hi)


def federated_quantiles(clients, q: float, features: Sequence[int] | None = None,
                        lo: float | np.ndarray = -1.0, hi: float | np.ndarray = 1.0,
                        eps: float | None = None, transcript: Transcript | None = None) -> np.ndarray:
    """Quantile ``q`` of every requested feature over the union of clients.

    ``eps`` defaults to 1e-9 times the initial bound width.  Bounds that do
    not contain the quantile are widened by doubling up to 64 times.
    """
    if not 0.0 < q < 1.0:
        raise SchemaError("quantile must lie in (0, 1)")
    clients = _as_clients(clients)
    F = clients[0].n_features
    feats = np.arange(F) if features is None else np.asarray(features, dtype=np.int64)
    lo_a = np.broadcast_to(np.asarray(lo, dtype=np.float64), feats.shape).copy()
    hi_a = np.broadcast_to(np.asarray(hi, dtype=np.float64), feats.shape).copy()
    if np.any(lo_a > hi_a):
        raise SchemaError("search bounds must satisfy lo <= hi")
    if eps is None:
        eps = 1e-9 * float(np.max(hi_a - lo_a)) if np.any(hi_a > lo_a) else 1e-9
    if not eps > 0:
        raise SchemaError("tolerance must be positive")

    n = _query(clients, feats, np.full(len(feats), np.inf), transcript)
    if np.any(n < 1):
        raise CapabilityError("no values for at least one feature in the federation")
    h = (n - 1) * q
    j = np.floor(h).astype(np.int64)
    frac = h - j
    low = _order_statistic(clients, feats, j, lo_a, hi_a, eps, transcript)
    result = low.copy()
    need_up = frac > 0
    if need_up.any():
        idx = np.flatnonzero(need_up)
        up = _order_statistic(clients, feats[idx], j[idx] + 1, lo_a[idx], hi_a[idx], eps, transcript)
        result[idx] = low[idx] + frac[idx] * (up - low[idx])
    return result


@dataclass(frozen=True)
class QuantileQuery:
    feature: int
    q: float
    eps: float = 1e-9
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self) -> None:
        if not (0.0 < self.q < 1.0 and self.eps > 0 and self.lo <= self.hi):
            raise SchemaError(f"invalid quantile query {self}")


def federated_quantile(clients, query: QuantileQuery, transcript: Transcript | None = None) -> float:
    """Single-feature form of :func:`federated_quantiles`."""
    return float(federated_quantiles(clients, query.q, [query.feature], query.lo, query.hi,
                                     query.eps, transcript)[0])


def pooled_quantile(values: np.ndarray, q: float) -> np.ndarray:
    """Reference linear-interpolation quantile on pooled data (oracle)."""
    return np.quantile(np.asarray(values, dtype=np.float64), q, axis=0, method="linear")


# --- scaler -------------------------------------------------------------------

@dataclass(frozen=True)
class ScalerParams:
    names: tuple[str, ...]
    median: np.ndarray
    q25: np.ndarray
    q75: np.ndarray

    def __post_init__(self) -> None:
        if not (len(self.names) == len(self.median) == len(self.q25) == len(self.q75)):
            raise SchemaError("scaler arrays must align with feature names")

    @property
    def iqr(self) -> np.ndarray:
        return self.q75 - self.q25

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.array(X, dtype=np.float64, copy=True)
        if X.shape[-1] != len(self.names):
            raise SchemaError(f"expected {len(self.names)} features, got {X.shape[-1]}")
        if "age" in self.names:
            a = self.names.index("age")
            X[..., a] = np.where(X[..., a] == MISSING_AGE, self.median[a], X[..., a])
        iqr = self.iqr
        scale = np.where(iqr > 0, iqr, 1.0)
        out = (X - self.median) / scale
        return np.where(iqr > 0, out, 0.0)

    def subset(self, indices) -> "ScalerParams":
        idx = np.asarray(indices, dtype=np.int64)
        return ScalerParams(tuple(self.names[i] for i in idx), self.median[idx],
                            self.q25[idx], self.q75[idx])

    def to_json(self) -> str:
        doc = {"schema_version": 1, "features": {
            n: {"median": float(m), "q25": float(a), "q75": float(b)}
            for n, m, a, b in zip(self.names, self.median, self.q25, self.q75)}}
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ScalerParams":
        feats = json.loads(text)["features"]
        names = tuple(feats)
        return cls(names, np.array([feats[n]["median"] for n in names]),
                   np.array([feats[n]["q25"] for n in names]),
                   np.array([feats[n]["q75"] for n in names]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())


def _client_from(obj, k: int, registry: FeatureRegistry) -> CountingClient:
    if isinstance(obj, CountingClient):
        return obj
    X = obj.X if isinstance(obj, FeatureMatrix) else np.asarray(obj, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(registry):
        raise SchemaError("client matrix does not match the registry")
    if X.shape[0] < 1:
        raise CapabilityError(f"client {k} has no feature vectors")
    missing = np.zeros(X.shape, dtype=bool)
    if "age" in registry.names:
        a = registry.index_of("age")
        missing[:, a] = X[:, a] == MISSING_AGE
    return CountingClient(X, k, missing)


def fit_robust_scaler(clients, registry: FeatureRegistry, eps_rel: float = 1e-9,
                      bounds: tuple[float, float] = (-1.0, 1.0),
                      transcript: Transcript | None = None) -> ScalerParams:
    """Median and quartiles of every feature over the federation.

    Missing ages are excluded from the age quantiles.
    """
    cc = [_client_from(c, k, registry) for k, c in enumerate(clients)]
    if not cc:
        raise CapabilityError("cannot fit a scaler on an empty federation")
    lo, hi = bounds
    eps = eps_rel * (hi - lo)
    qs = {q: federated_quantiles(cc, q, None, lo, hi, eps, transcript) for q in (0.25, 0.5, 0.75)}
    return ScalerParams(tuple(registry.names), qs[0.5], qs[0.25], qs[0.75])


def fit_pooled_scaler(X: np.ndarray, registry: FeatureRegistry) -> ScalerParams:
    """Oracle: exact quantiles of the pooled matrix."""
    X = np.asarray(X, dtype=np.float64)
    cols = []
    for j in range(X.shape[1]):
        col = X[:, j]
        if registry.names[j] == "age":
            col = col[col != MISSING_AGE]
        cols.append(np.quantile(col, [0.25, 0.5, 0.75]) if col.size else [0.0, 0.0, 0.0])
    q = np.array(cols)
    return ScalerParams(tuple(registry.names), q[:, 1], q[:, 0], q[:, 2])


def apply_scaler(v, params: ScalerParams):
    """(x - median) / (q75 - q25) per feature; 0.0 where the IQR is zero.

    Accepts a FeatureVector, a FeatureMatrix or a bare array.
    """
    if isinstance(v, FeatureVector):
        return FeatureVector(params.transform(v.values), v.record_id, v.label, v.flags)
    if isinstance(v, FeatureMatrix):
        if v.registry.names != list(params.names):
            raise SchemaError("feature matrix registry does not match scaler")
        return FeatureMatrix(params.transform(v.X), v.y, v.ids, v.registry, v.flags)
    return params.transform(v)


def tolerance(eps_rel: float = 1e-9, bounds: tuple[float, float] = (-1.0, 1.0)) -> float:
    return eps_rel * (bounds[1] - bounds[0])


__all__ = [
    "CountExchange", "CountingClient", "QuantileQuery", "ScalerParams", "Transcript",
    "apply_scaler", "federated_quantile", "federated_quantiles", "fit_pooled_scaler",
    "fit_robust_scaler", "pooled_quantile", "tolerance",
]

