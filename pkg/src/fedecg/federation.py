"""Data splitting, client partitioning, FedAvg and the communication-round loop."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._util import derive_seed, round_half_up
from .errors import ArgumentError, ConfigurationError, SchemaError, StateError
from .features import FeatureMatrix
from .metrics import MetricsBundle, evaluate
from .models import DnnConfig, ModelConfig, ModelParams, TrainConfig, init_params, predict, train_local

log = logging.getLogger(__name__)

IID = "IID"
NON_IID = "NonIID"
PARTITION_MODES = (IID, NON_IID)


# --- splitting ----------------------------------------------------------------

def largest_remainder(total: int, fractions: Sequence[float]) -> np.ndarray:
    """Integer shares of ``total`` proportional to ``fractions`` summing to ``total``.

    Leftover units go to the largest fractional parts, ties to the earlier share.
    """
    f = np.asarray(fractions, dtype=np.float64)
    quota = total * f / f.sum()
    base = np.floor(quota + 1e-12).astype(np.int64)
    short = total - int(base.sum())
    order = np.lexsort((np.arange(f.size), -(quota - base)))
    base[order[:short]] += 1
    return base


def _ceil_assignment(need_rows: np.ndarray, need_cols: np.ndarray, frac: np.ndarray) -> np.ndarray:
    """0/1 matrix with the given row and column sums (greedy Gale-Ryser fill)."""
    out = np.zeros(frac.shape, dtype=np.int64)
    cols_left = need_cols.copy()
    for r in np.lexsort((np.arange(need_rows.size), -need_rows)):
        k = int(need_rows[r])
        if k == 0:
            continue
        pick = np.lexsort((np.arange(cols_left.size), -frac[r], -cols_left))[:k]
        if np.any(cols_left[pick] <= 0):
            raise StateError("stratified allocation has no consistent rounding")
        out[r, pick] = 1
        cols_left[pick] -= 1
    return out


def split_indices(labels, fractions: Sequence[float] = (0.9, 0.05, 0.05), seed: int = 0,
                  min_class: int = 3) -> list[np.ndarray]:
    """Stratified split of row indices into ``len(fractions)`` disjoint parts.

    Split sizes follow largest-remainder rounding of the global total.  Every
    class's share of each split is the floor or ceiling of its proportional
    quota.  Classes with fewer than ``min_class`` members go wholly to the
    first split.
    """
    y = np.asarray(labels)
    f = np.asarray(fractions, dtype=np.float64)
    if y.size == 0:
        raise ArgumentError("cannot split an empty dataset")
    if f.ndim != 1 or np.any(f < 0) or abs(f.sum() - 1.0) > 1e-9:
        raise ArgumentError("split fractions must be non-negative and sum to 1")
    classes, counts = np.unique(y, return_counts=True)
    sizes = largest_remainder(y.size, f)
    small = counts < min_class
    if small.any():
        log.warning("classes %s have fewer than %d members; all go to the first split",
                    classes[small].tolist(), min_class)
        sizes[0] -= int(counts[small].sum())
        if sizes[0] < 0:
            sizes = largest_remainder(int(counts[~small].sum()), f)
    big = np.flatnonzero(~small)
    quota = counts[big, None] * f[None, :]
    floor = np.floor(quota + 1e-12).astype(np.int64)
    frac = quota - floor
    row_need = counts[big] - floor.sum(axis=1)
    col_need = sizes - floor.sum(axis=0)
    if big.size and (np.any(col_need < 0) or col_need.sum() != row_need.sum()):
        sizes = floor.sum(axis=0) + largest_remainder(int(row_need.sum()), f)
        col_need = sizes - floor.sum(axis=0)
    alloc = floor + (_ceil_assignment(row_need, col_need, frac) if big.size else 0)

    rng = np.random.default_rng(seed)
    parts: list[list[np.ndarray]] = [[] for _ in f]
    for ci, cls in enumerate(classes):
        members = rng.permutation(np.flatnonzero(y == cls))
        if small[ci]:
            parts[0].append(members)
            continue
        row = alloc[np.searchsorted(big, ci)]
        cut = np.concatenate([[0], np.cumsum(row)])
        for s in range(f.size):
            parts[s].append(members[cut[s]:cut[s + 1]])
    return [np.sort(np.concatenate(p)) if p else np.zeros(0, dtype=np.int64) for p in parts]


def split_train_val_test(data, fractions=(0.9, 0.05, 0.05), seed: int = 0):
    """Stratified train/val/test split of a Dataset or FeatureMatrix."""
    labels = data.labels if hasattr(data, "labels") else data.y
    idx = split_indices(labels, fractions, seed)
    take = data.subset if hasattr(data, "subset") else data.take
    return tuple(take(i) for i in idx)


# --- partitioning -------------------------------------------------------------

def _check_n(n_rows: int, n_clients: int) -> None:
    if n_clients < 1:
        raise ArgumentError("need at least one client")
    if n_clients > n_rows:
        raise ArgumentError(f"{n_clients} clients but only {n_rows} training rows")


def partition_iid(labels, n_clients: int, seed: int = 0) -> list[np.ndarray]:
    """Stratified equal-size shards.

    Each class is shuffled and dealt round-robin; the dealer position carries
    over between classes so shard sizes differ by at most one.
    """
    y = np.asarray(labels)
    _check_n(y.size, n_clients)
    rng = np.random.default_rng(seed)
    owner = np.empty(y.size, dtype=np.int64)
    pos = 0
    for cls in np.unique(y):
        members = rng.permutation(np.flatnonzero(y == cls))
        owner[members] = (pos + np.arange(members.size)) % n_clients
        pos += members.size
    return [np.flatnonzero(owner == k) for k in range(n_clients)]


def partition_noniid(labels, n_clients: int, seed: int = 0) -> list[np.ndarray]:
    """Unstratified bootstrap shards: ``n // N`` uniform draws with replacement each."""
    y = np.asarray(labels)
    _check_n(y.size, n_clients)
    rng = np.random.default_rng(seed)
    size = y.size // n_clients
    return [np.sort(rng.integers(0, y.size, size=size)) for _ in range(n_clients)]


def partition(labels, n_clients: int, mode: str = IID, seed: int = 0) -> list[np.ndarray]:
    if mode == IID:
        return partition_iid(labels, n_clients, seed)
    if mode == NON_IID:
        return partition_noniid(labels, n_clients, seed)
    raise ArgumentError(f"unknown partition mode {mode!r}")


def label_audit(labels, shards: Sequence[np.ndarray], n_classes: int) -> dict:
    """Per-client label histograms and their deviation from the pooled one."""
    y = np.asarray(labels)
    glob = np.bincount(y, minlength=n_classes)
    gp = glob / max(glob.sum(), 1)
    clients = []
    for k, idx in enumerate(shards):
        h = np.bincount(y[idx], minlength=n_classes)
        p = h / max(h.sum(), 1)
        present = gp > 0
        rel = np.abs(p[present] - gp[present]) / gp[present]
        clients.append({"client": k, "size": int(idx.size), "histogram": h.tolist(),
                        "max_abs_deviation": float(np.max(np.abs(p - gp))),
                        "max_rel_deviation": float(rel.max()) if rel.size else 0.0,
                        "max_count_deviation": float(np.max(np.abs(h - gp * idx.size)))})
    used = np.unique(np.concatenate(shards)) if shards else np.zeros(0, dtype=np.int64)
    return {"global_histogram": glob.tolist(), "clients": clients,
            "unused_records": int(y.size - used.size)}


# --- aggregation --------------------------------------------------------------

def fedavg(params: Sequence[ModelParams], sizes: Sequence[int]) -> ModelParams:
    """Sample-weighted mean ``sum_k (n_k / n) w_k``.

    Clients are put in a canonical order (size, then weight bytes) and the sum
    is accumulated as offsets from the first, so identical inputs come back
    unchanged and the result does not depend on the order given.
    """
    if not params:
        raise ArgumentError("fedavg needs at least one client")
    if len(params) != len(sizes):
        raise ArgumentError("one size per client required")
    n = np.asarray(sizes, dtype=np.float64)
    if np.any(n <= 0):
        raise ArgumentError("client sizes must be positive")
    ref = params[0]
    for p in params[1:]:
        if not ref.compatible(p):
            raise SchemaError("client parameter shape tables differ")
    order = sorted(range(len(params)), key=lambda k: (n[k], params[k].flat.tobytes()))
    coef = n / n.sum()
    base = params[order[0]].flat
    acc = base.copy()
    for k in order:
        if k == order[0]:
            continue
        acc += coef[k] * (params[k].flat - base)
    return ref.with_flat(acc)


# --- round loop ---------------------------------------------------------------

@dataclass(frozen=True)
class FederationConfig:
    n_clients: int = 4
    partition: str = IID
    max_rounds: int = 10
    delta: float = 0.005
    patience: int = 3
    model: ModelConfig = field(default_factory=DnnConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    balancing: str = "ROS+RUS"
    beta: float = 1.0
    k_features: int = 120
    seed: int = 0
    parallel: bool = False
    workers: int | None = None

    def __post_init__(self) -> None:
        if self.n_clients < 1 or self.max_rounds < 1 or self.patience < 1:
            raise ConfigurationError("n_clients, max_rounds and patience must be >= 1")
        if not self.delta >= 0:
            raise ConfigurationError("delta must be >= 0")
        if self.partition not in PARTITION_MODES:
            raise ConfigurationError(f"partition must be one of {PARTITION_MODES}")


def client_seed(master: int, client: int, rnd: int) -> int:
    """Shuffle seed for one client's local training in one round."""
    return derive_seed(master, client, rnd)


def init_seed(master: int) -> int:
    return derive_seed(master, 0xC0FFEE)


@dataclass
class ClientState:
    client_id: int
    data: FeatureMatrix
    params: ModelParams | None = None
    artifacts: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.data)


@dataclass(frozen=True)
class ClientUpdate:
    client_id: int
    n: int
    loss: float
    cpu_seconds: float


@dataclass(frozen=True)
class RoundLog:
    round: int
    clients: tuple[ClientUpdate, ...]
    digest: str
    val: MetricsBundle
    seconds: float
    critical_seconds: float

    def to_dict(self) -> dict:
        return {"round": self.round, "digest": self.digest, "seconds": self.seconds,
                "critical_seconds": self.critical_seconds,
                "clients": [{"client": c.client_id, "n": c.n, "loss": c.loss,
                             "cpu_seconds": c.cpu_seconds} for c in self.clients],
                "val": self.val.to_dict()}


@dataclass
class FederationHistory:
    rounds: list[RoundLog] = field(default_factory=list)
    params: ModelParams | None = None
    test: MetricsBundle | None = None
    stopped_early: bool = False

    @property
    def total_seconds(self) -> float:
        return float(sum(r.seconds for r in self.rounds))

    @property
    def f1_curve(self) -> list[float]:
        return [r.val.f1 for r in self.rounds]

    def set_test(self, bundle: MetricsBundle) -> None:
        if self.test is not None:
            raise StateError("test metrics are computed once per run")
        self.test = bundle

    def to_dict(self) -> dict:
        return {"schema_version": 1, "rounds": [r.to_dict() for r in self.rounds],
                "stopped_early": self.stopped_early, "total_seconds": self.total_seconds,
                "test": self.test.to_dict() if self.test else None,
                "final_digest": self.params.digest() if self.params else None}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def write_rounds_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["round", "accuracy", "precision", "recall", "f1", "seconds"])
            for r in self.rounds:
                w.writerow([r.round, repr(r.val.accuracy), repr(r.val.precision),
                            repr(r.val.recall), repr(r.val.f1), f"{r.seconds:.6f}"])


def should_stop(f1_curve: Sequence[float], delta: float, patience: int) -> bool:
    """True once the last ``patience`` round-to-round F1 changes are all below ``delta``."""
    if len(f1_curve) < patience + 1:
        return False
    recent = np.abs(np.diff(np.asarray(f1_curve[-(patience + 1):], dtype=np.float64)))
    return bool(np.all(recent < delta))


def _train_client(state: ClientState, global_params: ModelParams, cfg: FederationConfig,
                  rnd: int) -> tuple[ModelParams, ClientUpdate]:
    t0 = time.thread_time()
    tcfg = cfg.train.with_seed(client_seed(cfg.seed, state.client_id, rnd))
    params, hist = train_local(global_params, cfg.model, tcfg, state.data.X, state.data.y)
    return params, ClientUpdate(state.client_id, state.n, hist[-1], time.thread_time() - t0)


def run_federation(cfg: FederationConfig, clients: Sequence[ClientState | FeatureMatrix],
                   val: FeatureMatrix, test: FeatureMatrix | None = None,
                   init: ModelParams | None = None) -> FederationHistory:
    """FedAvg rounds until the validation F1 settles or ``max_rounds`` is reached.

    Every round: broadcast the global params, train each client locally, take
    the weighted mean and score it on ``val``.  ``test`` is scored once after
    the last round.
    """
    states = [c if isinstance(c, ClientState) else ClientState(k, c) for k, c in enumerate(clients)]
    if not states:
        raise ConfigurationError("a federation needs at least one client")
    for s in states:
        if s.n < 1:
            raise ConfigurationError(f"client {s.client_id} has no training rows")
        if s.data.X.shape[1] != cfg.model.input_dim:
            raise ConfigurationError(
                f"client {s.client_id} has {s.data.X.shape[1]} features, model expects {cfg.model.input_dim}")
    if len(val) < 1:
        raise ConfigurationError("validation set is empty")
    global_params = init or init_params(cfg.model, init_seed(cfg.seed))
    history = FederationHistory(params=global_params)
    pool = ThreadPoolExecutor(cfg.workers or len(states)) if cfg.parallel and len(states) > 1 else None
    try:
        for rnd in range(1, cfg.max_rounds + 1):
            t0 = time.perf_counter()
            if pool is not None:
                results = list(pool.map(lambda s: _train_client(s, global_params, cfg, rnd), states))
            else:
                results = [_train_client(s, global_params, cfg, rnd) for s in states]
            s0 = time.thread_time()
            for s, (p, _) in zip(states, results):
                s.params = p
            global_params = fedavg([p for p, _ in results], [s.n for s in states])
            val_metrics = evaluate(val.y, predict(global_params, cfg.model, val.X))
            server = time.thread_time() - s0
            elapsed = time.perf_counter() - t0
            updates = tuple(u for _, u in results)
            critical = max(u.cpu_seconds for u in updates) + server
            history.rounds.append(RoundLog(rnd, updates, global_params.digest(), val_metrics,
                                           elapsed, critical))
            history.params = global_params
            log.info("round %d: val f1 %.4f acc %.4f (%.2fs)", rnd, val_metrics.f1,
                     val_metrics.accuracy, elapsed)
            if rnd < cfg.max_rounds and should_stop(history.f1_curve, cfg.delta, cfg.patience):
                history.stopped_early = True
                break
    finally:
        if pool is not None:
            pool.shutdown()
    if test is not None and len(test):
        history.set_test(evaluate(test.y, predict(global_params, cfg.model, test.X)))
    return history
