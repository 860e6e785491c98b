"""Gradient-boosted tree importance ranking and top-k feature selection.

Boosting is one-vs-rest with logistic loss.  Each tree is grown with exact
greedy splits scored by

    gain = 1/2 [G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda)]

and a feature's importance is the total gain of every split that uses it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ArgumentError, CapabilityError, SchemaError
from .features import FeatureRegistry


@dataclass(frozen=True)
class GbdtConfig:
    rounds: int = 20
    depth: int = 4
    learning_rate: float = 0.3
    reg_lambda: float = 1.0

    def __post_init__(self) -> None:
        if self.rounds < 1 or self.depth < 0 or self.learning_rate <= 0 or self.reg_lambda < 0:
            raise ArgumentError(f"invalid GBDT config {self}")


@dataclass
class Tree:
    """Array-encoded binary regression tree; ``feature[i] == -1`` marks a leaf."""

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)
    gain: list[float] = field(default_factory=list)

    def _add(self) -> int:
        for arr, v in ((self.feature, -1), (self.threshold, 0.0), (self.left, -1),
                       (self.right, -1), (self.value, 0.0), (self.gain, 0.0)):
            arr.append(v)
        return len(self.feature) - 1

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def is_leaf_only(self) -> bool:
        return self.n_nodes == 1

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape[0])
        node = np.zeros(X.shape[0], dtype=np.int64)
        feature = np.array(self.feature)
        thr = np.array(self.threshold)
        left, right, value = np.array(self.left), np.array(self.right), np.array(self.value)
        active = feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            f = feature[node[idx]]
            go_left = X[idx, f] <= thr[node[idx]]
            node[idx] = np.where(go_left, left[node[idx]], right[node[idx]])
            active = feature[node] >= 0
        out[:] = value[node]
        return out


@dataclass
class GbdtModel:
    classes: np.ndarray
    n_features: int
    config: GbdtConfig
    trees: list[list[Tree]]  # trees[round][class]
    loss_history: list[float] = field(default_factory=list)

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        F = np.zeros((X.shape[0], len(self.classes)))
        for round_trees in self.trees:
            for c, tree in enumerate(round_trees):
                F[:, c] += tree.predict(X)
        return F

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.classes[np.argmax(self.decision_function(X), axis=1)]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def ovr_log_loss(F: np.ndarray, Y: np.ndarray) -> float:
    """Mean binary log-loss over samples and one-vs-rest outputs."""
    # log(1 + exp(-z)) for positives, log(1 + exp(z)) for negatives
    z = np.where(Y > 0, F, -F)
    return float(np.mean(np.logaddexp(0.0, -z)))


def _grow_tree(X, Xs, order, g, h, cfg: GbdtConfig) -> tuple[Tree, np.ndarray]:
    """Grow one tree level by level; returns it with each row's leaf value."""
    tree = Tree()
    n = X.shape[0]
    node_of = np.zeros(n, dtype=np.int64)  # index into the current level
    level = [tree._add()]
    leaf_value = np.empty(n)
    for depth in range(cfg.depth + 1):
        K = len(level)
        G = np.array([np.sum(g[node_of == k]) for k in range(K)])
        H = np.array([np.sum(h[node_of == k]) for k in range(K)])
        for k, node in enumerate(level):
            tree.value[node] = float(-G[k] / (H[k] + cfg.reg_lambda) * cfg.learning_rate)
        if depth == cfg.depth:
            gain = np.zeros(K)
            feat = np.full(K, -1, dtype=np.int64)
            thr = np.zeros(K)
        else:
            gain, feat, thr = kernels.best_splits(Xs, order, node_of, g, h, G, H, cfg.reg_lambda)
        next_level: list[int] = []
        next_of = np.full(n, -1, dtype=np.int64)
        for k, node in enumerate(level):
            rows = node_of == k
            if feat[k] < 0:
                leaf_value[rows] = tree.value[node]
                continue
            tree.feature[node], tree.threshold[node], tree.gain[node] = int(feat[k]), float(thr[k]), float(gain[k])
            li, ri = tree._add(), tree._add()
            tree.left[node], tree.right[node] = li, ri
            go_left = X[:, feat[k]] <= thr[k]
            next_of[rows & go_left] = len(next_level)
            next_of[rows & ~go_left] = len(next_level) + 1
            next_level += [li, ri]
        if not next_level:
            break
        level, node_of = next_level, next_of
    return tree, leaf_value


def fit_gbdt(X: np.ndarray, y: np.ndarray, cfg: GbdtConfig | None = None) -> GbdtModel:
    """One-vs-rest boosted trees on (X, y); deterministic for fixed inputs."""
    cfg = cfg or GbdtConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise SchemaError("X rows must match y")
    if not np.all(np.isfinite(X)):
        raise SchemaError("X contains non-finite values")
    classes = np.unique(y)
    if classes.size < 2:
        raise CapabilityError("boosting needs at least two classes")
    X = np.ascontiguousarray(X)
    order = np.asfortranarray(np.argsort(X, axis=0, kind="stable").astype(np.int64))
    Xs = np.asfortranarray(np.take_along_axis(X, order, axis=0))
    Y = (y[:, None] == classes[None, :]).astype(np.float64)
    F = np.zeros_like(Y)
    model = GbdtModel(classes, X.shape[1], cfg, [], [ovr_log_loss(F, Y)])
    for _ in range(cfg.rounds):
        round_trees = []
        F_new = np.empty_like(F)
        P = _sigmoid(F)
        for c in range(classes.size):
            g = P[:, c] - Y[:, c]
            h = P[:, c] * (1.0 - P[:, c])
            tree, fitted = _grow_tree(X, Xs, order, g, h, cfg)
            round_trees.append(tree)
            F_new[:, c] = fitted
        F += F_new
        model.trees.append(round_trees)
        model.loss_history.append(ovr_log_loss(F, Y))
    return model


@dataclass(frozen=True)
class ImportanceReport:
    gain: np.ndarray
    split_count: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if np.any(self.gain < 0):
            raise SchemaError("importance gains must be non-negative")

    @property
    def ranking(self) -> np.ndarray:
        """Feature indices by descending gain, ties to the lower index."""
        idx = np.arange(self.gain.size)
        return np.lexsort((idx, -self.gain))

    def to_csv(self, path: str | Path) -> None:
        rank = np.empty(self.gain.size, dtype=np.int64)
        rank[self.ranking] = np.arange(1, self.gain.size + 1)
        names = self.names or tuple(f"f{i}" for i in range(self.gain.size))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "gain", "splits", "rank"])
            for i in self.ranking:
                w.writerow([names[i], repr(float(self.gain[i])), int(self.split_count[i]), int(rank[i])])


def importance(model: GbdtModel, names: Sequence[str] = ()) -> ImportanceReport:
    gain = np.zeros(model.n_features)
    count = np.zeros(model.n_features, dtype=np.int64)
    for round_trees in model.trees:
        for tree in round_trees:
            for f, gval in zip(tree.feature, tree.gain):
                if f >= 0:
                    gain[f] += gval
                    count[f] += 1
    return ImportanceReport(gain, count, tuple(names))


def average_importance(reports: Sequence[ImportanceReport], sizes: Sequence[int]) -> ImportanceReport:
    """Sample-size weighted mean of client importance vectors."""
    if not reports or len(reports) != len(sizes):
        raise ArgumentError("need one size per importance report")
    w = np.asarray(sizes, dtype=np.float64)
    if np.any(w <= 0):
        raise ArgumentError("client sizes must be positive")
    w = w / w.sum()
    gain = sum(wk * r.gain for wk, r in zip(w, reports))
    count = sum(r.split_count for r in reports)
    return ImportanceReport(np.asarray(gain), np.asarray(count), reports[0].names)


def select_top_k(report: ImportanceReport, k: int = 120) -> np.ndarray:
    """The k highest-gain feature indices, descending gain then ascending index."""
    n = report.gain.size
    if not 1 <= k <= n:
        raise ArgumentError(f"k must be in [1, {n}], got {k}")
    return report.ranking[:k].copy()


def select_registry(registry: FeatureRegistry, report: ImportanceReport, k: int = 120):
    idx = select_top_k(report, k)
    return idx, registry.subset(idx)
