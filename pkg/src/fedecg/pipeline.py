"""Experiment configuration and the end-to-end preprocessing + training pipeline.

One run: load or synthesise recordings, extract features, split 90/5/5,
hand the training rows to clients, fit the scaler and the feature ranking
across clients, balance each client, then train with FedAvg.  The
centralised scenario is the same pipeline with a single client.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from ._util import derive_seed
from .balancing import MODES, BalancePlan, balance
from .errors import ConfigurationError
from .federation import (IID, NON_IID, ClientState, FederationConfig, FederationHistory,
                         label_audit, partition, run_federation, split_indices)
from .features import FeatureMatrix, FeatureRegistry, extract_matrix
from .models import TrainConfig, make_config
from .normalization import ScalerParams, fit_robust_scaler
from .selection import (GbdtConfig, ImportanceReport, average_importance, fit_gbdt, importance,
                        select_top_k)
from .signal import N_CLASSES, Dataset, load_dataset, normalize_recording
from .synth import GENERATOR_CLASSES, synth_dataset

log = logging.getLogger(__name__)

SCENARIOS = {"CL": None, "FL-IID": IID, "FL-NonIID": NON_IID}
SELECTION_MODES = ("federated", "pooled")


@dataclass(frozen=True)
class SynthSpec:
    classes: tuple[str, ...] = GENERATOR_CLASSES
    per_class: int = 200
    fs: float = 257.0
    seconds: float = 16.0
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one run needs; ``n_clients`` may be a list to sweep."""

    scenario: str = "FL-IID"
    model: str = "DNN"
    model_options: dict = field(default_factory=dict)
    manifest: str | None = None
    synthetic: SynthSpec | None = field(default_factory=SynthSpec)
    fs: float = 257.0
    seconds: float = 16.0
    split: tuple[float, float, float] = (0.9, 0.05, 0.05)
    n_clients: int | tuple[int, ...] = 4
    rounds: int = 10
    delta: float = 0.005
    patience: int = 3
    k_features: int = 120
    selection: str = "federated"
    gbdt: GbdtConfig = field(default_factory=GbdtConfig)
    balancing: str = "ROS+RUS"
    beta: float = 1.0
    smote_k: int = 5
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    parallel: bool = False
    out: str = "report"

    def __post_init__(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigurationError(f"scenario must be one of {tuple(SCENARIOS)}")
        if self.model.upper() not in ("DNN", "LSTM"):
            raise ConfigurationError("model must be DNN or LSTM")
        if self.selection not in SELECTION_MODES:
            raise ConfigurationError(f"selection must be one of {SELECTION_MODES}")
        if self.balancing not in MODES + ("none",):
            raise ConfigurationError(f"balancing must be one of {MODES + ('none',)}")
        if self.manifest is None and self.synthetic is None:
            raise ConfigurationError("config needs a manifest or a synthetic spec")
        if self.manifest is not None and not Path(self.manifest).exists():
            raise ConfigurationError(f"manifest not found: {self.manifest}")
        if self.k_features < 1:
            raise ConfigurationError("k_features must be >= 1")
        for n in self.client_counts:
            if n < 1:
                raise ConfigurationError("n_clients must be >= 1")
        self.model_config()  # validates model options against k

    @property
    def client_counts(self) -> tuple[int, ...]:
        if self.scenario == "CL":
            return (1,)
        n = self.n_clients
        return tuple(int(v) for v in n) if isinstance(n, (list, tuple)) else (int(n),)

    def model_config(self):
        try:
            return make_config(self.model, input_dim=self.k_features, **self.model_options)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"invalid model options: {exc}") from None

    def federation_config(self, n_clients: int) -> FederationConfig:
        mode = SCENARIOS[self.scenario] or IID
        return FederationConfig(
            n_clients=n_clients, partition=mode, max_rounds=self.rounds, delta=self.delta,
            patience=self.patience, model=self.model_config(), train=self.train,
            balancing=self.balancing, beta=self.beta, k_features=self.k_features,
            seed=self.seed, parallel=self.parallel)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = 1
        d["split"] = list(self.split)
        if isinstance(self.n_clients, tuple):
            d["n_clients"] = list(self.n_clients)
        return d

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "ExperimentConfig":
        doc = dict(doc)
        doc.pop("schema_version", None)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        try:
            if isinstance(doc.get("synthetic"), dict):
                s = dict(doc["synthetic"])
                if "classes" in s:
                    s["classes"] = tuple(s["classes"])
                doc["synthetic"] = SynthSpec(**s)
            if doc.get("manifest") is not None and "synthetic" not in doc:
                doc["synthetic"] = None
            if isinstance(doc.get("gbdt"), dict):
                doc["gbdt"] = GbdtConfig(**doc["gbdt"])
            if isinstance(doc.get("train"), dict):
                doc["train"] = TrainConfig(**doc["train"])
            if "split" in doc:
                doc["split"] = tuple(doc["split"])
            if isinstance(doc.get("n_clients"), list):
                doc["n_clients"] = tuple(doc["n_clients"])
            return cls(**doc)
        except TypeError as exc:
            raise ConfigurationError(f"invalid config: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from None
        if isinstance(doc, dict) and doc.get("manifest") and not Path(doc["manifest"]).is_absolute():
            doc["manifest"] = str(Path(path).parent / doc["manifest"])
        return cls.from_dict(doc)


# --- data preparation ---------------------------------------------------------

@dataclass
class PreparedData:
    """Extracted features with the fixed train/val/test split."""

    features: FeatureMatrix
    train: FeatureMatrix
    val: FeatureMatrix
    test: FeatureMatrix
    seconds: float
    rejected: tuple = ()


def load_recordings(cfg: ExperimentConfig) -> Dataset:
    if cfg.manifest is not None:
        ds = load_dataset(cfg.manifest)
        for err in ds.rejected:
            log.warning("[load] rejected %s", err)
        return ds
    s = cfg.synthetic
    return synth_dataset(s.classes, s.per_class, s.seed, s.fs, s.seconds)


def prepare_data(cfg: ExperimentConfig, ds: Dataset | None = None) -> PreparedData:
    t0 = time.perf_counter()
    ds = ds if ds is not None else load_recordings(cfg)
    if len(ds) == 0:
        raise ConfigurationError("dataset is empty")
    recs = [normalize_recording(r, cfg.fs, cfg.seconds) for r in ds]
    fm = extract_matrix(recs, FeatureRegistry.default())
    log.info("[features] %d records x %d features", *fm.X.shape)
    tr, va, te = split_indices(fm.y, cfg.split, derive_seed(cfg.seed, 1))
    return PreparedData(fm, fm.take(tr), fm.take(va), fm.take(te), time.perf_counter() - t0,
                        tuple(ds.rejected))


# --- pipeline -----------------------------------------------------------------

@dataclass
class PipelineArtifacts:
    scaler: ScalerParams
    ranking: ImportanceReport
    selected: np.ndarray
    plans: list[BalancePlan]
    audit: dict
    shards: list[np.ndarray]


def _scale_select(fm: FeatureMatrix, scaler: ScalerParams, idx: np.ndarray) -> FeatureMatrix:
    X = scaler.transform(fm.X)[:, idx]
    return FeatureMatrix(X, fm.y, fm.ids, fm.registry.subset(idx), fm.flags)


def _client_importance(fm: FeatureMatrix, gbdt: GbdtConfig) -> ImportanceReport | None:
    if np.unique(fm.y).size < 2:
        log.warning("[selection] a client holds a single class; its ranking is skipped")
        return None
    return importance(fit_gbdt(fm.X, fm.y, gbdt), fm.registry.names)


def build_clients(cfg: ExperimentConfig, data: PreparedData, n_clients: int
                  ) -> tuple[list[ClientState], FeatureMatrix, FeatureMatrix, PipelineArtifacts]:
    """Partition, scale, select and balance; returns clients plus transformed val/test."""
    mode = SCENARIOS[cfg.scenario] or IID
    train = data.train
    shards = partition(train.y, n_clients, mode, derive_seed(cfg.seed, 2, n_clients))
    audit = label_audit(train.y, shards, N_CLASSES)
    audit["partition"] = cfg.scenario if cfg.scenario == "CL" else mode
    raw = [train.take(s) for s in shards]

    scaler = fit_robust_scaler(raw, train.registry)
    scaled = [FeatureMatrix(scaler.transform(c.X), c.y, c.ids, c.registry, c.flags) for c in raw]
    if cfg.selection == "pooled":
        pooled = scaler.transform(train.X)
        ranking = importance(fit_gbdt(pooled, train.y, cfg.gbdt), train.registry.names)
    else:
        reports, sizes = [], []
        for c in scaled:
            rep = _client_importance(c, cfg.gbdt)
            if rep is not None:
                reports.append(rep)
                sizes.append(len(c))
        if not reports:
            raise ConfigurationError("no client has two classes to rank features with")
        ranking = average_importance(reports, sizes)
    k = min(cfg.k_features, len(train.registry))
    if k != cfg.k_features:
        raise ConfigurationError(f"k_features {cfg.k_features} exceeds {len(train.registry)} features")
    selected = select_top_k(ranking, k)
    sub = train.registry.subset(selected)

    clients, plans = [], []
    for cid, c in enumerate(scaled):
        fm = FeatureMatrix(c.X[:, selected], c.y, c.ids, sub, c.flags)
        if cfg.balancing != "none":
            fm, plan = balance(fm, cfg.beta, cfg.balancing, derive_seed(cfg.seed, 3, cid), cfg.smote_k)
            plans.append(plan)
        if len(fm) < 1:
            raise ConfigurationError(f"client {cid} has no rows after balancing")
        clients.append(ClientState(cid, fm, artifacts={"n_raw": len(c)}))
    val = _scale_select(data.val, scaler, selected)
    test = _scale_select(data.test, scaler, selected)
    return clients, val, test, PipelineArtifacts(scaler, ranking, selected, plans, audit, shards)


@dataclass
class RunResult:
    config: ExperimentConfig
    n_clients: int
    history: FederationHistory
    artifacts: PipelineArtifacts
    preprocessing_seconds: float
    training_seconds: float

    @property
    def total_seconds(self) -> float:
        return self.preprocessing_seconds + self.training_seconds


def run_scenario(cfg: ExperimentConfig, data: PreparedData, n_clients: int | None = None) -> RunResult:
    n = n_clients if n_clients is not None else cfg.client_counts[0]
    if cfg.scenario == "CL":
        n = 1
    t0 = time.perf_counter()
    clients, val, test, art = build_clients(cfg, data, n)
    prep = time.perf_counter() - t0 + data.seconds
    log.info("[pipeline] %s n=%d k=%d rows=%s", cfg.scenario, n, cfg.k_features,
             [c.n for c in clients])
    t1 = time.perf_counter()
    history = run_federation(cfg.federation_config(n), clients, val, test)
    return RunResult(cfg, n, history, art, prep, time.perf_counter() - t1)


def run_experiment(cfg: ExperimentConfig, data: PreparedData | None = None) -> list[RunResult]:
    """One result per client count in the config (a single one for CL)."""
    data = data or prepare_data(cfg)
    return [run_scenario(cfg, data, n) for n in cfg.client_counts]


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, **kw)


__all__ = ["ExperimentConfig", "PreparedData", "RunResult", "SynthSpec", "build_clients",
           "load_recordings", "prepare_data", "run_experiment", "run_scenario", "with_overrides"]
