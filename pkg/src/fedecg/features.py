"""Morphological, demographic and wavelet-spectral feature extraction."""

from __future__ import annotations

import csv
import functools
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import signal as sps

from . import kernels
from .errors import CapabilityError, SchemaError
from .signal import LEAD_II, N_LEADS, Dataset, EcgRecording
from .wavelet import dwt

MISSING_AGE = -1.0
SEX_CODE = {"male": 1.0, "female": 0.0, "unknown": 0.5}

MORPH_NAMES: tuple[str, ...] = (
    "age", "sex", "hr_mean", "rr_mean", "rr_median", "rr_std", "rr_min", "rr_max",
    "ramp_mean", "ramp_median", "ramp_std", "ramp_min", "ramp_max", "n_beats",
)
STAT_OPS: tuple[str, ...] = (
    "n5", "n25", "n50", "n75", "n95", "mean", "std", "var", "skew", "kurt", "entropy",
)
# c1..c4 are the detail bands cD1..cD4, c5 the level-4 approximation.
COEFFS: tuple[str, ...] = ("1", "2", "3", "4", "5")
SIGNAL_COEFF = "sig"
DWT_LEVEL = 4

_SPECTRAL_RE = re.compile(r"^l(\d+)_c_c(\d|sig)_([a-z0-9]+)$")


def format_spectral_name(lead: int, coeff: str, op: str) -> str:
    return f"l{lead}_c_c{coeff}_{op}"


def parse_spectral_name(name: str) -> tuple[int, str, str]:
    m = _SPECTRAL_RE.match(name)
    if not m:
        raise SchemaError(f"not a spectral feature name: {name!r}")
    lead, coeff, op = int(m.group(1)), m.group(2), m.group(3)
    if not 0 <= lead < N_LEADS or coeff not in COEFFS + (SIGNAL_COEFF,) or op not in STAT_OPS:
        raise SchemaError(f"spectral feature out of range: {name!r}")
    return lead, coeff, op


@dataclass(frozen=True)
class FeatureEntry:
    index: int
    name: str
    kind: str  # morphological | demographic | spectral


@dataclass(frozen=True)
class FeatureRegistry:
    """Ordered, uniquely named feature schema.

    ``source`` maps each entry to its column in the full extraction battery,
    so a registry returned by :meth:`subset` still knows where its features
    came from.
    """

    entries: tuple[FeatureEntry, ...]
    source: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise SchemaError("feature names must be unique")
        if [e.index for e in self.entries] != list(range(len(self.entries))):
            raise SchemaError("feature indices must be contiguous from 0")
        if not self.source:
            object.__setattr__(self, "source", tuple(range(len(self.entries))))
        object.__setattr__(self, "_lookup", {n: i for i, n in enumerate(names)})

    @classmethod
    def default(cls, include_signal: bool = False) -> "FeatureRegistry":
        return _default_registry(include_signal)

    @classmethod
    def _build_default(cls, include_signal: bool) -> "FeatureRegistry":
        names: list[tuple[str, str]] = []
        for n in MORPH_NAMES:
            names.append((n, "demographic" if n in ("age", "sex") else "morphological"))
        coeffs = COEFFS + ((SIGNAL_COEFF,) if include_signal else ())
        for lead in range(N_LEADS):
            for c in coeffs:
                for op in STAT_OPS:
                    names.append((format_spectral_name(lead, c, op), "spectral"))
        return cls(tuple(FeatureEntry(i, n, k) for i, (n, k) in enumerate(names)))

    @classmethod
    def from_names(cls, names: Sequence[str]) -> "FeatureRegistry":
        entries = []
        for i, n in enumerate(names):
            if n in MORPH_NAMES:
                kind = "demographic" if n in ("age", "sex") else "morphological"
            else:
                parse_spectral_name(n)
                kind = "spectral"
            entries.append(FeatureEntry(i, n, kind))
        return cls(tuple(entries))

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def index_of(self, name: str) -> int:
        try:
            return self._lookup[name]  # type: ignore[attr-defined]
        except KeyError:
            raise SchemaError(f"unknown feature {name!r}") from None

    def lookup(self, name: str) -> dict:
        """Resolve a name to its index and, for spectral features, its parts."""
        i = self.index_of(name)
        entry = self.entries[i]
        out = {"index": i, "kind": entry.kind}
        if entry.kind == "spectral":
            lead, coeff, op = parse_spectral_name(name)
            out.update(lead=lead, coeff=coeff, op=op)
        return out

    def subset(self, indices: Iterable[int]) -> "FeatureRegistry":
        idx = [int(i) for i in indices]
        entries = tuple(FeatureEntry(j, self.entries[i].name, self.entries[i].kind)
                        for j, i in enumerate(idx))
        return FeatureRegistry(entries, tuple(self.source[i] for i in idx))


@functools.lru_cache(maxsize=None)
def _default_registry(include_signal: bool) -> FeatureRegistry:
    return FeatureRegistry._build_default(include_signal)


@dataclass(frozen=True)
class RPeakTrain:
    indices: np.ndarray
    fs: float

    def __post_init__(self) -> None:
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.size > 1 and np.any(np.diff(idx) <= 0):
            raise SchemaError("R-peak indices must be strictly increasing")
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return int(self.indices.size)

    @property
    def rr(self) -> np.ndarray:
        return np.diff(self.indices) / self.fs


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    record_id: str
    label: int
    flags: tuple[str, ...] = ()


# --- R-peak detection ---------------------------------------------------------

def _pan_tompkins_stages(x: np.ndarray, fs: float) -> tuple[np.ndarray, np.ndarray]:
    sos = sps.butter(2, [5.0, 15.0], btype="bandpass", fs=fs, output="sos")
    band = sps.sosfiltfilt(sos, x)
    deriv = np.convolve(band, np.array([1.0, 2.0, 0.0, -2.0, -1.0]) * (fs / 8.0), mode="same")
    win = max(1, int(round(0.150 * fs)))
    mwi = np.convolve(deriv * deriv, np.ones(win) / win, mode="same")
    return band, mwi


def detect_r_peaks(channel: np.ndarray, fs: float) -> RPeakTrain:
    """Pan-Tompkins detector: 5-15 Hz band-pass, derivative, squaring,
    150 ms moving-window integration and adaptive thresholds with a 200 ms
    refractory period.  Fiducial marks are moved onto the local extremum of
    the channel."""
    x = np.asarray(channel, dtype=np.float64)
    if x.shape[0] < 2 * fs:
        raise CapabilityError("R-peak detection needs at least 2 s of signal")
    if fs <= 30.0:
        raise CapabilityError("sampling rate too low for a 5-15 Hz band-pass")
    if not np.any(x != x[0]):
        return RPeakTrain(np.zeros(0, dtype=np.int64), fs)
    _, mwi = _pan_tompkins_stages(x, fs)
    marks = kernels.pan_tompkins_pick(mwi, fs)
    if marks.size == 0:
        return RPeakTrain(marks, fs)

    half = int(round(0.10 * fs))
    refractory = int(0.2 * fs + 0.5)
    refined: list[int] = []
    for m in marks.tolist():
        lo, hi = max(0, m - half), min(x.shape[0], m + half + 1)
        seg = x[lo:hi]
        p = lo + int(np.argmax(np.abs(seg - np.median(seg))))
        if refined and p - refined[-1] < refractory:
            if abs(x[p]) > abs(x[refined[-1]]):
                refined[-1] = p
            continue
        refined.append(p)
    return RPeakTrain(np.array(refined, dtype=np.int64), fs)


# --- morphology ---------------------------------------------------------------

def morphological_features(rec: EcgRecording, peaks: RPeakTrain) -> np.ndarray:
    """The 14 morphological/demographic features in MORPH_NAMES order."""
    out = np.zeros(len(MORPH_NAMES))
    out[0] = MISSING_AGE if rec.age is None else float(rec.age)
    out[1] = SEX_CODE[rec.sex]
    out[13] = float(len(peaks))
    if len(peaks) < 2:
        return out
    rr = peaks.rr
    ramp = rec.signals[LEAD_II, peaks.indices]
    rr_mean = float(rr.mean())
    out[2] = 60.0 / rr_mean
    out[3:8] = [rr_mean, np.median(rr), rr.std(), rr.min(), rr.max()]
    out[8:13] = [ramp.mean(), np.median(ramp), ramp.std(), ramp.min(), ramp.max()]
    return out


# --- spectral statistics ------------------------------------------------------

def spectral_stats(array: np.ndarray) -> np.ndarray:
    """[p5, p25, p50, p75, p95, mean, std, var, skew, kurt, entropy].

    Linear-interpolation percentiles and population moments.  Skewness and
    excess kurtosis are 0.0 for constant input; entropy is the Shannon
    entropy (bits) of the energy distribution c_i^2 / sum(c^2), 0.0 for an
    all-zero array.
    """
    a = np.asarray(array, dtype=np.float64).ravel()
    if a.size == 0:
        raise CapabilityError("spectral_stats of an empty array")
    return spectral_stats_rows(a[None, :])[0]


def spectral_stats_rows(A: np.ndarray) -> np.ndarray:
    """Row-wise :func:`spectral_stats` for a 2-D array; returns (rows, 11)."""
    A = np.ascontiguousarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[1] == 0:
        raise CapabilityError("spectral_stats needs non-empty rows")
    out = np.empty((A.shape[0], len(STAT_OPS)))
    out[:, 0:5] = np.percentile(A, [5, 25, 50, 75, 95], axis=1).T
    mean = A.mean(axis=1)
    dev = A - mean[:, None]
    dev2 = dev * dev
    m2 = dev2.mean(axis=1)
    out[:, 5] = mean
    out[:, 6] = np.sqrt(m2)
    out[:, 7] = m2
    varying = (m2 > 0.0) & (A.max(axis=1) != A.min(axis=1))
    z = dev / np.sqrt(np.where(varying, m2, 1.0))[:, None]
    z2 = z * z
    out[:, 8] = np.where(varying, (z2 * z).mean(axis=1), 0.0)
    out[:, 9] = np.where(varying, (z2 * z2).mean(axis=1) - 3.0, 0.0)
    energy = A * A
    total = energy.sum(axis=1)
    p = energy / np.where(total > 0.0, total, 1.0)[:, None]
    plogp = np.zeros_like(p)
    nz = p > 0.0
    plogp[nz] = p[nz] * np.log2(p[nz])
    out[:, 10] = np.where(total > 0.0, 0.0 - plogp.sum(axis=1), 0.0)
    return out


# --- full vector --------------------------------------------------------------

def _battery(rec: EcgRecording, include_signal: bool) -> tuple[np.ndarray, list[str]]:
    flags: list[str] = []
    try:
        peaks = detect_r_peaks(rec.signals[LEAD_II], rec.fs)
    except CapabilityError as exc:
        flags.append(f"r_peaks: {exc}")
        peaks = RPeakTrain(np.zeros(0, dtype=np.int64), rec.fs)
    morph = morphological_features(rec, peaks)
    n_arrays = len(COEFFS) + (1 if include_signal else 0)
    spectral = np.zeros((N_LEADS, n_arrays, len(STAT_OPS)))
    try:
        per_lead = [dwt(rec.signals[lead], DWT_LEVEL) for lead in range(N_LEADS)]
        # reorder wavedec output [cA4, cD4, cD3, cD2, cD1] to c1..c5 = cD1..cD4, cA4
        for slot, pos in enumerate((4, 3, 2, 1, 0)):
            spectral[:, slot] = spectral_stats_rows(np.vstack([c[pos] for c in per_lead]))
        if include_signal:
            spectral[:, len(COEFFS)] = spectral_stats_rows(rec.signals)
    except CapabilityError as exc:
        flags.append(f"spectral: {exc}")
        spectral[:] = 0.0
    values = np.concatenate([morph, spectral.ravel()])
    bad = ~np.isfinite(values)
    if bad.any():
        flags.append(f"{int(bad.sum())} non-finite values replaced by 0.0")
        values[bad] = 0.0
    return values, flags


@functools.lru_cache(maxsize=32)
def _source_registry(registry: FeatureRegistry) -> tuple[bool, np.ndarray]:
    full = FeatureRegistry.default(include_signal=True)
    short = FeatureRegistry.default(include_signal=False)
    names = registry.names
    if all(n in short._lookup for n in names):  # type: ignore[attr-defined]
        return False, np.array([short.index_of(n) for n in names], dtype=np.int64)
    return True, np.array([full.index_of(n) for n in names], dtype=np.int64)


def extract_features(rec: EcgRecording, registry: FeatureRegistry | None = None) -> FeatureVector:
    """Feature vector for one recording, ordered exactly as ``registry``."""
    registry = registry or FeatureRegistry.default()
    include_signal, cols = _source_registry(registry)
    values, flags = _battery(rec, include_signal)
    return FeatureVector(values[cols], rec.id, rec.label_index, tuple(flags))


@dataclass
class FeatureMatrix:
    """Stacked feature vectors for a dataset (rows follow dataset order)."""

    X: np.ndarray
    y: np.ndarray
    ids: list[str]
    registry: FeatureRegistry
    flags: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __len__(self) -> int:
        return self.X.shape[0]

    def take(self, idx: Sequence[int]) -> "FeatureMatrix":
        idx = np.asarray(idx, dtype=np.int64)
        ids = [self.ids[i] for i in idx]
        return FeatureMatrix(self.X[idx], self.y[idx], ids, self.registry,
                             {k: v for k, v in self.flags.items() if k in set(ids)})


def extract_matrix(ds: Dataset | Sequence[EcgRecording], registry: FeatureRegistry | None = None,
                   workers: int | None = None) -> FeatureMatrix:
    registry = registry or FeatureRegistry.default()
    recs = list(ds)
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            vecs = list(pool.map(lambda r: extract_features(r, registry), recs))
    else:
        vecs = [extract_features(r, registry) for r in recs]
    X = np.vstack([v.values for v in vecs]) if vecs else np.zeros((0, len(registry)))
    y = np.array([v.label for v in vecs], dtype=np.int64)
    flags = {v.record_id: v.flags for v in vecs if v.flags}
    return FeatureMatrix(X, y, [v.record_id for v in vecs], registry, flags)


def write_feature_csv(fm: FeatureMatrix, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["record_id", "label"] + fm.registry.names)
        for rid, label, row in zip(fm.ids, fm.y, fm.X):
            w.writerow([rid, int(label)] + [repr(float(v)) for v in row])


def read_feature_csv(path: str | Path) -> FeatureMatrix:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    registry = FeatureRegistry.from_names(header[2:])
    X = np.array([[float(v) for v in r[2:]] for r in body]).reshape(len(body), len(registry))
    y = np.array([int(r[1]) for r in body], dtype=np.int64)
    return FeatureMatrix(X, y, [r[0] for r in body], registry)
