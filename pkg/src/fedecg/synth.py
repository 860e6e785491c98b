"""Class-conditioned synthetic 12-lead ECG generator.

Beats are sums of Gaussian P/Q/R/S/T bumps projected onto each lead with
lead-specific gains. Rhythm parameters (rate, RR jitter, ectopy, QRS width)
depend on the diagnosis class.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._util import derive_seed
from .errors import CapabilityError
from .signal import CODE_INDEX, N_LEADS, Dataset, EcgRecording, code_index

GENERATOR_CLASSES: tuple[str, ...] = ("NSR", "SB", "STach", "AF", "PAC", "VEB")

# Columns: P, Q, R, S, T.  Rows follow LEADS.
_LEAD_GAINS = np.array([
    [0.60, 0.70, 0.70, 0.70, 0.60],   # I
    [1.00, 1.00, 1.00, 1.00, 1.00],   # II
    [0.40, 0.40, 0.40, 0.40, 0.40],   # III
    [-0.80, -0.80, -0.80, -0.80, -0.80],  # aVR
    [0.10, 0.30, 0.30, 0.30, 0.10],   # aVL
    [0.70, 0.70, 0.70, 0.70, 0.70],   # aVF
    [0.30, 0.20, -0.60, 1.60, -0.20],  # V1
    [0.40, 0.30, -0.20, 1.80, 0.80],  # V2
    [0.40, 0.60, 0.50, 1.20, 0.90],   # V3
    [0.40, 0.80, 1.20, 0.80, 0.90],   # V4
    [0.40, 0.90, 1.10, 0.50, 0.70],   # V5
    [0.40, 1.00, 0.90, 0.30, 0.50],   # V6
])

# (offset from R in s at RR = 1 s, amplitude mV, gaussian width s)
_WAVES_NORMAL = (
    (-0.16, 0.15, 0.025),
    (-0.030, -0.10, 0.010),
    (0.0, 1.00, 0.011),
    (0.030, -0.25, 0.011),
    (0.28, 0.30, 0.050),
)


@dataclass(frozen=True)
class _Rhythm:
    hr: tuple[float, float]      # uniform range of the nominal rate (bpm)
    jitter: float                # relative sd of sinus RR
    irregular: float = 0.0       # log-normal sd of RR (AF)
    ectopic_p: float = 0.0       # probability of a premature beat
    ectopic_kind: str = ""       # "A" (atrial) or "V" (ventricular)


_RHYTHMS = {
    "NSR": _Rhythm((59.0, 61.0), 0.008),
    "SB": _Rhythm((40.0, 52.0), 0.012),
    "STach": _Rhythm((110.0, 140.0), 0.008),
    "AF": _Rhythm((70.0, 110.0), 0.0, irregular=0.20),
    "PAC": _Rhythm((62.0, 85.0), 0.010, ectopic_p=0.2, ectopic_kind="A"),
    "VEB": _Rhythm((62.0, 85.0), 0.010, ectopic_p=0.2, ectopic_kind="V"),
}


@dataclass(frozen=True)
class SynthTruth:
    """Ground truth behind a generated recording."""

    r_peaks: np.ndarray          # sample indices of every R peak
    heart_rate: float            # nominal rate the rhythm was drawn around (bpm)
    beat_kinds: tuple[str, ...]  # "N", "A" or "V" per beat
    fs: float = 257.0

    @property
    def rr(self) -> np.ndarray:
        """RR intervals in seconds."""
        return np.diff(self.r_peaks) / self.fs


def _beat_times(rh: _Rhythm, hr: float, seconds: float, rng: np.random.Generator):
    rr_nom = 60.0 / hr
    margin = 0.3
    t = margin + rng.uniform(0.0, min(rr_nom, 0.6))
    times, kinds = [], []
    kind = "N"
    while t < seconds - margin:
        times.append(t)
        kinds.append(kind)
        if kind != "N":
            rr = rr_nom * (1.35 if kind == "V" else 1.25)
        elif rh.irregular:
            rr = max(rr_nom * float(np.exp(rng.normal(0.0, rh.irregular))), 0.32)
        else:
            j = float(np.clip(rng.normal(0.0, rh.jitter), -3 * rh.jitter, 3 * rh.jitter))
            rr = rr_nom * (1.0 + j)
        next_kind = "N"
        if rh.ectopic_p and kind == "N" and rng.random() < rh.ectopic_p:
            next_kind = rh.ectopic_kind
            rr = 0.62 * rr_nom
        t += rr
        kind = next_kind
    return np.array(times), tuple(kinds)


def synth_generate(
    cls: str,
    seed: int,
    fs: float = 257.0,
    seconds: float = 16.0,
    *,
    heart_rate: float | None = None,
    record_id: str | None = None,
) -> tuple[EcgRecording, SynthTruth]:
    """Generate one deterministic recording of diagnosis ``cls``.

    ``heart_rate`` overrides the class's nominal rate (bpm).  Returns the
    recording and its ground-truth beat annotations.
    """
    code_index(cls)
    if cls not in _RHYTHMS:
        raise CapabilityError(
            f"synthetic generator supports {GENERATOR_CLASSES}, not {cls!r}")
    if not (fs > 0 and seconds > 0):
        raise CapabilityError("fs and seconds must be positive")
    rh = _RHYTHMS[cls]
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), CODE_INDEX[cls]]))
    hr = float(heart_rate) if heart_rate is not None else float(rng.uniform(*rh.hr))
    n = int(np.floor(seconds * fs + 0.5))
    t = np.arange(n) / fs

    times, kinds = _beat_times(rh, hr, seconds, rng)
    gains = _LEAD_GAINS * (1.0 + rng.normal(0.0, 0.05, _LEAD_GAINS.shape))
    qrs_scale = float(rng.uniform(0.9, 1.1))
    basis = np.zeros((5, n))
    rr_nom = 60.0 / hr
    qt = np.sqrt(min(rr_nom, 1.5))
    for tb, kind in zip(times, kinds):
        for w, (off, amp, width) in enumerate(_WAVES_NORMAL):
            if w == 0 and (kind == "V" or rh.irregular):
                continue  # no P wave before ventricular beats or in AF
            if w in (1, 2, 3):
                width = width * qrs_scale
                if kind == "V":
                    width *= 3.0
                    off *= 2.5
                    amp *= 1.7 if w == 2 else 1.5
            elif w == 4:
                off = off * qt
                if kind == "V":
                    amp, width = -1.5 * amp, width * 1.4
            elif w == 0:
                off = off * qt
                if kind == "A":
                    amp = -0.8 * amp
            center = tb + off
            lo = max(0, int((center - 5 * width) * fs))
            hi = min(n, int((center + 5 * width) * fs) + 2)
            if lo >= hi:
                continue
            seg = t[lo:hi] - center
            basis[w, lo:hi] += amp * np.exp(-0.5 * (seg / width) ** 2)

    signals = gains @ basis
    phase = rng.uniform(0.0, 2 * np.pi, N_LEADS)
    wander_f = rng.uniform(0.15, 0.35)
    signals += 0.05 * np.sin(2 * np.pi * wander_f * t[None, :] + phase[:, None])
    if rh.irregular:
        f_freq = rng.uniform(5.0, 7.0)
        f_phase = rng.uniform(0.0, 2 * np.pi)
        fwave = 0.04 * np.sin(2 * np.pi * f_freq * t + f_phase) \
            + 0.02 * np.sin(2 * np.pi * 1.7 * f_freq * t)
        signals += np.abs(gains[:, :1]) * fwave[None, :]
    signals += rng.normal(0.0, 0.01, signals.shape)

    age = float(rng.integers(20, 90))
    sex = ("male", "female")[int(rng.integers(0, 2))]
    rid = record_id or f"{cls}_{seed}"
    rec = EcgRecording(rid, signals, fs, cls, age, sex)
    peaks = np.floor(times * fs + 0.5).astype(np.int64)
    keep = (peaks >= 0) & (peaks < n)
    truth = SynthTruth(peaks[keep], hr, tuple(k for k, m in zip(kinds, keep) if m), float(fs))
    return rec, truth


def synth_dataset(classes: Sequence[str] = GENERATOR_CLASSES, per_class: int | Sequence[int] = 200,
                  seed: int = 0, fs: float = 257.0, seconds: float = 16.0) -> Dataset:
    """``per_class`` recordings of each class, ids ``<class>_<n>`` in class order."""
    counts = [per_class] * len(classes) if isinstance(per_class, int) else list(per_class)
    if len(counts) != len(classes):
        raise CapabilityError("one count per class required")
    recs = []
    for cls, n in zip(classes, counts):
        for j in range(int(n)):
            rec, _ = synth_generate(cls, derive_seed(seed, j), fs, seconds, record_id=f"{cls}_{j:05d}")
            recs.append(rec)
    return Dataset(tuple(recs), provenance=f"synthetic seed={seed}")
