"""Recording data model, CSV ingestion and length/rate normalization."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from ._util import round_half_up
from .errors import ArgumentError, LabelError, SchemaError

log = logging.getLogger(__name__)

# Order fixes the integer class index 0..26.
DIAGNOSIS_CODES: tuple[str, ...] = (
    "IAVB", "abQRS", "AF", "LAE", "LAD", "LBBB", "LVH", "LQRSV", "MI", "MIs",
    "NSSTTA", "OldMI", "PR", "PAC", "LQT", "QAb", "RBBB", "SA", "SB", "NSR",
    "STach", "STD", "STE", "STIAb", "TAb", "TInv", "VEB",
)
CODE_INDEX: dict[str, int] = {code: i for i, code in enumerate(DIAGNOSIS_CODES)}
N_CLASSES = len(DIAGNOSIS_CODES)

LEADS: tuple[str, ...] = (
    "I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6",
)
N_LEADS = len(LEADS)
LEAD_II = 1

SEXES = ("male", "female", "unknown")
_SEX_CODES = {"M": "male", "F": "female", "U": "unknown"}
_SEX_LETTERS = {v: k for k, v in _SEX_CODES.items()}


def code_index(code: str) -> int:
    try:
        return CODE_INDEX[code]
    except KeyError:
        raise LabelError(f"unknown diagnosis code {code!r}") from None


@dataclass(frozen=True)
class EcgRecording:
    """One 12-lead recording with demographics and a single diagnosis label.

    ``signals`` has shape ``(12, d)`` in millivolts; the array is made
    read-only on construction.
    """

    id: str
    signals: np.ndarray
    fs: float
    label: str
    age: float | None = None
    sex: str = "unknown"

    def __post_init__(self) -> None:
        sig = np.array(self.signals, dtype=np.float64)
        if sig.ndim != 2 or sig.shape[0] != N_LEADS:
            raise SchemaError(f"{self.id}: expected 12 channels, got shape {sig.shape}")
        if sig.shape[1] < 1:
            raise SchemaError(f"{self.id}: channels are empty")
        if not np.all(np.isfinite(sig)):
            raise SchemaError(f"{self.id}: non-finite sample values")
        if not (self.fs > 0 and math.isfinite(self.fs)):
            raise SchemaError(f"{self.id}: sampling rate must be positive, got {self.fs}")
        code_index(self.label)
        if self.sex not in SEXES:
            raise SchemaError(f"{self.id}: sex must be one of {SEXES}, got {self.sex!r}")
        sig.flags.writeable = False
        object.__setattr__(self, "signals", sig)
        object.__setattr__(self, "fs", float(self.fs))

    @property
    def n_samples(self) -> int:
        return self.signals.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.fs

    @property
    def label_index(self) -> int:
        return CODE_INDEX[self.label]

    def with_signals(self, signals: np.ndarray, fs: float | None = None) -> "EcgRecording":
        return EcgRecording(self.id, signals, self.fs if fs is None else fs,
                            self.label, self.age, self.sex)


@dataclass(frozen=True)
class RecordError:
    record_id: str
    kind: str
    message: str

    def __str__(self) -> str:
        return f"{self.record_id}: {self.kind}: {self.message}"


@dataclass(frozen=True)
class Dataset:
    recordings: tuple[EcgRecording, ...]
    provenance: str = ""
    rejected: tuple[RecordError, ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "recordings", tuple(self.recordings))
        ids = [r.id for r in self.recordings]
        if len(set(ids)) != len(ids):
            raise SchemaError("recording ids must be unique within a dataset")

    def __len__(self) -> int:
        return len(self.recordings)

    def __iter__(self) -> Iterator[EcgRecording]:
        return iter(self.recordings)

    def __getitem__(self, i: int) -> EcgRecording:
        return self.recordings[i]

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label_index for r in self.recordings], dtype=np.int64)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.recordings]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset(tuple(self.recordings[i] for i in indices), self.provenance)


# --- CSV record format -------------------------------------------------------

def _parse_header(line: str) -> dict[str, str]:
    fields = {}
    for part in line.strip().split(","):
        key, sep, value = part.partition("=")
        if not sep:
            raise SchemaError(f"malformed header field {part!r}")
        fields[key.strip()] = value.strip()
    missing = {"fs", "age", "sex", "label"} - fields.keys()
    if missing:
        raise SchemaError(f"header missing {sorted(missing)}")
    return fields


def read_record(path: str | Path, record_id: str) -> EcgRecording:
    """Parse one record file; raises SchemaError/LabelError/OSError."""
    path = Path(path)
    with path.open() as fh:
        header = _parse_header(fh.readline())
        label = header["label"]
        code_index(label)
        try:
            fs = float(int(header["fs"]))
        except ValueError:
            raise SchemaError(f"fs must be an integer, got {header['fs']!r}") from None
        age = None if header["age"].upper() == "NA" else float(int(header["age"]))
        if header["sex"] not in _SEX_CODES:
            raise SchemaError(f"sex must be M, F or U, got {header['sex']!r}")
        rows = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not rows:
        raise SchemaError("record has no samples")
    split = [ln.split(",") for ln in rows]
    widths = {len(r) for r in split}
    if widths != {N_LEADS}:
        raise SchemaError(f"expected 12 channels per line, got {sorted(widths)}")
    try:
        samples = np.array(split, dtype=np.float64)
    except ValueError as exc:
        raise SchemaError(f"unparseable sample: {exc}") from None
    return EcgRecording(record_id, samples.T, fs, label, age, _SEX_CODES[header["sex"]])


def write_record(rec: EcgRecording, path: str | Path) -> None:
    fs = rec.fs
    if fs != int(fs):
        raise ArgumentError("record format stores integer sampling rates only")
    age = "NA" if rec.age is None else str(int(round(rec.age)))
    lines = [f"fs={int(fs)},age={age},sex={_SEX_LETTERS[rec.sex]},label={rec.label}"]
    lines.extend(",".join(repr(float(v)) for v in row) for row in rec.signals.T)
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(manifest_path: str | Path) -> Dataset:
    """Load a manifest of ``<id>,<relative-path>`` lines.

    Invalid records are skipped and reported in ``Dataset.rejected`` with a
    kind of ``"schema error"``, ``"label error"`` or ``"io error"``. A
    missing manifest raises FileNotFoundError.
    """
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    recordings: list[EcgRecording] = []
    rejected: list[RecordError] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(manifest_path.read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        rec_id, sep, rel = line.partition(",")
        rec_id, rel = rec_id.strip(), rel.strip()
        if not sep or not rec_id or not rel:
            rejected.append(RecordError(f"line{lineno}", "schema error", "malformed manifest line"))
            continue
        if rec_id in seen:
            rejected.append(RecordError(rec_id, "schema error", "duplicate id"))
            continue
        try:
            rec = read_record(base / rel, rec_id)
        except LabelError as exc:
            rejected.append(RecordError(rec_id, "label error", str(exc)))
        except SchemaError as exc:
            rejected.append(RecordError(rec_id, "schema error", str(exc)))
        except OSError as exc:
            rejected.append(RecordError(rec_id, "io error", str(exc)))
        else:
            seen.add(rec_id)
            recordings.append(rec)
    for err in rejected:
        log.warning("load: rejected %s", err)
    return Dataset(tuple(recordings), provenance=str(manifest_path), rejected=tuple(rejected))


def write_dataset(ds: Dataset | Sequence[EcgRecording], out_dir: str | Path,
                  manifest_name: str = "manifest.csv") -> Path:
    out_dir = Path(out_dir)
    rec_dir = out_dir / "records"
    rec_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for rec in ds:
        rel = f"records/{rec.id}.csv"
        write_record(rec, out_dir / rel)
        lines.append(f"{rec.id},{rel}")
    manifest = out_dir / manifest_name
    manifest.write_text("\n".join(lines) + ("\n" if lines else ""))
    return manifest


# --- rate / length normalization --------------------------------------------

def resample(rec: EcgRecording, target_fs: float) -> EcgRecording:
    """Linear interpolation onto a uniform grid of round(d * target_fs / fs) samples."""
    if not target_fs > 0:
        raise ArgumentError(f"target_fs must be positive, got {target_fs}")
    d = rec.n_samples
    d_new = max(1, round_half_up(d * target_fs / rec.fs))
    if d_new == d and target_fs == rec.fs:
        return rec
    t_old = np.arange(d) / rec.fs
    t_new = np.arange(d_new) / target_fs
    out = np.empty((N_LEADS, d_new))
    for c in range(N_LEADS):
        out[c] = np.interp(t_new, t_old, rec.signals[c])
    return rec.with_signals(out, fs=target_fs)


def fix_length(rec: EcgRecording, seconds: float) -> EcgRecording:
    """Truncate (keep prefix) or zero-pad (suffix) to round(seconds * fs) samples."""
    if not seconds > 0:
        raise ArgumentError(f"seconds must be positive, got {seconds}")
    n = max(1, round_half_up(seconds * rec.fs))
    d = rec.n_samples
    if n == d:
        return rec
    if n < d:
        return rec.with_signals(rec.signals[:, :n])
    out = np.zeros((N_LEADS, n))
    out[:, :d] = rec.signals
    return rec.with_signals(out)


def normalize_recording(rec: EcgRecording, fs: float = 257.0, seconds: float = 16.0) -> EcgRecording:
    return fix_length(resample(rec, fs), seconds)
