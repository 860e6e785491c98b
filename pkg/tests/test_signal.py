import numpy as np
import pytest
from hypothesis import given, strategies as st

from fedecg.errors import CapabilityError, LabelError, SchemaError
from fedecg.signal import (CODE_INDEX, DIAGNOSIS_CODES, EcgRecording, fix_length, load_dataset,
                           resample, write_dataset, write_record)
from fedecg.synth import GENERATOR_CLASSES, synth_dataset, synth_generate


def rec_of(signals, fs=500.0, label="NSR", **kw):
    return EcgRecording("x", np.asarray(signals, dtype=np.float64), fs, label, **kw)


def test_code_table_is_a_bijection():
    assert len(DIAGNOSIS_CODES) == 27 == len(set(DIAGNOSIS_CODES))
    assert sorted(CODE_INDEX.values()) == list(range(27))
    assert all(DIAGNOSIS_CODES[CODE_INDEX[c]] == c for c in DIAGNOSIS_CODES)


@pytest.mark.parametrize("signals,fs,label,err", [
    (np.zeros((11, 10)), 500, "NSR", SchemaError),
    (np.zeros((12, 0)), 500, "NSR", SchemaError),
    (np.zeros((12, 10)), 0, "NSR", SchemaError),
    (np.full((12, 10), np.nan), 500, "NSR", SchemaError),
    (np.zeros((12, 10)), 500, "XYZ", LabelError),
])
def test_recording_invariants(signals, fs, label, err):
    with pytest.raises(err):
        EcgRecording("x", signals, fs, label)


def _dataset_dir(tmp_path, n=3):
    recs = [synth_generate("NSR", s, fs=100, seconds=3)[0] for s in range(n)]
    write_dataset(recs, tmp_path)
    return tmp_path / "manifest.csv"


def test_load_three_valid_records(tmp_path):
    ds = load_dataset(_dataset_dir(tmp_path))
    assert len(ds) == 3 and ds.rejected == ()
    assert ds[0].signals.shape == (12, 300) and ds[0].fs == 100


def test_load_rejects_eleven_channel_record(tmp_path):
    manifest = _dataset_dir(tmp_path)
    rows = (tmp_path / "records" / "NSR_1.csv").read_text().splitlines()
    body = [",".join(r.split(",")[:11]) for r in rows[1:]]
    (tmp_path / "records" / "NSR_1.csv").write_text("\n".join([rows[0]] + body) + "\n")
    ds = load_dataset(manifest)
    assert len(ds) == 2
    assert [e.record_id for e in ds.rejected] == ["NSR_1"]
    assert ds.rejected[0].kind == "schema error"


def test_load_rejects_unknown_label(tmp_path):
    manifest = _dataset_dir(tmp_path)
    path = tmp_path / "records" / "NSR_2.csv"
    text = path.read_text().replace("label=NSR", "label=BOGUS", 1)
    path.write_text(text)
    ds = load_dataset(manifest)
    assert len(ds) == 2 and ds.rejected[0].kind == "label error"


def test_empty_manifest_and_missing_manifest(tmp_path):
    (tmp_path / "manifest.csv").write_text("")
    ds = load_dataset(tmp_path / "manifest.csv")
    assert len(ds) == 0 and ds.rejected == ()
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "absent.csv")


def test_record_roundtrip_preserves_demographics(tmp_path):
    rec = rec_of(np.arange(24.0).reshape(12, 2) / 7, fs=250, label="AF", age=71, sex="female")
    write_record(rec, tmp_path / "r.csv")
    from fedecg.signal import read_record
    back = read_record(tmp_path / "r.csv", "x")
    assert back.age == 71 and back.sex == "female" and back.label == "AF" and back.fs == 250
    np.testing.assert_array_equal(back.signals, rec.signals)


def test_resample_constant_stays_constant():
    out = resample(rec_of(np.full((12, 500), 2.0)), 257)
    assert np.all(out.signals == 2.0)


def test_resample_length_formula():
    out = resample(rec_of(np.zeros((12, 500)), fs=500), 257)
    assert out.n_samples == 257 and out.fs == 257 and out.label == "NSR"


def test_resample_keeps_dominant_frequency():
    t = np.arange(5000) / 500.0
    x = np.tile(np.sin(2 * np.pi * 5.0 * t), (12, 1))
    out = resample(rec_of(x), 257)
    spec = np.abs(np.fft.rfft(out.signals[0]))
    freqs = np.fft.rfftfreq(out.n_samples, 1 / 257)
    assert abs(freqs[np.argmax(spec)] - 5.0) <= freqs[1]


@given(st.integers(10, 4000), st.sampled_from([250.0, 257.0, 360.0, 500.0]))
def test_resample_idempotent_on_length(d, target):
    once = resample(rec_of(np.zeros((12, d))), target)
    assert resample(once, target).n_samples == once.n_samples


def test_fix_length_truncates_prefix():
    x = np.tile(np.arange(20 * 257, dtype=float), (12, 1))
    out = fix_length(rec_of(x, fs=257), 16)
    np.testing.assert_array_equal(out.signals, x[:, :16 * 257])


def test_fix_length_pads_with_zeros():
    x = np.ones((12, 10 * 257))
    out = fix_length(rec_of(x, fs=257), 16)
    assert np.all(out.signals[:, -6 * 257:] == 0.0)
    assert np.all(out.signals[:, :10 * 257] == 1.0)


def test_sixteen_seconds_at_257_hz():
    assert fix_length(rec_of(np.ones((12, 5)), fs=257), 16).n_samples == 4112


@given(st.integers(1, 6000), st.floats(0.5, 20.0))
def test_fix_length_output_length(d, seconds):
    out = fix_length(rec_of(np.ones((12, d)), fs=257), seconds)
    assert out.n_samples == int(np.floor(seconds * 257 + 0.5))


def test_synth_nsr_rr_near_one_second():
    _, truth = synth_generate("NSR", 1, 257, 16)
    assert np.all(np.abs(truth.rr - 1.0) <= 0.05)


@pytest.mark.parametrize("seed", range(5))
def test_synth_rate_classes(seed):
    _, tach = synth_generate("STach", seed)
    _, brady = synth_generate("SB", seed)
    assert 60.0 / tach.rr.mean() > 100
    assert 60.0 / brady.rr.mean() < 60


def test_synth_is_bitwise_reproducible():
    a, ta = synth_generate("AF", 9)
    b, tb = synth_generate("AF", 9)
    assert a.signals.tobytes() == b.signals.tobytes()
    np.testing.assert_array_equal(ta.r_peaks, tb.r_peaks)


def test_synth_rejects_unsupported_class():
    with pytest.raises(CapabilityError):
        synth_generate("MI", 0)


def test_synth_dataset_shape():
    ds = synth_dataset(GENERATOR_CLASSES, 2, seed=3, seconds=4)
    assert len(ds) == 12 and len(set(ds.ids)) == 12
    assert sorted(set(r.label for r in ds)) == sorted(GENERATOR_CLASSES)
