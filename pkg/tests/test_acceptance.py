"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import math
import os
import time
from collections import Counter

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, make_matrix
from fedecg.balancing import ROS_RUS, SMOTE_RUS, plan_balance, ros_rus, smote_rus
from fedecg.features import (FeatureRegistry, MORPH_NAMES, STAT_OPS, detect_r_peaks, format_spectral_name,
                             morphological_features, parse_spectral_name, spectral_stats)
from fedecg.federation import (FederationConfig, client_seed, fedavg, init_seed, label_audit, partition_iid,
                               partition_noniid, run_federation)
from fedecg.metrics import ConfusionMatrix, confusion, weighted_metrics
from fedecg.models import (DnnConfig, LstmConfig, ModelParams, TrainConfig, gradient_check, init_params,
                           train_local)
from fedecg.normalization import Transcript, fit_pooled_scaler, fit_robust_scaler, tolerance
from fedecg.pipeline import ExperimentConfig, SynthSpec, prepare_data, run_scenario, with_overrides
from fedecg.selection import fit_gbdt, importance
from fedecg.signal import LEAD_II
from fedecg.synth import synth_generate
from fedecg.wavelet import dwt


class Gate:
    """Collects the checks of one criterion and records a single verdict line."""

    def __init__(self, number: int, title: str):
        self.number, self.title = number, title
        self.failures: list[str] = []
        self.notes: list[str] = []

    def check(self, ok: bool, what: str) -> None:
        if not ok:
            self.failures.append(what)

    def note(self, text: str) -> None:
        self.notes.append(text)

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        secs = time.perf_counter() - self.t0
        if exc_type is not None:
            self.failures.append(f"{exc_type.__name__}: {exc}")
        verdict = "FAIL" if self.failures else "PASS"
        detail = "; ".join(self.notes + [f"failed: {f}" for f in self.failures])
        line = f"criterion {self.number}: {verdict} {self.title} ({secs:.1f}s) {detail}".rstrip()
        ACCEPTANCE_LINES.append(line)
        print(line)
        if exc_type is None:
            assert not self.failures, line
        return False


def test_criterion_1_gradient_oracle():
    with Gate(1, "gradient oracle") as g:
        r = np.random.default_rng(1)
        worst = {}
        for cfg in (DnnConfig(), LstmConfig()):
            X = r.normal(size=(8, cfg.input_dim))
            y = r.integers(0, cfg.n_classes, size=8)
            res = gradient_check(init_params(cfg, 3), cfg, X, y, step=1e-5)
            worst[cfg.arch] = res.max_component
            g.check(res.max_component < 1e-4, f"{cfg.arch} max relative error {res.max_component:.2e}")
            g.check(set(res.component) == {n for n, _ in cfg.layout()}, f"{cfg.arch} block coverage")
        g.note(", ".join(f"{k} max rel err {v:.1e}" for k, v in worst.items()))
        g.check(time.perf_counter() - g.t0 < 60, "runtime >= 60 s")


def test_criterion_2_federated_quantiles():
    with Gate(2, "federated quantile oracle") as g:
        r = np.random.default_rng(2)
        reg = FeatureRegistry.default().subset([20])
        eps = tolerance()
        worst = 0.0
        for trial in range(200):
            clients = [r.normal(r.normal() * 0.3, r.uniform(0.01, 0.5), size=(int(r.integers(1, 501)), 1))
                       for _ in range(int(r.integers(1, 9)))]
            tr = Transcript()
            fed = fit_robust_scaler(clients, reg, transcript=tr)
            pooled = fit_pooled_scaler(np.vstack(clients), reg)
            err = max(float(np.max(np.abs(a - b))) for a, b in
                      ((fed.q25, pooled.q25), (fed.median, pooled.median), (fed.q75, pooled.q75)))
            worst = max(worst, err)
            g.check(err <= 2 * eps, f"trial {trial} error {err:.2e}")
            g.check(all(isinstance(t, float) and isinstance(c, int) for t, c in tr.messages()),
                    f"trial {trial} transcript carries more than (threshold, count)")
        g.note(f"max error {worst:.1e} vs bound {2 * eps:.1e}")
        g.check(time.perf_counter() - g.t0 < 30, "runtime >= 30 s")


def test_criterion_3_fedavg_algebra():
    with Gate(3, "FedAvg algebra") as g:
        r = np.random.default_rng(3)
        cfg = DnnConfig(input_dim=12, hidden_layers=2, hidden_units=16)
        X = r.normal(size=(80, 12))
        y = r.integers(0, 27, size=80)
        fm = make_matrix(X, y)
        fc = FederationConfig(n_clients=1, max_rounds=1, model=cfg, train=TrainConfig(epochs=3), seed=7)
        hist = run_federation(fc, [fm], fm)
        ref, _ = train_local(init_params(cfg, init_seed(7)), cfg, fc.train.with_seed(client_seed(7, 0, 1)), X, y)
        g.check(hist.params.flat.tobytes() == ref.flat.tobytes(), "single client differs from centralised")

        def v(x):
            x = np.asarray(x, dtype=np.float64)
            return ModelParams(x, (("w", x.shape),), "DNN", 1, 2)

        g.check(fedavg([v([0, 0]), v([4, 8])], [1, 3]).flat.tolist() == [3.0, 6.0], "[3, 6] example")
        g.check(fedavg([v([1]), v([2]), v([3])], [1, 1, 1]).flat.tolist() == [2.0], "[2] example")
        w = v(r.normal(size=64))
        g.check(fedavg([w, w, w], [2, 5, 9]).flat.tobytes() == w.flat.tobytes(), "identical clients")
        ps = [v(r.normal(size=500)) for _ in range(7)]
        ns = r.integers(1, 10_000, size=7).tolist()
        base = fedavg(ps, ns).flat.tobytes()
        same = sum(fedavg([ps[i] for i in p], [ns[i] for i in p]).flat.tobytes() == base
                   for p in (r.permutation(7) for _ in range(100)))
        g.check(same == 100, f"order invariance held for {same}/100 shuffles")
        g.note(f"order invariance {same}/100 bitwise")


def _dataset(counts, r, dim=4):
    y = np.concatenate([np.full(n, c) for c, n in enumerate(counts) if n])
    return make_matrix(r.normal(size=(y.size, dim)), y)


def test_criterion_4_balancing_contract():
    with Gate(4, "balancing contract") as g:
        r = np.random.default_rng(4)
        trials = 0
        for trial in range(150):
            counts = r.integers(0, 120, size=int(r.integers(2, 10))).tolist()
            if sum(counts) == 0:
                counts[0] = 1
            for beta in (0.0, 0.5, 1.0):
                for mode in (ROS_RUS, SMOTE_RUS):
                    fm = _dataset(counts, r)
                    plan = plan_balance(Counter(fm.y.tolist()), beta, mode)
                    out = ros_rus(fm, plan, trial) if mode == ROS_RUS else smote_rus(fm, plan, 5, trial)
                    got = Counter(out.y.tolist())
                    g.check(all(got[c] == t for c, t in zip(plan.classes, plan.targets)),
                            f"counts {counts} beta {beta} {mode} missed targets")
                    if beta == 1.0:
                        g.check(max(plan.targets) - min(plan.targets) <= 1, f"counts {counts} spread")
                    trials += 1
        for trial in range(500):
            a, b = (int(x) for x in r.integers(1, 2000, size=2))
            for beta in (0.0, 0.5, 1.0):
                p = plan_balance([a, b], beta)
                tau = math.floor(abs(a - b) * beta + 0.5)
                g.check(p.executed_ops == p.tau == tau, f"two-class {a},{b} beta {beta}")
        g.check(plan_balance({0: 100, 1: 20}, 1.0).targets == (60, 60), "{100, 20} example")
        g.note(f"{trials} balanced datasets, 1500 two-class plans")


def _imbalanced_labels(n_total, r):
    weights = 1.0 / np.arange(1, 28) ** 1.6
    counts = np.floor(weights / weights.sum() * n_total).astype(int)
    counts = np.maximum(counts, 8)
    counts[0] += n_total - counts.sum()
    return r.permutation(np.repeat(np.arange(27), counts))


def test_criterion_5_partitioner_contract():
    with Gate(5, "partitioner contract") as g:
        r = np.random.default_rng(5)
        y = _imbalanced_labels(37_704, r)
        g.check(y.size == 37_704, "train size")
        iid = partition_iid(y, 4, seed=11)
        g.check([s.size for s in iid] == [9426] * 4, f"IID sizes {[s.size for s in iid]}")
        a = label_audit(y, iid, 27)
        dev = max(c["max_count_deviation"] for c in a["clients"])
        g.check(dev <= 1.0, f"IID per-class deviation {dev:.2f} records")
        non = partition_noniid(y, 4, seed=11)
        g.check([s.size for s in non] == [9426] * 4, "Non-IID sizes")
        b = label_audit(y, non, 27)
        rel = max(c["max_rel_deviation"] for c in b["clients"])
        g.check(rel > 0.20, f"Non-IID max relative deviation {rel:.3f}")
        g.check(b["unused_records"] >= 1, "no unused records")
        g.note(f"IID max deviation {dev:.2f} records; Non-IID max rel deviation {rel:.2f}, "
               f"{b['unused_records']} unused records")


def test_criterion_6_metrics_oracle():
    with Gate(6, "metrics oracle") as g:
        b = weighted_metrics(confusion([0, 0, 1, 1], [0, 1, 1, 1]))
        g.check(b.accuracy == 0.75, f"accuracy {b.accuracy}")
        g.check(abs(b.f1 - 0.7333333333333333) <= 1e-9, f"weighted F1 {b.f1}")
        r = np.random.default_rng(6)
        for _ in range(1000):
            k = int(r.integers(2, 28))
            M = r.integers(0, 50, size=(k, k)) * (r.random((k, k)) < 0.7)
            M[0, 0] += 1
            m = ConfusionMatrix(M)
            tp, fp, fn = m.tp.sum(), m.fp.sum(), m.fn.sum()
            micro_p, micro_r = tp / (tp + fp), tp / (tp + fn)
            acc = weighted_metrics(m).accuracy
            g.check(micro_p == micro_r == acc, "micro precision/recall differ from accuracy")
            g.check(np.all(m.tp + m.fp + m.fn + m.tn == m.total), "one-vs-rest totals")
            g.check(abs(weighted_metrics(m).recall - acc) < 1e-12, "weighted recall differs from accuracy")
        g.note(f"accuracy {b.accuracy}, weighted F1 {b.f1:.10f}")


@pytest.mark.slow
def test_criterion_7_end_to_end():
    with Gate(7, "end-to-end reproduction") as g:
        base = ExperimentConfig(synthetic=SynthSpec(per_class=400, seed=0), k_features=60, n_clients=4,
                                rounds=10, delta=0.0, balancing=ROS_RUS, beta=1.0, model="DNN")
        data = prepare_data(base)
        f1, curves = {}, {}
        for scen in ("CL", "FL-IID", "FL-NonIID"):
            res = run_scenario(with_overrides(base, scenario=scen), data)
            f1[scen] = res.history.test.f1
            curves[scen] = res.history.f1_curve
        g.check(f1["CL"] >= 0.85, f"CL F1 {f1['CL']:.3f}")
        g.check(abs(f1["FL-IID"] - f1["CL"]) <= 0.10, "FL-IID not within 0.10 of CL")
        g.check(f1["FL-NonIID"] <= f1["FL-IID"] + 0.02, "FL-NonIID above FL-IID + 0.02")
        g.check(abs(f1["FL-NonIID"] - f1["CL"]) <= 0.15, "FL-NonIID not within 0.15 of CL")
        for scen in ("FL-IID", "FL-NonIID"):
            late = np.abs(np.diff(curves[scen]))[8:]
            g.check(len(curves[scen]) == 10 and np.all(late < 0.01),
                    f"{scen} val F1 changes after round 8: {late.tolist()}")
        g.note(" ".join(f"{k} F1 {v:.3f}" for k, v in f1.items()))
        g.check(time.perf_counter() - g.t0 < 15 * 60, "runtime >= 15 min")


@pytest.mark.slow
def test_criterion_8_client_sweep():
    with Gate(8, "client-count sweep") as g:
        base = ExperimentConfig(synthetic=SynthSpec(per_class=200, seed=0), k_features=60, rounds=2,
                                delta=0.0, parallel=True)
        data = prepare_data(base)
        counts = (2, 4, 6, 8, 10)
        cpus = os.cpu_count() or 1
        use_elapsed = cpus >= max(counts)
        per_round = []
        for n in counts:
            rounds = run_scenario(base, data, n).history.rounds
            per_round.append(float(np.mean([x.seconds if use_elapsed else x.critical_seconds for x in rounds])))
        measure = "wall-clock" if use_elapsed else f"critical-path client time ({cpus} CPU)"
        for a, b, n in zip(per_round, per_round[1:], counts[1:]):
            g.check(b <= a * 1.10, f"N={n} per-round {b:.2f}s above {a:.2f}s + 10%")
        g.note(f"{measure} per round: " + ", ".join(f"N={n} {s:.2f}s" for n, s in zip(counts, per_round)))


def test_criterion_9_feature_pipeline():
    with Gate(9, "feature pipeline") as g:
        details = dwt(np.full(4112, 3.7), level=4)[1:]
        worst = max(float(np.max(np.abs(d))) for d in details)
        g.check(worst < 1e-9, f"constant-signal detail {worst:.2e}")
        ent = spectral_stats([1, 1, 1, 1])[STAT_OPS.index("entropy")]
        g.check(ent == 2.0, f"entropy {ent!r}")
        rec, _ = synth_generate("NSR", 0, heart_rate=60.0)
        feats = dict(zip(MORPH_NAMES, morphological_features(rec, detect_r_peaks(rec.signals[LEAD_II], rec.fs))))
        g.check(abs(feats["rr_mean"] - 1.0) <= 0.05, f"rr_mean {feats['rr_mean']:.4f}")
        bad = 0
        for reg in (FeatureRegistry.default(), FeatureRegistry.default(include_signal=True)):
            bad += sum(format_spectral_name(*parse_spectral_name(n)) != n for n in reg.names[len(MORPH_NAMES):])
            bad += FeatureRegistry.from_names(reg.names).names != reg.names
        g.check(bad == 0, f"{bad} registry round-trip failures")
        g.note(f"max detail {worst:.1e}, entropy {ent}, rr_mean {feats['rr_mean']:.4f} s")


def test_criterion_10_selection_sanity():
    with Gate(10, "selection sanity") as g:
        hits = 0
        for seed in range(100):
            r = np.random.default_rng(seed)
            X = r.normal(size=(60, 5))
            y = np.argmax(X[:, :3], axis=1)
            hits += set(importance(fit_gbdt(X, y)).ranking[:3].tolist()) == {0, 1, 2}
        g.check(hits >= 95, f"planted features top-3 in {hits}/100 runs")
        g.note(f"{hits}/100 runs")
