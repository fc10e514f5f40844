"""Acceptance suite: every primary criterion at its stated tolerance.

Each test prints one pass/fail line in the terminal summary (see conftest).
The heavy experiment fixtures are session-scoped and shared between the
criteria that read them.  Budgets are asserted alongside the criteria.
"""

import csv
import math
import os
import tempfile
import time

import numpy as np
import pytest

from dynlab import autodiff as ad
from dynlab import metrics, runio, systems
from dynlab.autodiff import Tensor
from dynlab.spiking import SpikingModel
from dynlab.systems import EncodingConfig, SystemSpec, init_state

from conftest import record_criterion

# desk-scale configuration of the experiment criteria
EXP1_READOUT = "count"
EXP1_LOGIT_SCALE = 0.5
EXP1_SEEDS = (0, 1, 2)
EXP2_SEEDS = (0, 1, 2)
EXP3_SEEDS = (0, 1, 2, 3, 4)
EXP3_EPISODES = 800
PAC_SEEDS = (0, 1, 2)

SCAN_DELTAS = (-1.5, 2.0, 10.0)
SCAN_T_GRID = (6.0, 8.0, 12.0, 16.0)
SCAN_N_GRID = (64, 128, 256)


def _check(name, passed, detail=""):
    record_criterion(name, bool(passed), detail)
    assert passed, f"{name}: {detail}"


@pytest.fixture(scope="session")
def digits_dataset():
    from sklearn.datasets import load_digits

    from dynlab.classify import load_tabular

    digits = load_digits()
    path = os.path.join(tempfile.mkdtemp(prefix="dynlab_acc_"), "digits.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for x, y in zip(digits.data, digits.target):
            writer.writerow(list(x) + [int(y)])
    return load_tabular(path, seed=0)


class TestLyapunovOracle:
    def test_a1_lyapunov_sum_and_signs(self):
        t0 = time.time()
        expected_sign = {-1.5: 1, 0.0: 1, 2.0: -1, 10.0: -1}  # reference table signs
        sums_ok, signs_ok, details = True, True, []
        for delta, sign in expected_sign.items():
            rep = metrics.lyapunov_spectrum(SystemSpec.duffing(delta), init_state(1.0))
            target = -2.0 * delta
            tol = max(0.1 * abs(target), 0.05)
            sums_ok &= abs(rep.sum - target) <= tol
            signs_ok &= math.copysign(1, rep.lam_max) == sign
            details.append(f"d={delta:g}: sum={rep.sum:.3f} lmax={rep.lam_max:.3f}")
        elapsed = time.time() - t0
        _check(
            "A1 lyapunov oracle (sum within 10% of -2*delta, lam_max signs, <30s)",
            sums_ok and signs_ok and elapsed < 30,
            "; ".join(details) + f"; {elapsed:.1f}s",
        )


class TestAISDip:
    def test_a2_ais_dip_ordering(self):
        t0 = time.time()
        rows = metrics.ais_table([-1.5, 2.0, 10.0], EncodingConfig(4.0, 30),
                                 n_inputs=100, bins=16, seed=7)
        by_delta = {r["delta"]: r["ais_bits"] for r in rows}
        dip = by_delta[2.0] < min(by_delta[-1.5], by_delta[10.0])
        elapsed = time.time() - t0
        _check(
            "A2 AIS dip (delta=2.0 below both extremes, <1min)",
            dip and elapsed < 60,
            f"{by_delta[-1.5]:.3f} / {by_delta[2.0]:.3f} / {by_delta[10.0]:.3f}; {elapsed:.1f}s",
        )


class TestSpectralSignature:
    def test_a3_orderings_every_cell(self):
        t0 = time.time()
        rows = metrics.spectral_scan(SCAN_DELTAS, SCAN_T_GRID, SCAN_N_GRID, seeds=[0, 1, 2])
        cell = {(r["delta"], r["T"], r["N"]): r for r in rows}
        centroid_ok = entropy_ok = True
        for t_max in SCAN_T_GRID:
            for n in SCAN_N_GRID:
                centroid_ok &= cell[(2.0, t_max, n)]["centroid"] < cell[(-1.5, t_max, n)]["centroid"]
                entropy_ok &= cell[(2.0, t_max, n)]["entropy"] > cell[(10.0, t_max, n)]["entropy"]
        elapsed = time.time() - t0
        _check(
            "A3 spectral signature (centroid and entropy orderings at every cell, <5min)",
            centroid_ok and entropy_ok and elapsed < 300,
            f"{len(rows)} cells; {elapsed:.1f}s",
        )


class TestGradientIntegrity:
    def test_a4_grad_checks(self):
        t0 = time.time()
        rng = np.random.default_rng(0)
        reports = []

        x = Tensor(rng.standard_normal((4, 5)))
        w = Tensor(rng.standard_normal((5, 3)), True, "w")
        gain = Tensor(np.ones(3), True, "g")
        bias = Tensor(np.zeros(3), True, "b")

        def dense():
            h = ad.layer_norm(ad.matmul(x, w), gain, bias)
            return ad.mse(ad.tanh(h), 0.2)

        reports.append(ad.grad_check(lambda: ([w, gain, bias], dense), tolerance=1e-4))

        logits_w = Tensor(rng.standard_normal((5, 4)), True, "lw")

        def ce():
            return ad.softmax_cross_entropy(ad.matmul(x, ad.concat([logits_w, logits_w], axis=1)),
                                            [0, 3, 5, 7])

        reports.append(ad.grad_check(lambda: ([logits_w], ce), tolerance=1e-4))

        model = SpikingModel([6, 8, 8], 3, beta=0.9, rng=np.random.default_rng(1))
        model.set_smooth(True)
        xs = np.random.default_rng(2).standard_normal((2, 4, 6))

        def spiking():
            return ad.softmax_cross_entropy(model.run_sequence(xs), [0, 2])

        reports.append(ad.grad_check(lambda: (model.params(), spiking), tolerance=1e-4))

        elapsed = time.time() - t0
        worst = max(r.worst for r in reports)
        _check(
            "A4 gradient integrity (primitives and 2-layer spiking model at 1e-4, <1min)",
            all(r.passed for r in reports) and elapsed < 60,
            f"worst rel err {worst:.2e}; {elapsed:.1f}s",
        )


@pytest.fixture(scope="session")
def exp1_rows(digits_dataset):
    from dynlab.classify import DELTA_GRID, TrainConfig, cross_matrix

    t0 = time.time()
    base = TrainConfig(max_epochs=50, patience=10, readout=EXP1_READOUT,
                       logit_scale=EXP1_LOGIT_SCALE)
    rows, _, failures = cross_matrix(
        digits_dataset, ["snn"], [-1.5, 2.0], DELTA_GRID, seeds=list(EXP1_SEEDS),
        base_cfg=base, processes=2,
    )
    return rows, failures, time.time() - t0


class TestExp1:
    def test_a5_asymmetry_and_collapse(self, exp1_rows):
        rows, failures, elapsed = exp1_rows
        ood = {}
        for dt in (-1.5, 2.0):
            per_seed = []
            for seed in EXP1_SEEDS:
                accs = {
                    r["delta_test"]: r["accuracy"]
                    for r in rows
                    if r["delta_train"] == dt and r["seed"] == seed
                }
                per_seed.append(np.mean([a for d, a in accs.items() if d != dt]))
            ood[dt] = float(np.mean(per_seed))
        margin = ood[2.0] - ood[-1.5]
        collapses = []
        for seed in EXP1_SEEDS:
            accs = {
                r["delta_test"]: r["accuracy"]
                for r in rows
                if r["delta_train"] == -1.5 and r["seed"] == seed
            }
            collapses.append(accs[-1.5] - accs[10.0])
        collapse = float(np.mean(collapses))
        _check(
            "A5 exp1 asymmetry (OOD margin >= 20 pts, collapse >= 30 pts, <30min)",
            not failures and margin >= 20.0 and collapse >= 30.0 and elapsed < 1800,
            f"margin={margin:.1f} collapse={collapse:.1f} ood2={ood[2.0]:.1f} "
            f"ood-1.5={ood[-1.5]:.1f}; {elapsed:.0f}s",
        )

    def test_a6_cv_anticorrelation(self, exp1_rows):
        from dynlab.classify import cv_analysis

        rows, _, _ = exp1_rows
        report = cv_analysis(rows)
        r1 = report.pearson_by_layer.get(1, math.nan)
        _check(
            "A6 CV anti-correlation (layer-1 pearson r <= -0.4)",
            not math.isnan(r1) and r1 < 0 and abs(r1) >= 0.4,
            f"r={r1:.3f}",
        )


@pytest.fixture(scope="session")
def exp2_reports():
    from dynlab.autoencoder import EncoderKind, SAETrainConfig, extract_patches, run_sae_grid

    t0 = time.time()
    patches = extract_patches(None, n=5000, seed=0)
    encoders = [EncoderKind.named(n) for n in
                ("baseline", "random", "linear", "poisson",
                 "expansive", "critical", "transition", "dissipative")]
    reports, failures = run_sae_grid(patches, encoders, [1.0, 0.0], list(EXP2_SEEDS),
                                     cfg=SAETrainConfig(epochs=30), processes=2)
    return reports, failures, time.time() - t0


def _mean_by_encoder(reports, lam, field):
    out = {}
    for r in reports:
        if r.sparsity_weight == lam:
            out.setdefault(r.encoder, []).append(getattr(r, field))
    return {k: float(np.mean(v)) for k, v in out.items()}


class TestExp2:
    def test_a7_emergence_and_sparsity(self, exp2_reports):
        reports, failures, elapsed = exp2_reports
        sigma = _mean_by_encoder(reports, 1.0, "sigma_rf")
        sparsity = _mean_by_encoder(reports, 1.0, "sparsity_loss")
        transition, baseline = sigma["dynamic(delta=2)"], sigma["baseline"]
        emergence = transition >= 2.5 * baseline
        poisson = sparsity["poisson"]
        poisson_ok = all(
            poisson <= 0.1 * v for k, v in sparsity.items() if k != "poisson"
        )
        sigma0 = _mean_by_encoder(reports, 0.0, "sigma_rf")
        transition0 = sigma0["dynamic(delta=2)"]
        lambda0_ok = all(
            transition0 >= 2.0 * v for k, v in sigma0.items() if k != "dynamic(delta=2)"
        )
        _check(
            "A7 exp2 emergence (transition >= 2.5x baseline, poisson sparsity <= 0.1x, "
            "lambda=0 transition >= 2x, <45min)",
            not failures and emergence and poisson_ok and lambda0_ok and elapsed < 2700,
            f"sigma(tr)={transition:.4f} sigma(base)={baseline:.4f} "
            f"poisson_sparsity={poisson:.2e} sigma0(tr)={transition0:.4f}; {elapsed:.0f}s",
        )


class TestUniversality:
    def test_a8_lorenz_thomas_orderings(self):
        from dynlab.autoencoder import SAETrainConfig, extract_patches, universality_run

        t0 = time.time()
        patches = extract_patches(None, n=5000, seed=0)
        cfg = SAETrainConfig(epochs=30)
        lorenz_rows, lf = universality_run(patches, "lorenz", [0.5, 28.0], 1.0,
                                           seeds=list(EXP2_SEEDS), cfg=cfg, processes=2)
        thomas_rows, tf = universality_run(patches, "thomas", [0.1, 1.0], 1.0,
                                           seeds=list(EXP2_SEEDS), cfg=cfg, processes=2)

        def mean_sigma(rows, param):
            return float(np.mean([r["sigma_rf"] for r in rows if r["param"] == param]))

        lorenz_ok = mean_sigma(lorenz_rows, 0.5) > mean_sigma(lorenz_rows, 28.0)
        thomas_ok = mean_sigma(thomas_rows, 1.0) > mean_sigma(thomas_rows, 0.1)
        elapsed = time.time() - t0
        _check(
            "A8 universality (lorenz rho=0.5 > rho=28; thomas b=1.0 > b=0.1, <45min)",
            not (lf or tf) and lorenz_ok and thomas_ok and elapsed < 2700,
            f"lorenz {mean_sigma(lorenz_rows, 0.5):.4f} vs {mean_sigma(lorenz_rows, 28.0):.4f}; "
            f"thomas {mean_sigma(thomas_rows, 1.0):.4f} vs {mean_sigma(thomas_rows, 0.1):.4f}; "
            f"{elapsed:.0f}s",
        )


@pytest.fixture(scope="session")
def exp3_rows():
    from dynlab.cartpole import AgentSpec, run_sweep

    t0 = time.time()
    specs = [
        AgentSpec.architecture_level("mlp_raw"),
        AgentSpec.architecture_level("snn_leaky", beta=0.5),
        AgentSpec.architecture_level("snn_leaky", beta=0.1),
        AgentSpec.encoding_level("snn_encoded", delta=2.0),
        AgentSpec.encoding_level("snn_encoded", delta=-1.5),
    ]
    rows, failures = run_sweep(specs, seeds=list(EXP3_SEEDS), protocol="fixed",
                               episodes=EXP3_EPISODES, processes=2)
    return rows, failures, time.time() - t0


def _gap_mean(rows, kind, knob):
    gaps = [
        r["gap"]
        for r in rows
        if r["kind"] == kind
        and (knob is None or r["delta_or_beta"] == knob)
        and r["converged"]
        and not math.isnan(r["gap"])
    ]
    return (float(np.mean(gaps)), len(gaps)) if gaps else (math.nan, 0)


class TestExp3:
    def test_a9_rl_orderings_and_flags(self, exp3_rows):
        rows, failures, elapsed = exp3_rows
        mlp_gap, mlp_n = _gap_mean(rows, "mlp_raw", None)
        leaky_gap, leaky_n = _gap_mean(rows, "snn_leaky", 0.5)
        enc2_gap, enc2_n = _gap_mean(rows, "snn_encoded", 2.0)
        enc15_gap, enc15_n = _gap_mean(rows, "snn_encoded", -1.5)
        b01 = [r for r in rows if r["kind"] == "snn_leaky" and r["delta_or_beta"] == 0.1]
        b01_flagged = bool(b01) and not any(r["converged"] for r in b01)
        arch_ok = (mlp_n and leaky_n) and leaky_gap < 0.5 * mlp_gap
        enc_ok = (enc2_n and enc15_n) and enc2_gap < enc15_gap
        _check(
            "A9 exp3 (leaky beta=0.5 gap < 0.5x MLP gap; encoded delta=2 < delta=-1.5; "
            "beta=0.1 flagged non-converged, <2h)",
            not failures and arch_ok and enc_ok and b01_flagged and elapsed < 7200,
            f"mlp={mlp_gap:.1f}(n={mlp_n}) leaky0.5={leaky_gap:.1f}(n={leaky_n}) "
            f"enc2={enc2_gap:.1f}(n={enc2_n}) enc-1.5={enc15_gap:.1f}(n={enc15_n}); "
            f"{elapsed:.0f}s",
        )


class TestPacBayes:
    def test_a10_arithmetic_and_orderings(self, digits_dataset):
        from dynlab.pacbayes import (
            BayesConfig,
            GradStatsConfig,
            gradient_stats,
            kl_gaussian,
            pac_bound,
            train_bayesian_snn,
        )

        t0 = time.time()
        table_row = abs(pac_bound(0.061, 2300.0, 1257, 0.05) - 1.019) <= 0.005
        kl_trivial = kl_gaussian(np.zeros(3), np.ones(3), 1.0) == pytest.approx(0.0, abs=1e-12)
        kl_hand = kl_gaussian([1.0], [1.0], 1.0) == pytest.approx(0.5, abs=1e-12)
        derived = pac_bound(0.0, 0.0, 1001, 0.05) == pytest.approx(
            math.sqrt(math.log(2.0 * math.sqrt(1001) / 0.05) / 2000.0), abs=1e-12
        )

        kls = {-1.5: [], 2.0: []}
        cvs = {-1.5: [], 2.0: []}
        for delta in (-1.5, 2.0):
            for seed in PAC_SEEDS:
                report = train_bayesian_snn(digits_dataset, delta,
                                            BayesConfig(seed=seed, epochs=100))
                kls[delta].append(report.kl)
                stats = gradient_stats(digits_dataset, delta,
                                       GradStatsConfig(seed=seed, epochs=200))
                cvs[delta].append(stats.cv_grad)
        kl_ok = np.mean(kls[2.0]) < np.mean(kls[-1.5])
        cv_ok = np.mean(cvs[2.0]) < np.mean(cvs[-1.5])
        elapsed = time.time() - t0
        _check(
            "A10 pac-bayes (bound arithmetic exact; KL and CV_grad orderings, <30min)",
            table_row and kl_trivial and kl_hand and derived and kl_ok and cv_ok
            and elapsed < 1800,
            f"KL {np.mean(kls[2.0]):.3g} < {np.mean(kls[-1.5]):.3g}; "
            f"CV {np.mean(cvs[2.0]):.3f} < {np.mean(cvs[-1.5]):.3f}; {elapsed:.0f}s",
        )


class TestDeterminism:
    def test_a11_byte_identical_reruns(self, tmp_path):
        from dynlab.cli import main

        jobs = [
            (["encode", "--delta", "2.0", "--features", "1.0,-0.5",
              "--t-total", "4.0", "--n-steps", "10"], "trajectories.csv"),
            (["lyapunov", "--deltas", "2.0", "--t-total", "200"], "lyapunov.csv"),
            (["ais", "--deltas=-1.5,2.0", "--n-inputs", "40"], "ais.csv"),
            (["spectral-scan", "--deltas", "2.0", "--t-grid", "8.0",
              "--n-grid", "64", "--n-seeds", "2"], "spectral_scan.csv"),
            (["rf-scan", "--deltas", "2.0", "--lambdas", "1.0", "--n-seeds", "1",
              "--epochs", "1", "--patches", "synthetic", "--n-patches", "256"], "rf_scan.csv"),
        ]
        all_ok = True
        for args, artifact in jobs:
            paths = []
            for attempt in ("a", "b"):
                out = os.path.join(tmp_path, f"{args[0]}_{attempt}")
                code = main(args + ["--out", out, "--seed", "5"])
                assert code == 0, f"{args[0]} exited {code}"
                paths.append(os.path.join(out, artifact))
            with open(paths[0], "rb") as fa, open(paths[1], "rb") as fb:
                same = fa.read() == fb.read()
            all_ok &= same
        _check("A11 determinism (identical manifests reproduce identical CSV bytes)", all_ok)
