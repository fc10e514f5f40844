"""Command-line entry point: every experiment as a manifested subcommand.

Each run writes its CSV artifacts plus a manifest.json recording the merged
configuration, seed, and the design parameters in effect, so re-running from
the same manifest reproduces the CSVs byte for byte.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from dynlab import autodiff as ad
from dynlab import metrics, runio, systems
from dynlab.systems import DRIVE_CLIP, EncodingConfig, SystemSpec

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_BAD_CONFIG = 4

#: design-decision parameters recorded in every manifest
DECISIONS = {
    "integrator": "fixed-step RK4; substeps 20 @ (T=4,N=30), 50 @ (T=8,N=5), else internal step <= 0.01",
    "divergence_guard": systems.DIVERGENCE_LIMIT,
    "drive_clip": DRIVE_CLIP,
    "ais": "16 bins, add-one smoothing, characterization bound 10, inputs U(-1,1)",
    "lyapunov": "t=500, dt=0.005, qr every 10 steps, 10% transient, analysis bound 300",
    "welch": "hann window, demeaned segments, 50% overlap, density scaling",
    "snn": "subtract reset, theta init 1.0, orthogonal init (sqrt2 hidden / 0.01 out), surrogate slope 25",
    "classify": "batch 32, widths 192-128-128-10, readout per config",
    "sae": "batch 64, adam 1e-3, 30 epochs, dynamic drive = x+y+z per frame",
    "rl": "semi-implicit euler dt 0.02, multiplicative force noise, 200-step limit, convergence floor 150",
    "pacbayes": "posterior over both weight matrices, thresholds excluded, CE-only objective",
}


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    if not os.path.exists(path):
        print(f"error: config file not found: {path}", file=sys.stderr)
        raise SystemExit(EXIT_MISSING_FILE)
    try:
        with open(path) as fh:
            config = json.load(fh)
        if not isinstance(config, dict):
            raise ValueError("top-level JSON must be an object")
    except (json.JSONDecodeError, ValueError) as err:
        print(f"error: malformed config {path}: {err}", file=sys.stderr)
        raise SystemExit(EXIT_BAD_CONFIG) from None
    return config


def _floats(text: str) -> list[float]:
    return [float(v) for v in str(text).split(",") if v != ""]


def _ints(text: str) -> list[int]:
    return [int(v) for v in str(text).split(",") if v != ""]


def _merged(args, config: dict, keys: dict) -> dict:
    """CLI flag > config file > default, per key."""
    out = {}
    for key, default in keys.items():
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in config:
            out[key] = config[key]
        else:
            out[key] = default
    return out


def _dataset(spec: str, seed: int):
    from dynlab import classify

    if spec == "synthetic":
        return classify.synth_blobs(seed)
    if not os.path.exists(spec):
        print(f"error: dataset file not found: {spec}", file=sys.stderr)
        raise SystemExit(EXIT_MISSING_FILE)
    return classify.load_tabular(spec, seed=seed)


# ---------------------------------------------------------------------------
# subcommands

def cmd_encode(args) -> int:
    cfg = _load_config(args.config)
    p = _merged(args, cfg, {
        "delta": 2.0, "system": "duffing", "t_total": 4.0, "n_steps": 30,
        "features": "1.0", "clip": None,
    })
    if p["system"] == "duffing":
        spec = SystemSpec.duffing(p["delta"])
    elif p["system"] == "lorenz":
        spec = SystemSpec.lorenz(p["delta"])
    else:
        spec = SystemSpec.thomas(p["delta"])
    enc = EncodingConfig(float(p["t_total"]), int(p["n_steps"]))
    x = np.array(_floats(p["features"]))
    traj = systems.encode_features(x, spec, enc, clip=p["clip"])
    rows = [
        (f, k, traj.data[f, k, 0], traj.data[f, k, 1], traj.data[f, k, 2])
        for f in range(traj.n_features)
        for k in range(traj.n_frames)
    ]
    runio.write_csv(os.path.join(args.out, "trajectories.csv"),
                    ["feature_idx", "frame", "x", "y", "z"], rows)
    runio.write_manifest(args.out, "encode", p, args.seed, DECISIONS)
    return EXIT_OK


def cmd_lyapunov(args) -> int:
    cfg = _load_config(args.config)
    p = _merged(args, cfg, {"deltas": "-1.5,0.0,2.0,10.0", "t_total": 500.0, "dt": 0.005})
    rows = []
    summary = {}
    for delta in _floats(p["deltas"]):
        rep = metrics.lyapunov_spectrum(
            SystemSpec.duffing(delta), systems.init_state(1.0),
            t_total=float(p["t_total"]), dt=float(p["dt"]),
        )
        rows.append((delta, rep.exponents[0], rep.exponents[1], rep.exponents[2], rep.sum))
        summary[str(delta)] = {"converged": rep.converged, "truncated": rep.truncated,
                               "t_used": rep.t_used}
    runio.write_csv(os.path.join(args.out, "lyapunov.csv"),
                    ["delta", "lam1", "lam2", "lam3", "sum"], rows)
    with open(os.path.join(args.out, "lyapunov_summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    runio.write_manifest(args.out, "lyapunov", p, args.seed, DECISIONS)
    return EXIT_OK


def cmd_ais(args) -> int:
    cfg = _load_config(args.config)
    p = _merged(args, cfg, {
        "deltas": "-1.5,-1.0,-0.3,0.0,0.3,1.0,1.5,2.0,2.5,5.0,7.0,10.0",
        "t_total": 4.0, "n_steps": 30, "bins": 16, "n_inputs": 100,
    })
    rows = metrics.ais_table(
        _floats(p["deltas"]), EncodingConfig(float(p["t_total"]), int(p["n_steps"])),
        n_inputs=int(p["n_inputs"]), bins=int(p["bins"]), seed=args.seed,
    )
    runio.write_csv(os.path.join(args.out, "ais.csv"),
                    ["delta", "T", "N", "bins", "ais_bits"],
                    [(r["delta"], r["T"], r["N"], r["bins"], r["ais_bits"]) for r in rows])
    runio.write_manifest(args.out, "ais", p, args.seed, DECISIONS)
    return EXIT_OK


def cmd_spectral_scan(args) -> int:
    cfg = _load_config(args.config)
    p = _merged(args, cfg, {
        "deltas": "-1.5,0.0,2.0,10.0", "t_grid": "6.0,8.0,12.0,16.0",
        "n_grid": "64,128,256", "n_seeds": 3,
    })
    rows = metrics.spectral_scan(
        _floats(p["deltas"]), _floats(p["t_grid"]), _ints(p["n_grid"]),
        seeds=[args.seed + i for i in range(int(p["n_seeds"]))],
    )
    runio.write_csv(
        os.path.join(args.out, "spectral_scan.csv"),
        ["delta", "T", "N", "centroid", "entropy", "dominant_freq", "status"],
        [(r["delta"], r["T"], r["N"], r["centroid"], r["entropy"], r["dominant_freq"], r["status"])
         for r in rows],
    )
    runio.write_manifest(args.out, "spectral-scan", p, args.seed, DECISIONS)
    return EXIT_OK


def cmd_classify_matrix(args) -> int:
    from dynlab import classify

    cfg = _load_config(args.config)
    p = _merged(args, cfg, {
        "data": "synthetic", "archs": "snn",
        "deltas_train": "-1.5,2.0",
        "deltas_test": "-1.5,-1.0,-0.3,0.0,0.3,1.0,1.5,2.0,2.5,5.0,7.0,10.0",
        "n_seeds": 3, "max_epochs": 50, "readout": "count", "readout_beta": 0.95,
        "logit_scale": 0.5,
    })
    dataset = _dataset(p["data"], args.seed)
    base = classify.TrainConfig(max_epochs=int(p["max_epochs"]), readout=p["readout"],
                                readout_beta=float(p["readout_beta"]),
                                logit_scale=float(p["logit_scale"]))
    rows, matrices, failures = classify.cross_matrix(
        dataset, p["archs"].split(","), _floats(p["deltas_train"]), _floats(p["deltas_test"]),
        seeds=[args.seed + i for i in range(int(p["n_seeds"]))],
        base_cfg=base, processes=args.processes,
    )
    rows.sort(key=lambda r: (r["arch"], r["delta_train"], r["delta_test"], r["seed"]))
    runio.write_csv(
        os.path.join(args.out, "matrix.csv"),
        ["arch", "delta_train", "delta_test", "seed", "accuracy"],
        [(r["arch"], r["delta_train"], r["delta_test"], r["seed"], r["accuracy"]) for r in rows],
    )
    rate_rows = [
        (r["arch"], r["delta_train"], r["delta_test"], r["seed"], li + 1, rate)
        for r in rows
        for li, rate in enumerate(r.get("rates", []))
    ]
    runio.write_csv(os.path.join(args.out, "rates.csv"),
                    ["arch", "delta_train", "delta_test", "seed", "layer", "rate"], rate_rows)
    with open(os.path.join(args.out, "failures.json"), "w") as fh:
        json.dump(failures, fh, indent=2, sort_keys=True)
    runio.write_manifest(args.out, "classify-matrix", p, args.seed, DECISIONS)
    return EXIT_OK


def cmd_cv_analyze(args) -> int:
    from dynlab import classify

    cfg = _load_config(args.config)
    p = _merged(args, cfg, {"matrix_dir": None})
    src = p["matrix_dir"] or args.out
    matrix_path = os.path.join(src, "matrix.csv")
    rates_path = os.path.join(src, "rates.csv")
    for path in (matrix_path, rates_path):
        if not os.path.exists(path):
            print(f"error: missing input file: {path}", file=sys.stderr)
            return EXIT_MISSING_FILE
    _, acc_rows = runio.read_csv(matrix_path)
    _, rate_rows = runio.read_csv(rates_path)
    rates_by_key: dict[tuple, dict] = {}
    for arch, dt, dte, seed, layer, rate in rate_rows:
        rates_by_key.setdefault((arch, float(dt), float(dte), int(seed)), {})[int(layer)] = float(rate)
    rows = []
    for arch, dt, dte, seed, acc in acc_rows:
        key = (arch, float(dt), float(dte), int(seed))
        layer_rates = rates_by_key.get(key, {})
        rows.append({
            "arch": arch, "delta_train": float(dt), "delta_test": float(dte),
            "seed": int(seed), "accuracy": float(acc),
            "rates": [layer_rates[k] for k in sorted(layer_rates)],
        })
    report = classify.cv_analysis(rows)
    runio.write_csv(
        os.path.join(args.out, "cv.csv"),
        ["arch", "delta_train", "seed", "layer", "cv", "ood_accuracy"],
        [(r["arch"], r["delta_train"], r["seed"], r["layer"], r["cv"], r["ood_accuracy"])
         for r in report.rows],
    )
    with open(os.path.join(args.out, "cv_summary.json"), "w") as fh:
        json.dump({"pearson_by_layer": report.pearson_by_layer,
                   "undefined_rows": len(report.undefined)}, fh, indent=2, sort_keys=True)
    runio.write_manifest(args.out, "cv-analyze", p, args.seed, DECISIONS)
    return EXIT_OK


def _patches(p, seed):
    from dynlab import autoencoder

    source = p.get("patches", "synthetic")
    return autoencoder.extract_patches(None if source == "synthetic" else source,
                                       n=int(p.get("n_patches", 5000)), seed=seed)


def cmd_sae_train(args) -> int:
    from dynlab import autoencoder

    cfg = _load_config(args.config)
    p = _merged(args, cfg, {
        "encoder": "transition", "lam": 1.0, "epochs": 30, "patches": "synthetic",
        "n_patches": 5000,
    })
    patches = _patches(p, args.seed)
    enc = autoencoder.EncoderKind.named(p["encoder"])
    model, report = autoencoder.train_sae(
        patches.patches, enc, float(p["lam"]),
        autoencoder.SAETrainConfig(seed=args.seed, epochs=int(p["epochs"])),
    )
    runio.write_csv(
        os.path.join(args.out, "sae_run.csv"),
        ["encoder", "lambda", "seed", "sigma_rf", "recon", "sparsity"],
        [(report.encoder, report.sparsity_weight, report.seed, report.sigma_rf,
          report.recon_loss, report.sparsity_loss)],
    )
    autoencoder.export_rf_images(os.path.join(args.out, "rf_images", "run"), model)
    runio.write_manifest(args.out, "sae-train", p, args.seed, DECISIONS)
    return EXIT_OK


def cmd_rf_scan(args) -> int:
    from dynlab import autoencoder

    cfg = _load_config(args.config)
    p = _merged(args, cfg, {
        "deltas": "-1.0,0.0,1.0,2.0,3.0,5.0", "lambdas": "0.0,1.0", "n_seeds": 3,
        "epochs": 30, "patches": "synthetic", "n_patches": 5000,
    })
    patches = _patches(p, args.seed)
    rows, failures = autoencoder.rf_scan(
        patches, _floats(p["deltas"]), _floats(p["lambdas"]),
        seeds=[args.seed + i for i in range(int(p["n_seeds"]))],
        cfg=autoencoder.SAETrainConfig(epochs=int(p["epochs"])), processes=args.processes,
    )
    rows.sort(key=lambda r: (r["delta"], r["lambda"], r["seed"]))
    runio.write_csv(
        os.path.join(args.out, "rf_scan.csv"),
        ["delta", "lambda", "seed", "sigma_rf", "recon", "sparsity"],
        [(r["delta"], r["lambda"], r["seed"], r["sigma_rf"], r["recon"], r["sparsity"]) for r in rows],
    )
    with open(os.path.join(args.out, "failures.json"), "w") as fh:
        json.dump(failures, fh, indent=2, sort_keys=True)
    runio.write_manifest(args.out, "rf-scan", p, args.seed, DECISIONS)
    return EXIT_OK


def cmd_universality(args) -> int:
    from dynlab import autoencoder

    cfg = _load_config(args.config)
    p = _merged(args, cfg, {
        "system": "lorenz", "grid": "0.5,28.0", "lam": 1.0, "n_seeds": 3,
        "epochs": 30, "patches": "synthetic", "n_patches": 5000,
    })
    patches = _patches(p, args.seed)
    rows, failures = autoencoder.universality_run(
        patches, p["system"], _floats(p["grid"]), float(p["lam"]),
        seeds=[args.seed + i for i in range(int(p["n_seeds"]))],
        cfg=autoencoder.SAETrainConfig(epochs=int(p["epochs"])), processes=args.processes,
    )
    rows.sort(key=lambda r: (r["system"], r["param"], r["seed"]))
    runio.write_csv(
        os.path.join(args.out, "universality.csv"),
        ["system", "param", "lambda", "seed", "sigma_rf", "recon", "sparsity"],
        [(r["system"], r["param"], r["lambda"], r["seed"], r["sigma_rf"], r["recon"], r["sparsity"])
         for r in rows],
    )
    with open(os.path.join(args.out, "failures.json"), "w") as fh:
        json.dump(failures, fh, indent=2, sort_keys=True)
    runio.write_manifest(args.out, "universality", p, args.seed, DECISIONS)
    return EXIT_OK


def _write_rl_rows(outdir: str, rows: list[dict], failures: list) -> None:
    rows = sorted(rows, key=lambda r: (r["pathway"], r["kind"], r["delta_or_beta"], r["seed"]))
    runio.write_csv(
        os.path.join(outdir, "rl_runs.csv"),
        ["pathway", "kind", "delta_or_beta", "seed", "protocol", "easy_mean", "easy_std",
         "vhard_mean", "vhard_std", "gap", "converged", "convergence_episode"],
        [(r["pathway"], r["kind"], r["delta_or_beta"], r["seed"], r["protocol"],
          r["easy_mean"], r["easy_std"], r["vhard_mean"], r["vhard_std"],
          r["gap"], r["converged"], r["convergence_episode"]) for r in rows],
    )
    curve_rows = []
    for r in rows:
        run_id = f'{r["kind"]}_{r["delta_or_beta"]:g}_{r["seed"]}'
        curve_rows.extend((run_id, ep, rew) for ep, rew in enumerate(r.get("curve", []), 1))
    runio.write_csv(os.path.join(outdir, "learning_curves.csv"),
                    ["run_id", "episode", "reward"], curve_rows)
    with open(os.path.join(outdir, "failures.json"), "w") as fh:
        json.dump(failures, fh, indent=2, sort_keys=True)


def _agent_spec(p):
    from dynlab import cartpole

    kind = p["kind"]
    if p.get("level", "architecture") == "encoding":
        return cartpole.AgentSpec.encoding_level(kind, delta=p.get("delta"))
    return cartpole.AgentSpec.architecture_level(kind, beta=p.get("beta"))


def cmd_rl_train(args) -> int:
    from dynlab import cartpole

    cfg = _load_config(args.config)
    p = _merged(args, cfg, {
        "kind": "mlp_raw", "level": "architecture", "delta": None, "beta": None,
        "protocol": "fixed", "episodes": 800, "n_seeds": 5,
    })
    spec = _agent_spec(p)
    rows, failures = cartpole.run_sweep(
        [spec], seeds=[args.seed + i for i in range(int(p["n_seeds"]))],
        protocol=p["protocol"], episodes=int(p["episodes"]), processes=args.processes,
    )
    _write_rl_rows(args.out, rows, failures)
    runio.write_manifest(args.out, "rl-train", p, args.seed, DECISIONS)
    return EXIT_OK


def cmd_rl_eval(args) -> int:
    from dynlab import cartpole

    cfg = _load_config(args.config)
    p = _merged(args, cfg, {
        "kind": "mlp_raw", "level": "architecture", "delta": None, "beta": None,
        "episodes": 100, "train_episodes": 800, "protocol": "fixed",
    })
    spec = _agent_spec(p)
    policy, result = cartpole.reinforce_train(
        spec, protocol=p["protocol"], episodes=int(p["train_episodes"]), seed=args.seed)
    report = cartpole.evaluate_zero_shot(policy, result, episodes=int(p["episodes"]), seed=args.seed)
    rows = [
        (name, stats[0], stats[1], stats[2])
        for name, stats in report.per_difficulty.items()
    ]
    runio.write_csv(os.path.join(args.out, "rl_eval.csv"),
                    ["difficulty", "mean", "std", "success_rate"], rows)
    with open(os.path.join(args.out, "rl_eval_summary.json"), "w") as fh:
        json.dump({"gap": report.gap, "converged": report.converged,
                   "convergence_episode": report.convergence_episode}, fh, indent=2)
    runio.write_manifest(args.out, "rl-eval", p, args.seed, DECISIONS)
    return EXIT_OK


def cmd_beta_sweep(args) -> int:
    from dynlab import cartpole

    cfg = _load_config(args.config)
    p = _merged(args, cfg, {
        "betas": "0.1,0.3,0.5,0.7,0.9,1.0", "kind": "snn_leaky",
        "protocol": "fixed", "episodes": 800, "n_seeds": 5,
    })
    rows, failures = cartpole.beta_sweep(
        _floats(p["betas"]), seeds=[args.seed + i for i in range(int(p["n_seeds"]))],
        protocol=p["protocol"], episodes=int(p["episodes"]),
        kind=p["kind"], processes=args.processes,
    )
    _write_rl_rows(args.out, rows, failures)
    runio.write_manifest(args.out, "beta-sweep", p, args.seed, DECISIONS)
    return EXIT_OK


def cmd_pacbayes(args) -> int:
    from dynlab import pacbayes

    cfg = _load_config(args.config)
    p = _merged(args, cfg, {"deltas": "-1.5,2.0", "n_seeds": 3, "epochs": 100,
                            "data": "synthetic"})
    dataset = _dataset(p["data"], args.seed)
    rows = []
    for delta in _floats(p["deltas"]):
        for i in range(int(p["n_seeds"])):
            report = pacbayes.train_bayesian_snn(
                dataset, delta, pacbayes.BayesConfig(seed=args.seed + i, epochs=int(p["epochs"])))
            rows.append((report.delta, report.seed, report.kl, report.train_error,
                         report.test_error, report.gap, report.bound, report.bound_valid))
    runio.write_csv(os.path.join(args.out, "pacbayes.csv"),
                    ["delta", "seed", "kl", "train_err", "test_err", "gap", "bound", "bound_valid"],
                    rows)
    runio.write_manifest(args.out, "pacbayes", p, args.seed, DECISIONS)
    return EXIT_OK


def cmd_gradstats(args) -> int:
    from dynlab import pacbayes

    cfg = _load_config(args.config)
    p = _merged(args, cfg, {"deltas": "-1.5,2.0", "n_seeds": 3, "epochs": 200,
                            "data": "synthetic"})
    dataset = _dataset(p["data"], args.seed)
    rows = []
    for delta in _floats(p["deltas"]):
        for i in range(int(p["n_seeds"])):
            stats = pacbayes.gradient_stats(
                dataset, delta, pacbayes.GradStatsConfig(seed=args.seed + i, epochs=int(p["epochs"])))
            rows.append((stats.delta, stats.seed, stats.mu_grad, stats.cv_grad))
    runio.write_csv(os.path.join(args.out, "gradstats.csv"),
                    ["delta", "seed", "mu_grad", "cv_grad"], rows)
    runio.write_manifest(args.out, "gradstats", p, args.seed, DECISIONS)
    return EXIT_OK


def cmd_selftest(args) -> int:
    """Grad-check and oracle suites; nonzero exit on any failure."""
    from dynlab.spiking import SpikingModel
    from dynlab.autodiff import Tensor

    checks = []

    def check(name, ok):
        checks.append(ok)
        print(f"[{'PASS' if ok else 'FAIL'}] {name}")

    rng = np.random.default_rng(0)
    w1, w2 = Tensor(rng.standard_normal((5, 8)), True, "w1"), Tensor(rng.standard_normal((8, 3)), True, "w2")
    x = rng.standard_normal((4, 5))
    rep = ad.grad_check(
        lambda: ([w1, w2], lambda: ad.mse(ad.matmul(ad.tanh(ad.matmul(Tensor(x), w1)), w2), 0.3)))
    check("grad-check dense chain", rep.passed)

    model = SpikingModel([6, 8, 8], 3, beta=0.9, rng=np.random.default_rng(1))
    model.set_smooth(True)
    xs = np.random.default_rng(2).standard_normal((2, 4, 6))
    rep2 = ad.grad_check(
        lambda: (model.params(), lambda: ad.softmax_cross_entropy(model.run_sequence(xs), [0, 2])))
    check("grad-check 2-layer spiking model", rep2.passed)

    J = systems.jacobian([0.3, -0.8, 1.1], SystemSpec.duffing(2.0))
    check("jacobian trace -2*delta", abs(np.trace(J) + 4.0) < 1e-12)

    traj = systems.encode_features(np.zeros(3), SystemSpec.duffing(2.0), EncodingConfig(8.0, 5))
    check("origin fixed point", bool(np.all(traj.data == 0.0)))

    rep3 = metrics.lyapunov_spectrum(SystemSpec.duffing(2.0), systems.init_state(1.0),
                                     t_total=200.0)
    check("lyapunov sum oracle (delta=2)", abs(rep3.sum + 4.0) < 0.4)

    from dynlab.pacbayes import pac_bound

    check("pac-bayes table row arithmetic", abs(pac_bound(0.061, 2300, 1257) - 1.019) < 0.005)

    p = Tensor(np.array([1.0]), True)
    ad.Adam([p], lr=0.1).step([np.array([1.0])])
    check("adam first-step magnitude", abs(p.data[0] - 0.9) < 1e-6)

    return EXIT_OK if all(checks) else EXIT_FATAL


COMMANDS = {
    "encode": cmd_encode,
    "lyapunov": cmd_lyapunov,
    "ais": cmd_ais,
    "spectral-scan": cmd_spectral_scan,
    "classify-matrix": cmd_classify_matrix,
    "cv-analyze": cmd_cv_analyze,
    "sae-train": cmd_sae_train,
    "rf-scan": cmd_rf_scan,
    "universality": cmd_universality,
    "rl-train": cmd_rl_train,
    "rl-eval": cmd_rl_eval,
    "beta-sweep": cmd_beta_sweep,
    "pacbayes": cmd_pacbayes,
    "gradstats": cmd_gradstats,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynlab",
                                     description="dissipative temporal encoding laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--out", default="runs/" + name)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--config", default=None, help="JSON config file")
        sp.add_argument("--processes", type=int, default=None)
        if name == "encode":
            sp.add_argument("--delta", type=float)
            sp.add_argument("--system", choices=["duffing", "lorenz", "thomas"])
            sp.add_argument("--t-total", dest="t_total", type=float)
            sp.add_argument("--n-steps", dest="n_steps", type=int)
            sp.add_argument("--features")
        elif name == "lyapunov":
            sp.add_argument("--deltas")
            sp.add_argument("--t-total", dest="t_total", type=float)
            sp.add_argument("--dt", type=float)
        elif name == "ais":
            sp.add_argument("--deltas")
            sp.add_argument("--bins", type=int)
            sp.add_argument("--n-inputs", dest="n_inputs", type=int)
        elif name == "spectral-scan":
            sp.add_argument("--deltas")
            sp.add_argument("--t-grid", dest="t_grid")
            sp.add_argument("--n-grid", dest="n_grid")
            sp.add_argument("--n-seeds", dest="n_seeds", type=int)
        elif name == "classify-matrix":
            sp.add_argument("--data")
            sp.add_argument("--archs")
            sp.add_argument("--deltas-train", dest="deltas_train")
            sp.add_argument("--deltas-test", dest="deltas_test")
            sp.add_argument("--n-seeds", dest="n_seeds", type=int)
            sp.add_argument("--max-epochs", dest="max_epochs", type=int)
            sp.add_argument("--readout")
        elif name == "cv-analyze":
            sp.add_argument("--matrix-dir", dest="matrix_dir")
        elif name == "sae-train":
            sp.add_argument("--encoder")
            sp.add_argument("--lam", type=float)
            sp.add_argument("--epochs", type=int)
            sp.add_argument("--patches")
            sp.add_argument("--n-patches", dest="n_patches", type=int)
        elif name == "rf-scan":
            sp.add_argument("--deltas")
            sp.add_argument("--lambdas")
            sp.add_argument("--n-seeds", dest="n_seeds", type=int)
            sp.add_argument("--epochs", type=int)
            sp.add_argument("--patches")
            sp.add_argument("--n-patches", dest="n_patches", type=int)
        elif name == "universality":
            sp.add_argument("--system", choices=["lorenz", "thomas"])
            sp.add_argument("--grid")
            sp.add_argument("--lam", type=float)
            sp.add_argument("--n-seeds", dest="n_seeds", type=int)
            sp.add_argument("--epochs", type=int)
            sp.add_argument("--patches")
            sp.add_argument("--n-patches", dest="n_patches", type=int)
        elif name in ("rl-train", "rl-eval"):
            sp.add_argument("--kind")
            sp.add_argument("--level", choices=["encoding", "architecture"])
            sp.add_argument("--delta", type=float)
            sp.add_argument("--beta", type=float)
            sp.add_argument("--protocol", choices=["fixed", "sufficient"])
            sp.add_argument("--episodes", type=int)
            if name == "rl-train":
                sp.add_argument("--n-seeds", dest="n_seeds", type=int)
            else:
                sp.add_argument("--train-episodes", dest="train_episodes", type=int)
        elif name == "beta-sweep":
            sp.add_argument("--betas")
            sp.add_argument("--kind", choices=["snn_leaky", "rleaky"])
            sp.add_argument("--protocol", choices=["fixed", "sufficient"])
            sp.add_argument("--episodes", type=int)
            sp.add_argument("--n-seeds", dest="n_seeds", type=int)
        elif name in ("pacbayes", "gradstats"):
            sp.add_argument("--deltas")
            sp.add_argument("--n-seeds", dest="n_seeds", type=int)
            sp.add_argument("--epochs", type=int)
            sp.add_argument("--data")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except SystemExit as err:
        return int(err.code) if err.code is not None else EXIT_OK
    except FileNotFoundError as err:
        print(f"error: missing input file: {err}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except (ValueError, KeyError) as err:
        print(f"error: bad configuration: {err}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except ad.NonFiniteError as err:
        print(f"error: numerical failure: {err}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
