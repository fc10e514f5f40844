"""Figure renderers, strictly read-only over the experiment CSVs.

Each renderer is a pure function of its input files: identical bytes in,
identical pixels out.  Schema violations and empty inputs fail loudly.
Receptive-field weights use a diverging red/blue map centered at zero;
scalar heatmaps use viridis.
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "plotkit"

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

FIGURE_KINDS = (
    "landscape3d",
    "rf_grid",
    "scan_heatmap",
    "spectral_heatmap",
    "beta_curves",
    "training_curves",
)


class SchemaError(ValueError):
    """Input file does not match the owning module's CSV contract."""


def load_table(path: str, required: tuple[str, ...]) -> dict[str, list]:
    if not os.path.exists(path):
        raise SchemaError(f"input file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        missing = [col for col in required if col not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing} (header {header})")
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    idx = {col: header.index(col) for col in header}
    return {col: [row[idx[col]] for row in rows] for col in header}


def _floats(values) -> np.ndarray:
    return np.array([float(v) for v in values])


def _save(fig, out_path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    kind = os.path.splitext(out_path)[1].lower()
    if kind == ".svg":
        # strip the volatile date so identical inputs give identical bytes
        fig.savefig(out_path, metadata={"Date": None})
    else:
        fig.savefig(out_path)
    plt.close(fig)


def render_landscape3d(inputs: list[str], out_path: str) -> None:
    """Generalization matrix as a 3-D accuracy surface (one panel per arch)."""
    table = load_table(inputs[0], ("arch", "delta_train", "delta_test", "seed", "accuracy"))
    archs = sorted(set(table["arch"]))
    fig = plt.figure(figsize=(6 * len(archs), 5))
    for i, arch in enumerate(archs):
        rows = [
            (float(dt), float(dte), float(acc))
            for a, dt, dte, acc in zip(
                table["arch"], table["delta_train"], table["delta_test"], table["accuracy"]
            )
            if a == arch
        ]
        trains = sorted({r[0] for r in rows})
        tests = sorted({r[1] for r in rows})
        surface = np.full((len(trains), len(tests)), np.nan)
        for ti, train in enumerate(trains):
            for tj, test in enumerate(tests):
                cell = [r[2] for r in rows if r[0] == train and r[1] == test]
                if cell:
                    surface[ti, tj] = np.mean(cell)
        ax = fig.add_subplot(1, len(archs), i + 1, projection="3d")
        tx, ty = np.meshgrid(np.arange(len(tests)), np.arange(len(trains)))
        ax.plot_surface(tx, ty, np.nan_to_num(surface), cmap="viridis",
                        vmin=0, vmax=100, antialiased=False)
        ax.set_xticks(range(len(tests)))
        ax.set_xticklabels([f"{t:g}" for t in tests], fontsize=6)
        ax.set_yticks(range(len(trains)))
        ax.set_yticklabels([f"{t:g}" for t in trains], fontsize=6)
        ax.set_xlabel("test encoding")
        ax.set_ylabel("train encoding")
        ax.set_zlabel("accuracy (%)")
        ax.set_zlim(0, 100)
        ax.set_title(arch)
    _save(fig, out_path)


def render_rf_grid(inputs: list[str], out_path: str) -> None:
    """Tiled receptive fields, diverging red/blue centered at zero weight."""
    rf_dir = inputs[0]
    manifest_path = os.path.join(rf_dir, "manifest.json")
    if not os.path.isdir(rf_dir) or not os.path.exists(manifest_path):
        raise SchemaError(f"{rf_dir}: not an rf_images directory (manifest.json missing)")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    side, scale = int(manifest["side"]), float(manifest["scale"])
    names = sorted(f for f in os.listdir(rf_dir) if f.endswith(".pgm"))
    if not names:
        raise SchemaError(f"{rf_dir}: no receptive-field images")
    images = []
    for name in names:
        with open(os.path.join(rf_dir, name), "rb") as fh:
            magic = fh.readline().strip()
            if magic != b"P5":
                raise SchemaError(f"{name}: not a binary PGM")
            dims = fh.readline().split()
            fh.readline()  # maxval
            raw = np.frombuffer(fh.read(), dtype=np.uint8)
        w, h = int(dims[0]), int(dims[1])
        images.append((raw.reshape(h, w).astype(np.float64) - 127.5) / 127.5 * scale)
    cols = int(np.ceil(np.sqrt(len(images))))
    rows = int(np.ceil(len(images) / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(cols * 0.7, rows * 0.7))
    axes = np.atleast_1d(axes).ravel()
    bound = max(abs(img).max() for img in images) or 1.0
    for ax in axes:
        ax.axis("off")
    for ax, img in zip(axes, images):
        ax.imshow(img, cmap="RdBu_r", vmin=-bound, vmax=bound, interpolation="nearest")
    _save(fig, out_path)


def render_scan_heatmap(inputs: list[str], out_path: str) -> None:
    """Structure score over the (delta, lambda) landscape."""
    table = load_table(inputs[0], ("delta", "lambda", "sigma_rf", "recon", "sparsity"))
    deltas = sorted({float(v) for v in table["delta"]})
    lambdas = sorted({float(v) for v in table["lambda"]})
    grid = np.full((len(lambdas), len(deltas)), np.nan)
    for i, lam in enumerate(lambdas):
        for j, d in enumerate(deltas):
            cell = [
                float(s)
                for dv, lv, s in zip(table["delta"], table["lambda"], table["sigma_rf"])
                if float(dv) == d and float(lv) == lam
            ]
            if cell:
                grid[i, j] = np.mean(cell)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
    im = ax1.imshow(grid, cmap="viridis", aspect="auto", origin="lower")
    ax1.set_xticks(range(len(deltas)))
    ax1.set_xticklabels([f"{d:g}" for d in deltas])
    ax1.set_yticks(range(len(lambdas)))
    ax1.set_yticklabels([f"{v:g}" for v in lambdas])
    ax1.set_xlabel("damping")
    ax1.set_ylabel("sparsity weight")
    ax1.set_title("structure score")
    fig.colorbar(im, ax=ax1)
    for i, lam in enumerate(lambdas):
        ax2.plot(deltas, grid[i], marker="o", label=f"lambda={lam:g}")
    ax2.set_xlabel("damping")
    ax2.set_ylabel("structure score")
    ax2.legend(fontsize=7)
    _save(fig, out_path)


def render_spectral_heatmap(inputs: list[str], out_path: str) -> None:
    """Entropy and centroid heatmaps over (delta, horizon)."""
    table = load_table(inputs[0], ("delta", "T", "N", "centroid", "entropy", "dominant_freq"))
    deltas = sorted({float(v) for v in table["delta"]})
    horizons = sorted({float(v) for v in table["T"]})
    fig, axes = plt.subplots(1, 2, figsize=(11, 4))
    for ax, column in zip(axes, ("entropy", "centroid")):
        grid = np.full((len(horizons), len(deltas)), np.nan)
        for i, horizon in enumerate(horizons):
            for j, d in enumerate(deltas):
                cell = [
                    float(v)
                    for dv, tv, v in zip(table["delta"], table["T"], table[column])
                    if float(dv) == d and float(tv) == horizon
                ]
                if cell:
                    grid[i, j] = np.mean(cell)
        im = ax.imshow(grid, cmap="viridis", aspect="auto", origin="lower")
        ax.set_xticks(range(len(deltas)))
        ax.set_xticklabels([f"{d:g}" for d in deltas])
        ax.set_yticks(range(len(horizons)))
        ax.set_yticklabels([f"{t:g}" for t in horizons])
        ax.set_xlabel("damping")
        ax.set_ylabel("horizon")
        ax.set_title(column)
        fig.colorbar(im, ax=ax)
    _save(fig, out_path)


def render_beta_curves(inputs: list[str], out_path: str) -> None:
    """Generalization gap against the constraint knob, per agent kind."""
    table = load_table(
        inputs[0],
        ("pathway", "kind", "delta_or_beta", "seed", "easy_mean", "vhard_mean", "gap", "converged"),
    )
    fig, ax = plt.subplots(figsize=(6, 4))
    kinds = sorted(set(table["kind"]))
    for kind in kinds:
        points: dict[float, list[float]] = {}
        for k, knob, gap, conv in zip(
            table["kind"], table["delta_or_beta"], table["gap"], table["converged"]
        ):
            if k != kind or conv not in ("1", "True", "true"):
                continue
            value = float(gap)
            if np.isnan(value):
                continue
            points.setdefault(float(knob), []).append(value)
        if not points:
            continue
        knobs = sorted(points)
        means = [np.mean(points[k]) for k in knobs]
        errs = [np.std(points[k]) for k in knobs]
        ax.errorbar(knobs, means, yerr=errs, marker="o", capsize=3, label=kind)
    ax.set_xlabel("constraint knob (delta or beta)")
    ax.set_ylabel("easy - very_hard gap")
    ax.legend(fontsize=8)
    _save(fig, out_path)


def render_training_curves(inputs: list[str], out_path: str) -> None:
    """Smoothed per-run reward traces."""
    table = load_table(inputs[0], ("run_id", "episode", "reward"))
    runs: dict[str, list[tuple[int, float]]] = {}
    for run_id, episode, reward in zip(table["run_id"], table["episode"], table["reward"]):
        runs.setdefault(run_id, []).append((int(episode), float(reward)))
    fig, ax = plt.subplots(figsize=(7, 4))
    for run_id in sorted(runs):
        series = sorted(runs[run_id])
        rewards = np.array([r for _, r in series])
        window = min(20, len(rewards))
        smooth = np.convolve(rewards, np.ones(window) / window, mode="valid")
        ax.plot(range(window, window + len(smooth)), smooth, label=run_id, linewidth=1)
    ax.set_xlabel("episode")
    ax.set_ylabel("reward (smoothed)")
    ax.legend(fontsize=6)
    _save(fig, out_path)


RENDERERS = {
    "landscape3d": render_landscape3d,
    "rf_grid": render_rf_grid,
    "scan_heatmap": render_scan_heatmap,
    "spectral_heatmap": render_spectral_heatmap,
    "beta_curves": render_beta_curves,
    "training_curves": render_training_curves,
}


def render(kind: str, inputs: list[str], out_path: str) -> None:
    if kind not in RENDERERS:
        raise SchemaError(f"unknown figure kind {kind!r}; choose from {FIGURE_KINDS}")
    if not inputs:
        raise SchemaError("at least one input path is required")
    RENDERERS[kind](inputs, out_path)
