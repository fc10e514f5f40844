"""Experiment 1: cross-encoding generalization and firing-rate stability.

Classifiers are trained on features encoded at one duffing damping value and
evaluated across a grid of other encodings.  Spiking networks consume the
full frame sequence; the static baselines see either the final frame
(last-T) or the time-averaged frame (avg-pool).  Alongside accuracy, the
spiking models' per-layer mean firing rates are recorded per test encoding;
their coefficient of variation across encodings is the stability measure
that anti-correlates with out-of-distribution accuracy.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from dynlab import autodiff as ad
from dynlab import runio
from dynlab.autodiff import Tensor
from dynlab.spiking import SpikingModel
from dynlab.systems import EncodingConfig, SystemSpec, encode_features

ARCHS = ("snn", "mlp_last_t", "mlp_avg_pool")

TRAIN_FRACTION, VAL_FRACTION = 0.70, 0.15


@dataclass
class TabularDataset:
    """Standardized feature table with fixed, stratified 70/15/15 splits."""

    features: np.ndarray  # (n, d), z-scored with train-split statistics
    labels: np.ndarray  # (n,) ints in 0..n_classes-1
    idx_train: np.ndarray
    idx_val: np.ndarray
    idx_test: np.ndarray
    n_classes: int
    source: str
    cache_key: str = ""

    def __post_init__(self):
        if not self.cache_key:
            import hashlib

            h = hashlib.sha256(self.features.tobytes())
            h.update(self.labels.tobytes())
            self.cache_key = h.hexdigest()[:16]

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        idx = {"train": self.idx_train, "val": self.idx_val, "test": self.idx_test}[name]
        return self.features[idx], self.labels[idx]


def _stratified_split(labels: np.ndarray, rng: np.random.Generator):
    train, val, test = [], [], []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        n = len(idx)
        n_train = int(round(n * TRAIN_FRACTION))
        n_val = int(round(n * VAL_FRACTION))
        train.extend(idx[:n_train])
        val.extend(idx[n_train : n_train + n_val])
        test.extend(idx[n_train + n_val :])
    return (np.sort(np.array(train)), np.sort(np.array(val)), np.sort(np.array(test)))


def _standardize(features: np.ndarray, idx_train: np.ndarray):
    mu = features[idx_train].mean(axis=0)
    sd = features[idx_train].std(axis=0)
    sd[sd == 0] = 1.0
    return (features - mu) / sd


def _build(features, labels, seed, source) -> TabularDataset:
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = int(labels.max()) + 1
    if labels.min() < 0:
        raise ValueError("labels must be nonnegative")
    rng = runio.generator(seed, "splits")
    idx_train, idx_val, idx_test = _stratified_split(labels, rng)
    features = _standardize(np.asarray(features, dtype=np.float64), idx_train)
    return TabularDataset(features, labels, idx_train, idx_val, idx_test, n_classes, source)


def synth_blobs(seed: int, n: int = 1500, n_features: int = 64, n_classes: int = 10,
                noise: float = 0.35, min_center_distance: float = 1.2) -> TabularDataset:
    """Gaussian class blobs: unit-norm centers with enforced pairwise spacing.

    ``noise`` is the expected norm of a sample's noise vector (unit-norm
    centers sit at most sqrt(2) apart, so a per-coordinate deviation of that
    size would drown the class structure); per coordinate this is
    noise / sqrt(n_features).  The raw features stay linearly separable at
    the 95%+ level, which the test suite checks with an independent
    logistic-regression oracle.
    """
    rng = runio.generator(seed, "blobs")
    centers = []
    while len(centers) < n_classes:
        c = rng.standard_normal(n_features)
        c /= np.linalg.norm(c)
        if all(np.linalg.norm(c - other) >= min_center_distance for other in centers):
            centers.append(c)
    centers = np.stack(centers)
    labels = rng.integers(0, n_classes, size=n)
    scale = noise / math.sqrt(n_features)
    features = centers[labels] + scale * rng.standard_normal((n, n_features))
    return _build(features, labels, seed, source=f"synth_blobs(seed={seed}, n={n})")


def load_tabular(path: str, seed: int = 0) -> TabularDataset:
    """CSV rows of 64 feature columns plus one integer label column."""
    features, labels = [], []
    with open(path, newline="") as fh:
        for ln, row in enumerate(csv.reader(fh), 1):
            if not row:
                continue
            if len(row) != 65:
                raise ValueError(f"{path}:{ln}: expected 65 columns, got {len(row)}")
            try:
                values = [float(v) for v in row]
            except ValueError as err:
                raise ValueError(f"{path}:{ln}: malformed row ({err})") from None
            label = int(values[-1])
            if not 0 <= label <= 9:
                raise ValueError(f"{path}:{ln}: label {label} out of range 0..9")
            features.append(values[:-1])
            labels.append(label)
    return _build(np.array(features), np.array(labels), seed, source=path)


@dataclass(frozen=True)
class TrainConfig:
    arch: str = "snn"
    delta_train: float = 2.0
    seed: int = 0
    lr: float = 1e-4
    max_epochs: int = 200
    patience: int = 10
    batch_size: int = 32
    width: int = 128
    readout: str = "count"
    readout_beta: float = 0.95
    logit_scale: float = 0.5  # softmax temperature on count/mem_sum logits
    encoding: EncodingConfig = field(default_factory=lambda: EncodingConfig(4.0, 30))

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}")
        if self.patience >= self.max_epochs:
            raise ValueError("patience must be < max_epochs")


def prepare_encoded(dataset: TabularDataset, delta: float, cfg: EncodingConfig,
                    splits=("train", "val", "test")) -> dict[str, np.ndarray]:
    """Frame tensors (n, N, d*3) per split for one encoding value.

    Row i of a split concatenates the three spatial dimensions of every
    feature's trajectory at each frame.  Divergent samples would raise from
    the integrator with the offending feature named; the dense (T=4, N=30)
    layout is stable over the z-scored feature range.
    """
    spec = SystemSpec.duffing(delta)
    out = {}
    for name in splits:
        X, _ = dataset.split(name)
        n, d = X.shape
        traj = encode_features(X.ravel(), spec, cfg)  # (n*d, N, 3)
        frames = traj.data.reshape(n, d, cfg.n_steps, 3)
        out[name] = np.ascontiguousarray(frames.transpose(0, 2, 1, 3).reshape(n, cfg.n_steps, d * 3))
    return out


def consumer_view(frames: np.ndarray, arch: str) -> np.ndarray:
    """What each architecture actually sees for a (n, N, d*3) frame tensor."""
    if arch == "snn":
        return frames
    if arch == "mlp_last_t":
        return frames[:, -1]
    return frames.mean(axis=1)  # mlp_avg_pool


class Classifier:
    """An architecture plus its forward convention over frame tensors."""

    def __init__(self, arch: str, in_dim: int, n_classes: int, width: int, beta: float,
                 rng: np.random.Generator, readout: str = "membrane_last",
                 readout_beta: float = 0.95):
        self.arch = arch
        if arch == "snn":
            sizes = [in_dim, width, width]
            if readout in ("count", "mem_sum"):  # these read the last spiking layer
                sizes = sizes + [n_classes]
            self.model = SpikingModel(sizes, n_classes, beta=beta, rng=rng, readout=readout)
            if self.model.readout is not None:
                self.model.readout.beta = readout_beta
        else:
            self.model = ad.MLP([in_dim, width, width, n_classes], rng)

    def logits(self, frames: np.ndarray, record_rates: bool = False):
        view = consumer_view(frames, self.arch)
        if self.arch == "snn":
            return self.model.run_sequence(view, record_rates=record_rates)
        out = self.model.forward(Tensor(view))
        return (out, []) if record_rates else out

    def params(self):
        return self.model.params()

    def accuracy(self, frames: np.ndarray, labels: np.ndarray, record_rates: bool = False):
        with ad.no_grad():
            result = self.logits(frames, record_rates=record_rates)
        out, rates = result if record_rates else (result, [])
        acc = 100.0 * float(np.mean(np.argmax(out.data, axis=1) == labels))
        return (acc, rates) if record_rates else acc


@dataclass
class TrainedRun:
    classifier: Classifier
    config: TrainConfig
    history: list  # one dict per epoch: train_loss, val_acc
    best_epoch: int
    best_val_acc: float


def train_model(dataset: TabularDataset, delta_train: float, cfg: TrainConfig,
                encoded: dict[str, np.ndarray] | None = None) -> TrainedRun:
    """Adam + cross-entropy with early stopping on validation accuracy.

    Returns the best-validation checkpoint (parameters restored in place).
    """
    if encoded is None:
        encoded = prepare_encoded(dataset, delta_train, cfg.encoding, ("train", "val"))
    frames_train, frames_val = encoded["train"], encoded["val"]
    _, y_train = dataset.split("train")
    _, y_val = dataset.split("val")

    rng = runio.generator(cfg.seed, "train_init", cfg.arch, int(delta_train * 1000))
    clf = Classifier(cfg.arch, frames_train.shape[2], dataset.n_classes, cfg.width, 0.95, rng,
                     readout=cfg.readout, readout_beta=cfg.readout_beta)
    params = clf.params()
    opt = ad.Adam(params, lr=cfg.lr)
    shuffle_rng = runio.generator(cfg.seed, "train_shuffle", cfg.arch, int(delta_train * 1000))

    history = []
    best_val, best_epoch = -1.0, -1
    best_snapshot = [p.data.copy() for p in params]
    n = frames_train.shape[0]
    for epoch in range(cfg.max_epochs):
        order = shuffle_rng.permutation(n)
        losses = []
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            out = clf.logits(frames_train[idx])
            if cfg.logit_scale != 1.0:
                out = ad.smul(out, cfg.logit_scale)
            loss = ad.softmax_cross_entropy(out, y_train[idx])
            grads, _ = ad.gradients(loss, params)
            opt.step(grads)
            losses.append(float(loss.data))
        val_acc = clf.accuracy(frames_val, y_val)
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_acc": val_acc})
        if val_acc > best_val:
            best_val, best_epoch = val_acc, epoch
            best_snapshot = [p.data.copy() for p in params]
        elif epoch - best_epoch >= cfg.patience:
            break
    for p, snap in zip(params, best_snapshot):
        p.data[:] = snap
    return TrainedRun(clf, cfg, history, best_epoch, best_val)


@dataclass
class GeneralizationMatrix:
    arch: str
    deltas: list
    mean: np.ndarray  # (n_train, n_test) accuracy %
    std: np.ndarray
    n_seeds: int


#: default encoding grid of the cross-encoding protocol
DELTA_GRID = (-1.5, -1.0, -0.3, 0.0, 0.3, 1.0, 1.5, 2.0, 2.5, 5.0, 7.0, 10.0)


def _matrix_job(job) -> list[dict]:
    arch, delta_train, seed, base_cfg, dataset_key = job
    dataset: TabularDataset = runio.shared(dataset_key)
    cfg = replace(base_cfg, arch=arch, delta_train=delta_train, seed=seed)
    encoded = {
        "train": runio.shared(f"enc/{dataset.cache_key}/{delta_train}/train"),
        "val": runio.shared(f"enc/{dataset.cache_key}/{delta_train}/val"),
    }
    run = train_model(dataset, delta_train, cfg, encoded=encoded)
    _, y_test = dataset.split("test")
    rows = []
    for delta_test in runio.shared("deltas_test"):
        frames = runio.shared(f"enc/{dataset.cache_key}/{delta_test}/test")
        acc, rates = run.classifier.accuracy(frames, y_test, record_rates=True)
        rows.append(
            {
                "arch": arch,
                "delta_train": delta_train,
                "delta_test": delta_test,
                "seed": seed,
                "accuracy": acc,
                "rates": rates,
                "epochs": len(run.history),
            }
        )
    return rows


def cross_matrix(dataset: TabularDataset, archs, deltas_train, deltas_test, seeds,
                 base_cfg: TrainConfig | None = None, processes: int | None = None):
    """Train/test accuracy rows over (arch, delta_train, seed) x delta_test.

    Failed runs are recorded with cause and excluded from aggregates rather
    than zero-filled.
    """
    base_cfg = base_cfg or TrainConfig()
    deltas_train = [float(d) for d in deltas_train]
    deltas_test = [float(d) for d in deltas_test]
    dataset_key = f"dataset/{dataset.cache_key}"
    runio.share(dataset_key, dataset)
    runio.share("deltas_test", deltas_test)
    for delta in sorted(set(deltas_train)):
        enc = prepare_encoded(dataset, delta, base_cfg.encoding, ("train", "val"))
        for split, frames in enc.items():
            runio.share(f"enc/{dataset.cache_key}/{delta}/{split}", frames)
    for delta in sorted(set(deltas_test)):
        enc = prepare_encoded(dataset, delta, base_cfg.encoding, ("test",))
        runio.share(f"enc/{dataset.cache_key}/{delta}/test", enc["test"])
    jobs = [
        (arch, dt, int(seed), base_cfg, dataset_key)
        for arch in archs
        for dt in deltas_train
        for seed in seeds
    ]
    rows, failures = [], []
    for job, result in zip(jobs, runio.run_jobs(_safe_matrix_job, jobs, processes)):
        if isinstance(result, dict):  # failure record
            failures.append(result)
        else:
            rows.extend(result)
    matrices = {}
    for arch in archs:
        mean = np.full((len(deltas_train), len(deltas_test)), np.nan)
        std = np.full_like(mean, np.nan)
        for i, dt in enumerate(deltas_train):
            for j, dte in enumerate(deltas_test):
                accs = [
                    r["accuracy"]
                    for r in rows
                    if r["arch"] == arch and r["delta_train"] == dt and r["delta_test"] == dte
                ]
                if accs:
                    mean[i, j] = np.mean(accs)
                    std[i, j] = np.std(accs)
        matrices[arch] = GeneralizationMatrix(arch, list(deltas_train), mean, std, len(seeds))
    return rows, matrices, failures


def _safe_matrix_job(job):
    try:
        return _matrix_job(job)
    except (ad.NonFiniteError, RuntimeError, ValueError) as err:
        arch, delta_train, seed = job[0], job[1], job[2]
        return {"arch": arch, "delta_train": delta_train, "seed": seed, "error": str(err)}


@dataclass
class CVReport:
    rows: list  # per (arch, delta_train, seed, layer): cv, ood_accuracy
    pearson_by_layer: dict  # layer index (1-based) -> r over (train, test, seed) samples
    undefined: list  # rows whose mean rate was zero (cv undefined, excluded)


def population_cv(values) -> float:
    """sigma / mu with the population (not sample) standard deviation."""
    values = np.asarray(values, dtype=np.float64)
    mu = values.mean()
    if mu == 0:
        return math.nan
    return float(values.std() / mu)


def cv_analysis(matrix_rows: list[dict]) -> CVReport:
    """Firing-rate stability vs out-of-distribution accuracy.

    CV is computed per (model, layer) across test encodings; each
    (train, test, seed) sample pairs its model's layer CV with the accuracy
    on that test encoding, and Pearson r is taken over all samples.
    """
    snn_rows = [r for r in matrix_rows if r["arch"] == "snn" and "rates" in r]
    by_model: dict[tuple, list[dict]] = {}
    for r in snn_rows:
        by_model.setdefault((r["delta_train"], r["seed"]), []).append(r)

    report_rows, undefined = [], []
    samples_by_layer: dict[int, list[tuple[float, float]]] = {}
    for (delta_train, seed), rows in sorted(by_model.items()):
        rows = sorted(rows, key=lambda r: r["delta_test"])
        n_layers = len(rows[0]["rates"])
        ood = [r["accuracy"] for r in rows if r["delta_test"] != delta_train]
        ood_acc = float(np.mean(ood)) if ood else math.nan
        for layer in range(n_layers):
            cv = population_cv([r["rates"][layer] for r in rows])
            row = {
                "arch": "snn",
                "delta_train": delta_train,
                "seed": seed,
                "layer": layer + 1,
                "cv": cv,
                "ood_accuracy": ood_acc,
            }
            if math.isnan(cv):
                undefined.append(row)
                continue
            report_rows.append(row)
            for r in rows:
                samples_by_layer.setdefault(layer + 1, []).append((cv, r["accuracy"]))
    pearson = {}
    for layer, pts in samples_by_layer.items():
        x, y = np.array([p[0] for p in pts]), np.array([p[1] for p in pts])
        if len(pts) >= 3 and x.std() > 0 and y.std() > 0:
            pearson[layer] = float(np.corrcoef(x, y)[0, 1])
        else:
            pearson[layer] = math.nan
    return CVReport(report_rows, pearson, undefined)
