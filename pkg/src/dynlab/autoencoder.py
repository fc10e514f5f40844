"""Experiment 2: sparse spiking autoencoder on image patches.

A linear encoder drives a 128-unit LIF bottleneck for T steps; the decoder
reconstructs the static patch from the total spike-count vector.  The loss
is reconstruction MSE plus a weighted L1 on the spike counts.  Receptive
fields are the encoder rows; their population standard deviation is the
structure score that separates organized filters from noise.

Input encodings cover a static baseline, temporal jitter, linear rate
ramping, Poisson spiking, and dynamical encoders (duffing by damping value,
plus Lorenz/Thomas for the universality checks).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from dynlab import autodiff as ad
from dynlab import runio
from dynlab.autodiff import Tensor
from dynlab.spiking import LIFLayer
from dynlab.systems import DRIVE_CLIP, EncodingConfig, SystemSpec, encode_features

PATCH_SIDE = 16
PATCH_DIM = PATCH_SIDE * PATCH_SIDE
CIFAR_RECORD_BYTES = 3073  # 1 label byte + 32*32*3 pixel bytes


@dataclass(frozen=True)
class PatchDataset:
    patches: np.ndarray  # (n, 256) in [0, 1]
    source: str

    def __post_init__(self):
        if self.patches.ndim != 2 or self.patches.shape[1] != PATCH_DIM:
            raise ValueError(f"patches must be (n, {PATCH_DIM})")
        self.patches.flags.writeable = False

    @property
    def cache_key(self) -> str:
        import hashlib

        return hashlib.sha256(self.patches.tobytes()).hexdigest()[:16]


def synthetic_patches(n: int, seed: int) -> np.ndarray:
    """Dead-leaves composites: occluding oriented shapes on a gray canvas.

    A no-download stand-in for natural-image crops.  Overlapping rotated
    ellipses of random gray level produce oriented edges, occlusion
    boundaries, and a falling power spectrum - the higher-order structure
    receptive-field learning feeds on (pure 1/f Gaussian noise has random
    phases and supports no filter specialization).
    """
    rng = runio.generator(seed, "synthetic_patches")
    yy, xx = np.mgrid[0:PATCH_SIDE, 0:PATCH_SIDE].astype(np.float64)
    patches = np.empty((n, PATCH_SIDE, PATCH_SIDE))
    for i in range(n):
        canvas = np.full((PATCH_SIDE, PATCH_SIDE), rng.uniform(0.2, 0.8))
        for _ in range(rng.integers(6, 14)):
            cx, cy = rng.uniform(-2, PATCH_SIDE + 2, size=2)
            theta = rng.uniform(0, np.pi)
            a = rng.uniform(1.5, 9.0)
            b = rng.uniform(0.8, 5.0)
            gray = rng.uniform(0.0, 1.0)
            dx, dy = xx - cx, yy - cy
            u = dx * np.cos(theta) + dy * np.sin(theta)
            v = -dx * np.sin(theta) + dy * np.cos(theta)
            canvas[(u / a) ** 2 + (v / b) ** 2 <= 1.0] = gray
        patches[i] = canvas
    return np.clip(patches.reshape(n, PATCH_DIM), 0.0, 1.0)


def parse_cifar_batch(path: str) -> np.ndarray:
    """Grayscale 32x32 images in [0, 1] from a CIFAR-10 binary batch file."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % CIFAR_RECORD_BYTES != 0:
        raise ValueError(
            f"{path}: truncated CIFAR binary (size {raw.size} not a multiple of {CIFAR_RECORD_BYTES})"
        )
    records = raw.reshape(-1, CIFAR_RECORD_BYTES)
    rgb = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return 0.299 * rgb[:, 0] + 0.587 * rgb[:, 1] + 0.114 * rgb[:, 2]


def extract_patches(source: str | None, n: int = 5000, seed: int = 0) -> PatchDataset:
    """Random 16x16 crops from CIFAR binaries, or synthetic 1/f patches.

    ``source`` may be a CIFAR batch file, a directory containing *.bin
    batches, or None for the synthetic fallback.  Sampling is with
    replacement, so any n is allowed.
    """
    if source is None:
        return PatchDataset(synthetic_patches(n, seed), "synthetic-1/f")
    paths = []
    if os.path.isdir(source):
        paths = sorted(
            os.path.join(source, f) for f in os.listdir(source) if f.endswith(".bin")
        )
    elif os.path.exists(source):
        paths = [source]
    if not paths:
        raise FileNotFoundError(f"no CIFAR binaries found at {source}")
    images = np.concatenate([parse_cifar_batch(p) for p in paths])
    rng = runio.generator(seed, "cifar_crops")
    idx = rng.integers(0, images.shape[0], size=n)
    max_off = 32 - PATCH_SIDE
    ys = rng.integers(0, max_off + 1, size=n)
    xs = rng.integers(0, max_off + 1, size=n)
    patches = np.empty((n, PATCH_DIM))
    for i, (img, y, x) in enumerate(zip(images[idx], ys, xs)):
        patches[i] = img[y : y + PATCH_SIDE, x : x + PATCH_SIDE].reshape(-1)
    return PatchDataset(np.clip(patches, 0.0, 1.0), source)


@dataclass(frozen=True)
class EncoderKind:
    """One of the eight input encodings (plus alternative-system variants)."""

    kind: str  # baseline | random | linear | poisson | dynamic
    delta: float | None = None
    system: SystemSpec | None = None
    f_max_dt: float = 1.0  # poisson rate cap: one spike per step at pixel value 1
    t_steps: int = 5
    encoding: EncodingConfig = field(default_factory=lambda: EncodingConfig(8.0, 5))

    @staticmethod
    def named(name: str) -> "EncoderKind":
        table = {
            "baseline": EncoderKind("baseline"),
            "random": EncoderKind("random"),
            "linear": EncoderKind("linear"),
            "poisson": EncoderKind("poisson"),
            "expansive": EncoderKind("dynamic", delta=-1.5),
            "critical": EncoderKind("dynamic", delta=0.0),
            "transition": EncoderKind("dynamic", delta=2.0),
            "dissipative": EncoderKind("dynamic", delta=10.0),
        }
        if name not in table:
            raise ValueError(f"unknown encoder {name!r}; choose from {sorted(table)}")
        return table[name]

    @property
    def label(self) -> str:
        if self.kind == "dynamic":
            if self.system is not None:
                if self.system.kind == "lorenz":
                    return f"lorenz(rho={self.system.rho:g})"
                return f"thomas(b={self.system.b:g})"
            return f"dynamic(delta={self.delta:g})"
        return self.kind


def encode_input(patches: np.ndarray, enc: EncoderKind, rng: np.random.Generator | None = None) -> np.ndarray:
    """Input sequences (n, T, 256) for a batch of patches in [0, 1]."""
    patches = np.asarray(patches, dtype=np.float64)
    single = patches.ndim == 1
    if single:
        patches = patches[None, :]
    n, d = patches.shape
    t_steps = enc.t_steps
    if enc.kind == "baseline":
        out = np.zeros((n, t_steps, d))
        out[:, 0] = patches
    elif enc.kind == "random":
        if rng is None:
            raise ValueError("random encoder needs an rng")
        out = np.clip(patches[:, None, :] + rng.normal(0.0, 0.1, size=(n, t_steps, d)), 0.0, 1.0)
    elif enc.kind == "linear":
        ramp = (np.arange(1, t_steps + 1) / t_steps)[None, :, None]
        out = patches[:, None, :] * ramp
    elif enc.kind == "poisson":
        if rng is None:
            raise ValueError("poisson encoder needs an rng")
        p = np.clip(patches * enc.f_max_dt, 0.0, 1.0)
        out = (rng.random((n, t_steps, d)) < p[:, None, :]).astype(np.float64)
    elif enc.kind == "dynamic":
        spec = enc.system if enc.system is not None else SystemSpec.duffing(enc.delta)
        cfg = enc.encoding
        traj = encode_features(patches.ravel(), spec, cfg, clip=DRIVE_CLIP)
        frames = traj.data.reshape(n, d, cfg.n_steps, 3).sum(axis=3)  # collapse x+y+z
        out = np.ascontiguousarray(frames.transpose(0, 2, 1))
    else:
        raise ValueError(f"unknown encoder kind {enc.kind!r}")
    return out[0] if single else out


#: init gain of the autoencoder weight matrices; entries then match the
#: kaiming-uniform scale (std 1/sqrt(3*in)), leaving the bottleneck mostly
#: silent at init so learned structure shows up as receptive-field variance
#: growth rather than being masked by the init scale
SAE_INIT_GAIN = 1.0 / math.sqrt(3.0)


class SAEModel:
    """Linear encoder, LIF bottleneck (spike-count code), linear decoder."""

    def __init__(self, n_units: int = 128, in_dim: int = PATCH_DIM, beta: float = 0.95,
                 sparsity_weight: float = 1.0, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.bottleneck = LIFLayer(in_dim, n_units, beta=beta, rng=rng, name="sae.enc",
                                   w_gain=SAE_INIT_GAIN)
        self.w_dec = Tensor(ad.orthogonal(rng, (n_units, in_dim), SAE_INIT_GAIN), True, "sae.dec")
        self.sparsity_weight = float(sparsity_weight)
        self.n_units = n_units
        self.in_dim = in_dim

    @property
    def w_enc(self) -> np.ndarray:
        """Encoder dictionary, one receptive field per row (units x pixels)."""
        return self.bottleneck.w.data.T

    def spike_code(self, sequences: np.ndarray) -> Tensor:
        """Total spike counts z = sum_t S(t) for (n, T, in_dim) sequences."""
        n, t_steps, _ = sequences.shape
        self.bottleneck.reset(n)
        z = None
        for t in range(t_steps):
            s = self.bottleneck.step(Tensor(sequences[:, t]))
            z = s if z is None else ad.add(z, s)
        return z

    def losses(self, sequences: np.ndarray, targets: np.ndarray):
        """(total, reconstruction, sparsity); total = recon + weight * sparsity.

        Sparsity is the population-normalized code activity:
        ||z||_1 / (batch * units^2 * T).  At that scale a unit sparsity
        weight exerts mild pressure relative to the per-pixel reconstruction
        error (it biases the code sparse without silencing it), and the
        reported values sit in the 1e-5..1e-2 band across encoders.
        """
        z = self.spike_code(sequences)
        t_steps = sequences.shape[1]
        recon = ad.matmul(z, self.w_dec)
        recon_loss = ad.mse(recon, targets)
        sparsity_loss = ad.smul(ad.l1_norm(z), 1.0 / (t_steps * self.n_units))
        total = ad.add(recon_loss, ad.smul(sparsity_loss, self.sparsity_weight))
        return total, recon_loss, sparsity_loss

    def params(self) -> list[Tensor]:
        return self.bottleneck.params() + [self.w_dec]

    def rf_images(self) -> np.ndarray:
        return self.w_enc.reshape(self.n_units, PATCH_SIDE, PATCH_SIDE)


def rf_std(w_enc: np.ndarray) -> float:
    """Population standard deviation over all dictionary entries."""
    w = np.asarray(w_enc, dtype=np.float64)
    return float(np.sqrt(np.mean((w - w.mean()) ** 2)))


@dataclass(frozen=True)
class SAETrainConfig:
    seed: int = 0
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    n_units: int = 128


@dataclass
class RFReport:
    encoder: str
    sparsity_weight: float
    seed: int
    sigma_rf: float
    recon_loss: float
    sparsity_loss: float
    total_loss: float


def train_sae(patches: np.ndarray, enc: EncoderKind, sparsity_weight: float,
              cfg: SAETrainConfig, sequences: np.ndarray | None = None):
    """Train to the fixed epoch budget; returns (model, report).

    ``sequences`` may carry a precomputed encoding of the full patch set
    (stochastic encoders are sampled once per run with the run's stream).
    """
    if sparsity_weight < 0:
        raise ValueError("sparsity weight must be >= 0")
    patches = np.asarray(patches, dtype=np.float64)
    if sequences is None:
        sequences = encode_input(patches, enc, rng=runio.generator(cfg.seed, "sae_enc", enc.label))
    rng = runio.generator(cfg.seed, "sae_init", enc.label, int(sparsity_weight * 1000))
    model = SAEModel(cfg.n_units, patches.shape[1], sparsity_weight=sparsity_weight, rng=rng)
    params = model.params()
    opt = ad.Adam(params, lr=cfg.lr)
    shuffle_rng = runio.generator(cfg.seed, "sae_shuffle", enc.label, int(sparsity_weight * 1000))
    n = patches.shape[0]
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            total, _, _ = model.losses(sequences[idx], patches[idx])
            grads, _ = ad.gradients(total, params)
            opt.step(grads)
    # final losses over the full set, in evaluation mode
    with ad.no_grad():
        totals, recons, sparsities = [], [], []
        for lo in range(0, n, 512):
            t, r, s = model.losses(sequences[lo : lo + 512], patches[lo : lo + 512])
            w = min(512, n - lo) / n
            totals.append(float(t.data) * w)
            recons.append(float(r.data) * w)
            sparsities.append(float(s.data) * w)
    report = RFReport(
        encoder=enc.label,
        sparsity_weight=sparsity_weight,
        seed=cfg.seed,
        sigma_rf=rf_std(model.w_enc),
        recon_loss=sum(recons),
        sparsity_loss=sum(sparsities),
        total_loss=sum(totals),
    )
    return model, report


def export_rf_images(outdir: str, model: SAEModel) -> None:
    """Signed RF weights as 8-bit PGMs over a symmetric range centered at 0."""
    os.makedirs(outdir, exist_ok=True)
    images = model.rf_images()
    scale = float(np.abs(images).max()) or 1.0
    for i, img in enumerate(images):
        quantized = np.clip((img / scale) * 127.5 + 127.5, 0, 255).astype(np.uint8)
        with open(os.path.join(outdir, f"neuron_{i:03d}.pgm"), "wb") as fh:
            fh.write(f"P5\n{PATCH_SIDE} {PATCH_SIDE}\n255\n".encode())
            fh.write(quantized.tobytes())
    import json

    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump({"count": len(images), "side": PATCH_SIDE, "scale": scale}, fh)


def _sae_job(job):
    enc_label, lam, seed, cfg, patches_key, seq_key = job
    patches = runio.shared(patches_key)
    sequences = runio.shared(seq_key) if seq_key else None
    enc = _resolve_encoder(enc_label)
    try:
        _, report = train_sae(patches, enc, lam, replace(cfg, seed=seed), sequences=sequences)
        return report
    except ad.NonFiniteError as err:
        return {"encoder": enc_label, "lambda": lam, "seed": seed, "error": str(err)}


_ENCODER_REGISTRY: dict[str, EncoderKind] = {}


def _resolve_encoder(label: str) -> EncoderKind:
    if label in _ENCODER_REGISTRY:
        return _ENCODER_REGISTRY[label]
    return EncoderKind.named(label)


def register_encoder(enc: EncoderKind) -> str:
    _ENCODER_REGISTRY[enc.label] = enc
    return enc.label


def run_sae_grid(patches: PatchDataset, encoders: list[EncoderKind], lambdas, seeds,
                 cfg: SAETrainConfig | None = None, processes: int | None = None):
    """One trained SAE per (encoder, lambda, seed); deterministic encodings
    are precomputed once and shared with the worker pool."""
    cfg = cfg or SAETrainConfig()
    patches_key = runio.share(f"patches/{patches.cache_key}", patches.patches)
    jobs = []
    for enc in encoders:
        label = register_encoder(enc)
        seq_key = ""
        if enc.kind in ("baseline", "linear", "dynamic"):  # deterministic given patches
            seq_key = f"seq/{patches.cache_key}/{label}"
            if seq_key not in runio._SHARED:
                runio.share(seq_key, encode_input(patches.patches, enc))
        for lam in lambdas:
            for seed in seeds:
                jobs.append((label, float(lam), int(seed), cfg, patches_key, seq_key))
    results = runio.run_jobs(_sae_job, jobs, processes)
    reports = [r for r in results if isinstance(r, RFReport)]
    failures = [r for r in results if not isinstance(r, RFReport)]
    return reports, failures


def _label_param(label: str) -> float:
    return float(label.split("=")[1].rstrip(")"))


def rf_scan(patches: PatchDataset, deltas, lambdas, seeds,
            cfg: SAETrainConfig | None = None, processes: int | None = None):
    """Structure landscape over (delta, lambda) cells for the duffing encoder."""
    if not (len(list(deltas)) and len(list(lambdas))):
        return [], []
    encoders = [EncoderKind("dynamic", delta=float(d)) for d in deltas]
    reports, failures = run_sae_grid(patches, encoders, lambdas, seeds, cfg, processes)
    rows = [
        {
            "delta": _label_param(r.encoder),
            "lambda": r.sparsity_weight,
            "seed": r.seed,
            "sigma_rf": r.sigma_rf,
            "recon": r.recon_loss,
            "sparsity": r.sparsity_loss,
        }
        for r in reports
    ]
    return rows, failures


def universality_run(patches: PatchDataset, system: str, grid, lam: float, seeds,
                     cfg: SAETrainConfig | None = None, processes: int | None = None):
    """Same pipeline with Lorenz (rho grid) or Thomas (b grid) encoders."""
    grid = list(grid)
    if not grid:
        return [], []
    if system == "lorenz":
        encoders = [EncoderKind("dynamic", system=SystemSpec.lorenz(v)) for v in grid]
    elif system == "thomas":
        encoders = [EncoderKind("dynamic", system=SystemSpec.thomas(v)) for v in grid]
    else:
        raise ValueError("system must be 'lorenz' or 'thomas'")
    reports, failures = run_sae_grid(patches, encoders, [lam], seeds, cfg, processes)
    rows = [
        {
            "system": system,
            "param": _label_param(r.encoder),
            "lambda": r.sparsity_weight,
            "seed": r.seed,
            "sigma_rf": r.sigma_rf,
            "recon": r.recon_loss,
            "sparsity": r.sparsity_loss,
        }
        for r in reports
    ]
    return rows, failures
