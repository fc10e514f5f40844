"""Dynamics-induced PAC-Bayes analysis of the spiking classifier.

A two-layer Bayesian spiking network carries Gaussian variational
posteriors on both weight matrices (reparameterized sampling).  The prior
variance is tied to the encoder's phase-space contraction: sigma_p^2 =
sigma_0^2 * exp(clip(sum_lambda * T_enc)), so expansive encodings induce a
diffuse prior and dissipative encodings a concentrated one.  The McAllester
bound combines the empirical training error with the posterior-prior KL.

Gradient-stability statistics come from a separate non-Bayesian twin
trained with plain SGD while recording per-minibatch gradient norms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from dynlab import autodiff as ad
from dynlab import runio
from dynlab.autodiff import Tensor
from dynlab.classify import TabularDataset
from dynlab.spiking import spike
from dynlab.systems import DRIVE_CLIP, EncodingConfig, SystemSpec, encode_features

#: Lyapunov sums of the duffing reference table (identical to the analytic
#: trace -2*delta on the published grid; kept as an explicit lookup).
SIGMA_SUM_TABLE = {
    -1.5: 3.0, -1.0: 2.0, -0.6: 1.2, -0.3: 0.6, -0.15: 0.3, 0.0: 0.0,
    0.15: -0.3, 0.3: -0.6, 0.6: -1.2, 1.0: -2.0, 1.5: -3.0, 2.0: -4.0,
    2.5: -5.0, 4.0: -8.0, 5.0: -10.0, 7.0: -14.0, 10.0: -20.0,
}

EXPONENT_CLIP = 5.0
T_ENC_DEFAULT = 4.0


def sigma_sum(delta: float) -> float:
    """Table lookup with the analytic -2*delta fallback off-grid."""
    return SIGMA_SUM_TABLE.get(float(delta), -2.0 * float(delta))


def prior_variance(delta: float, sigma0_sq: float = 1.0, t_enc: float = T_ENC_DEFAULT,
                   exponent_clip: float = EXPONENT_CLIP) -> float:
    """sigma_p^2(delta) = sigma_0^2 * exp(clip(sum_lambda * T_enc))."""
    exponent = sigma_sum(delta) * t_enc
    exponent = max(-exponent_clip, min(exponent_clip, exponent))
    return sigma0_sq * math.exp(exponent)


def kl_gaussian(mu, sigma_q_sq, sigma_p_sq: float) -> float:
    """KL( N(mu_k, sigma_q_k^2) || N(0, sigma_p^2) ) summed over elements."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma_q_sq = np.asarray(sigma_q_sq, dtype=np.float64)
    if np.any(sigma_q_sq <= 0) or sigma_p_sq <= 0:
        raise ValueError("variances must be positive")
    terms = (
        0.5 * np.log(sigma_p_sq / sigma_q_sq)
        + (sigma_q_sq + mu**2) / (2.0 * sigma_p_sq)
        - 0.5
    )
    return float(terms.sum())


def pac_bound(train_error: float, kl: float, m: int, delta_conf: float = 0.05) -> float:
    """McAllester upper bound on the true risk."""
    if m < 2:
        raise ValueError("m must be >= 2")
    if not 0.0 <= train_error <= 1.0:
        raise ValueError("train_error must lie in [0, 1]")
    radical = (kl + math.log(2.0 * math.sqrt(m) / delta_conf)) / (2.0 * (m - 1))
    return train_error + math.sqrt(radical)


@dataclass(frozen=True)
class BayesConfig:
    seed: int = 0
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    timesteps: int = 5
    hidden: int = 128
    beta: float = 0.95
    t_enc: float = T_ENC_DEFAULT
    sigma0_sq: float = 1.0
    logvar_init: float = -6.0
    eval_samples: int = 8


@dataclass
class PacReport:
    delta: float
    seed: int
    kl: float
    train_error: float
    test_error: float
    gap: float
    bound: float
    bound_valid: bool
    m: int
    delta_conf: float = 0.05


class GaussianVariationalLayer:
    """Weight matrix with learned mean and log-variance; samples by
    reparameterization (w = mu + sigma_q * eps)."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 gain: float, logvar_init: float, name: str):
        self.mu = Tensor(ad.orthogonal(rng, (in_dim, out_dim), gain), True, f"{name}.mu")
        self.logvar = Tensor(np.full((in_dim, out_dim), logvar_init), True, f"{name}.logvar")

    def sample(self, eps: np.ndarray) -> Tensor:
        sigma = ad.exp(ad.smul(self.logvar, 0.5))
        return ad.add(self.mu, ad.mul(sigma, Tensor(eps)))

    def kl_to_prior(self, sigma_p_sq: float) -> float:
        return kl_gaussian(self.mu.data, np.exp(self.logvar.data), sigma_p_sq)

    def params(self):
        return [self.mu, self.logvar]


class BayesianSpikingNet:
    """Two Gaussian weight layers around a LIF hidden layer; integrated readout."""

    def __init__(self, in_dim: int, hidden: int, n_classes: int, cfg: BayesConfig,
                 rng: np.random.Generator):
        self.cfg = cfg
        self.l1 = GaussianVariationalLayer(in_dim, hidden, rng, math.sqrt(2.0), cfg.logvar_init, "bayes.l1")
        self.l2 = GaussianVariationalLayer(hidden, n_classes, rng, 0.01, cfg.logvar_init, "bayes.l2")
        self.theta = Tensor(np.ones(hidden), True, "bayes.theta")
        self.hidden = hidden
        self.n_classes = n_classes

    def forward(self, frames: np.ndarray, eps1: np.ndarray, eps2: np.ndarray) -> Tensor:
        """Logits for (batch, T, in_dim) frames under one weight sample."""
        w1 = self.l1.sample(eps1)
        w2 = self.l2.sample(eps2)
        batch, t_steps, _ = frames.shape
        beta = self.cfg.beta
        mem = Tensor(np.zeros((batch, self.hidden)))
        out_mem = Tensor(np.zeros((batch, self.n_classes)))
        logits = Tensor(np.zeros((batch, self.n_classes)))
        for t in range(t_steps):
            mem = ad.add(ad.smul(mem, beta), ad.matmul(Tensor(frames[:, t]), w1))
            s = spike(mem, self.theta)
            mem = ad.sub(mem, ad.mul(s, self.theta))
            out_mem = ad.add(ad.smul(out_mem, beta), ad.matmul(s, w2))
            logits = ad.add(logits, out_mem)
        return logits

    def kl(self, sigma_p_sq: float) -> float:
        """Posterior-prior KL over the weights of both layers (thresholds excluded)."""
        return self.l1.kl_to_prior(sigma_p_sq) + self.l2.kl_to_prior(sigma_p_sq)

    def params(self):
        return self.l1.params() + self.l2.params() + [self.theta]


def encode_for_analysis(dataset: TabularDataset, delta: float, cfg: BayesConfig,
                        splits=("train", "test")) -> dict[str, np.ndarray]:
    """Sparse (T_enc, 5-step) encoding; drive-clipped so expansive regimes
    stay finite at this sampling resolution."""
    spec = SystemSpec.duffing(delta)
    enc_cfg = EncodingConfig(cfg.t_enc, cfg.timesteps)
    out = {}
    for split in splits:
        X, _ = dataset.split(split)
        n, d = X.shape
        traj = encode_features(X.ravel(), spec, enc_cfg, clip=DRIVE_CLIP)
        frames = traj.data.reshape(n, d, cfg.timesteps, 3)
        out[split] = np.ascontiguousarray(
            frames.transpose(0, 2, 1, 3).reshape(n, cfg.timesteps, d * 3)
        )
    return out


def _error_rate(net: BayesianSpikingNet, frames: np.ndarray, labels: np.ndarray,
                rng: np.random.Generator, samples: int) -> float:
    """Posterior-averaged misclassification rate."""
    errors = []
    with ad.no_grad():
        for _ in range(samples):
            eps1 = rng.standard_normal(net.l1.mu.data.shape)
            eps2 = rng.standard_normal(net.l2.mu.data.shape)
            preds = []
            for lo in range(0, frames.shape[0], 256):
                logits = net.forward(frames[lo : lo + 256], eps1, eps2)
                preds.append(np.argmax(logits.data, axis=1))
            errors.append(float(np.mean(np.concatenate(preds) != labels)))
    return float(np.mean(errors))


def train_bayesian_snn(dataset: TabularDataset, delta: float, cfg: BayesConfig | None = None,
                       encoded: dict[str, np.ndarray] | None = None) -> PacReport:
    """Cross-entropy training on sampled weights; KL is measured, not penalized.

    A zero-epoch budget reports initialization statistics without training.
    """
    cfg = cfg or BayesConfig()
    if encoded is None:
        encoded = encode_for_analysis(dataset, delta, cfg)
    frames_train, frames_test = encoded["train"], encoded["test"]
    _, y_train = dataset.split("train")
    _, y_test = dataset.split("test")

    rng = runio.generator(cfg.seed, "bayes_init", int(delta * 1000))
    net = BayesianSpikingNet(frames_train.shape[2], cfg.hidden, dataset.n_classes, cfg, rng)
    params = net.params()
    opt = ad.Adam(params, lr=cfg.lr)
    noise_rng = runio.generator(cfg.seed, "bayes_noise", int(delta * 1000))
    shuffle_rng = runio.generator(cfg.seed, "bayes_shuffle", int(delta * 1000))

    n = frames_train.shape[0]
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            eps1 = noise_rng.standard_normal(net.l1.mu.data.shape)
            eps2 = noise_rng.standard_normal(net.l2.mu.data.shape)
            loss = ad.softmax_cross_entropy(net.forward(frames_train[idx], eps1, eps2), y_train[idx])
            grads, _ = ad.gradients(loss, params)
            opt.step(grads)

    sigma_p_sq = prior_variance(delta, cfg.sigma0_sq, cfg.t_enc)
    kl = net.kl(sigma_p_sq)
    eval_rng = runio.generator(cfg.seed, "bayes_eval", int(delta * 1000))
    train_err = _error_rate(net, frames_train, y_train, eval_rng, cfg.eval_samples)
    test_err = _error_rate(net, frames_test, y_test, eval_rng, cfg.eval_samples)
    bound = pac_bound(train_err, kl, m=n)
    return PacReport(
        delta=float(delta),
        seed=cfg.seed,
        kl=kl,
        train_error=train_err,
        test_error=test_err,
        gap=test_err - train_err,
        bound=bound,
        bound_valid=bound >= test_err,
        m=n,
    )


@dataclass(frozen=True)
class GradStatsConfig:
    seed: int = 0
    epochs: int = 200
    batch_size: int = 32
    lr: float = 0.05
    timesteps: int = 5
    hidden: int = 128
    beta: float = 0.95
    t_enc: float = T_ENC_DEFAULT


@dataclass
class GradStats:
    delta: float
    seed: int
    mu_grad: float
    cv_grad: float
    n_batches: int


def series_cv(values, eps: float = 1e-8) -> float:
    """Coefficient of variation sigma / (mu + eps) of a norm series."""
    values = np.asarray(values, dtype=np.float64)
    return float(values.std() / (values.mean() + eps))


def gradient_stats(dataset: TabularDataset, delta: float, cfg: GradStatsConfig | None = None,
                   encoded: dict[str, np.ndarray] | None = None) -> GradStats:
    """Plain-SGD twin run recording the global gradient norm per minibatch."""
    from dynlab.spiking import SpikingModel

    cfg = cfg or GradStatsConfig()
    if encoded is None:
        bayes_like = BayesConfig(timesteps=cfg.timesteps, t_enc=cfg.t_enc)
        encoded = encode_for_analysis(dataset, delta, bayes_like, splits=("train",))
    frames_train = encoded["train"]
    _, y_train = dataset.split("train")
    rng = runio.generator(cfg.seed, "gradstats_init", int(delta * 1000))
    model = SpikingModel([frames_train.shape[2], cfg.hidden], dataset.n_classes,
                         beta=cfg.beta, rng=rng)
    params = model.params()
    shuffle_rng = runio.generator(cfg.seed, "gradstats_shuffle", int(delta * 1000))
    norms = []
    n = frames_train.shape[0]
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            loss = ad.softmax_cross_entropy(model.run_sequence(frames_train[idx]), y_train[idx])
            grads, _ = ad.gradients(loss, params)
            norms.append(ad.global_norm(grads))
            ad.sgd_step(params, grads, cfg.lr)
    return GradStats(
        delta=float(delta),
        seed=cfg.seed,
        mu_grad=float(np.mean(norms)),
        cv_grad=series_cv(norms),
        n_batches=len(norms),
    )
