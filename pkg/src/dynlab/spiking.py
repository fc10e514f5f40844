"""Spiking layers with surrogate-gradient training.

The spike nonlinearity is a hard threshold in the forward pass and a fast
sigmoid in the backward pass: d(spike)/du = 1 / (1 + slope * |u|)^2 with
u = mem - theta and slope 25.  Membranes leak by a factor beta per step and
reset by threshold subtraction, so residual drive above theta carries over.

For gradient checking, layers can run in ``smooth`` mode, replacing the
Heaviside with the fast sigmoid itself; the recorded backward rule is then
the exact derivative of the forward, so finite differences must agree.
"""

from __future__ import annotations

import math

import numpy as np

from dynlab import autodiff as ad
from dynlab.autodiff import Tensor

SURROGATE_SLOPE = 25.0


def surrogate_grad(u, slope: float = SURROGATE_SLOPE):
    """Fast-sigmoid surrogate derivative of the spike: 1 / (1 + slope|u|)^2."""
    return 1.0 / (1.0 + slope * np.abs(u)) ** 2


def spike(mem: Tensor, theta: Tensor, slope: float = SURROGATE_SLOPE, smooth: bool = False) -> Tensor:
    """Heaviside(mem - theta) with surrogate backward into both mem and theta."""
    u = mem.data - theta.data
    if smooth:
        out_data = u / (1.0 + slope * np.abs(u)) + 0.5
    else:
        out_data = (u > 0).astype(np.float64)
    factor = surrogate_grad(u, slope)

    def backward(out):
        g = out.grad * factor
        if mem.requires_grad:
            mem.add_grad(g)
        if theta.requires_grad:
            theta.add_grad(ad._unbroadcast(-g, theta.data.shape))

    return ad._out(out_data, (mem, theta), backward, "spike")


def spectral_radius_init(rng: np.random.Generator, n: int, radius: float = 0.9, iters: int = 50) -> np.ndarray:
    """Random matrix rescaled to a target spectral radius.

    Power iteration with a geometric-mean growth estimate over the tail
    iterations; a plain norm ratio oscillates when the dominant eigenvalue
    pair is complex, the average does not.
    """
    w = rng.standard_normal((n, n)) / math.sqrt(n)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    log_growth = []
    for _ in range(iters):
        v = w @ v
        norm = np.linalg.norm(v)
        if norm == 0:
            return w * 0.0
        log_growth.append(math.log(norm))
        v /= norm
    tail = log_growth[iters // 2 :]
    estimate = math.exp(sum(tail) / len(tail))
    return w * (radius / estimate)


class LIFLayer:
    """Leaky integrate-and-fire layer with learnable per-neuron thresholds."""

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        beta: float = 0.95,
        rng: np.random.Generator | None = None,
        w_gain: float = math.sqrt(2.0),
        theta_init: float = 1.0,
        name: str = "lif",
    ):
        if not 0.0 <= beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.beta = beta
        self.w = Tensor(ad.fan_scaled_orthogonal(rng, (in_dim, out_dim), w_gain), True, f"{name}.w")
        self.theta = Tensor(np.full(out_dim, theta_init), True, f"{name}.theta")
        self.mem: Tensor | None = None
        self.smooth = False

    @property
    def tau_mem(self) -> float:
        return math.inf if self.beta >= 1.0 else -1.0 / math.log(self.beta)

    def reset(self, batch: int) -> None:
        self.mem = Tensor(np.zeros((batch, self.out_dim)))

    def _drive(self, x_t: Tensor) -> Tensor:
        return ad.matmul(x_t, self.w)

    def step(self, x_t: Tensor) -> Tensor:
        if self.mem is None:
            raise RuntimeError("layer state not initialized; call reset(batch) first")
        if x_t.data.shape[0] != self.mem.data.shape[0]:
            raise ValueError(
                f"batch mismatch: state {self.mem.data.shape[0]}, input {x_t.data.shape[0]}"
            )
        self.mem = ad.add(ad.smul(self.mem, self.beta), self._drive(x_t))
        s = spike(self.mem, self.theta, smooth=self.smooth)
        self.pre_reset_mem = self.mem  # threshold-comparison value, pre-subtraction
        self.mem = ad.sub(self.mem, ad.mul(s, self.theta))
        return s

    def params(self) -> list[Tensor]:
        return [self.w, self.theta]


class RLeakyLayer(LIFLayer):
    """LIF layer with lateral recurrence: previous-step spikes feed back."""

    def __init__(self, in_dim, out_dim, beta=0.95, rng=None, w_gain=math.sqrt(2.0),
                 theta_init=1.0, recurrent_radius: float = 0.9, name: str = "rleaky"):
        rng = rng if rng is not None else np.random.default_rng(0)
        super().__init__(in_dim, out_dim, beta, rng, w_gain, theta_init, name)
        self.w_rec = Tensor(spectral_radius_init(rng, out_dim, recurrent_radius), True, f"{name}.w_rec")
        self.prev_spikes: Tensor | None = None

    def reset(self, batch: int) -> None:
        super().reset(batch)
        self.prev_spikes = Tensor(np.zeros((batch, self.out_dim)))

    def step(self, x_t: Tensor) -> Tensor:
        if self.mem is None or self.prev_spikes is None:
            raise RuntimeError("layer state not initialized; call reset(batch) first")
        drive = ad.add(self._drive(x_t), ad.matmul(self.prev_spikes, self.w_rec))
        self.mem = ad.add(ad.smul(self.mem, self.beta), drive)
        s = spike(self.mem, self.theta, smooth=self.smooth)
        self.mem = ad.sub(self.mem, ad.mul(s, self.theta))
        self.prev_spikes = s
        return s

    def params(self) -> list[Tensor]:
        return [self.w, self.theta, self.w_rec]


class IntegratedReadout:
    """Non-spiking leaky integrator; logits are the time-summed membrane."""

    def __init__(self, in_dim: int, out_dim: int, beta: float = 0.95,
                 rng: np.random.Generator | None = None, name: str = "readout"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.beta = beta
        self.w = Tensor(ad.fan_scaled_orthogonal(rng, (in_dim, out_dim), 0.01), True, f"{name}.w")
        self.mem: Tensor | None = None
        self.summed: Tensor | None = None

    def reset(self, batch: int) -> None:
        self.mem = Tensor(np.zeros((batch, self.w.data.shape[1])))
        self.summed = Tensor(np.zeros((batch, self.w.data.shape[1])))

    def step(self, s: Tensor) -> Tensor:
        self.mem = ad.add(ad.smul(self.mem, self.beta), ad.matmul(s, self.w))
        self.summed = ad.add(self.summed, self.mem)
        return self.mem

    def params(self) -> list[Tensor]:
        return [self.w]


class SpikingModel:
    """A chain of LIF (or recurrent LIF) layers plus a readout convention.

    readout="membrane": integrated-membrane logits over the full sequence.
    readout="count":    total spike count per unit of the last spiking layer.
    """

    def __init__(
        self,
        sizes,
        out_dim: int,
        beta: float = 0.95,
        rng: np.random.Generator | None = None,
        recurrent: bool = False,
        readout: str = "membrane",
        name: str = "snn",
    ):
        if readout not in ("membrane", "membrane_last", "count", "mem_sum"):
            raise ValueError("readout must be 'membrane', 'membrane_last', 'count', or 'mem_sum'")
        if readout in ("count", "mem_sum") and sizes[-1] != out_dim:
            raise ValueError(f"{readout} readout reads the last spiking layer; sizes[-1] must equal out_dim")
        rng = rng if rng is not None else np.random.default_rng(0)
        cls = RLeakyLayer if recurrent else LIFLayer
        self.layers = [
            cls(a, b, beta=beta, rng=rng, name=f"{name}.l{i + 1}")
            for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))
        ]
        self.readout_kind = readout
        self.readout = (
            IntegratedReadout(sizes[-1], out_dim, beta=beta, rng=rng, name=f"{name}.out")
            if readout in ("membrane", "membrane_last")
            else None
        )
        self.out_dim = out_dim

    def set_smooth(self, smooth: bool) -> None:
        for layer in self.layers:
            layer.smooth = smooth

    def reset(self, batch: int) -> None:
        for layer in self.layers:
            layer.reset(batch)
        if self.readout is not None:
            self.readout.reset(batch)

    def step_logits(self, x_t: Tensor) -> Tensor:
        """One timestep; returns the readout membrane (for stepwise policies)."""
        h = x_t
        for layer in self.layers:
            h = layer.step(h)
        return self.readout.step(h)

    def run_sequence(self, inputs: np.ndarray, record_rates: bool = False):
        """Run a (batch, T, in_dim) sequence from a fresh state.

        Returns logits (readout="membrane") or the spike-count vector of the
        final spiking layer (readout="count").  With record_rates=True also
        returns the mean firing rate per layer.
        """
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim != 3:
            raise ValueError("inputs must be (batch, T, in_dim)")
        batch, t_steps, _ = inputs.shape
        if t_steps == 0:
            raise ValueError("empty sequence")
        self.reset(batch)
        rate_sums = [0.0] * len(self.layers)
        acc = None
        for t in range(t_steps):
            h = Tensor(inputs[:, t])
            for li, layer in enumerate(self.layers):
                h = layer.step(h)
                if record_rates:
                    rate_sums[li] += float(h.data.mean())
            if self.readout_kind == "count":
                acc = h if acc is None else ad.add(acc, h)
            elif self.readout_kind == "mem_sum":
                m = self.layers[-1].pre_reset_mem
                acc = m if acc is None else ad.add(acc, m)
            else:
                self.readout.step(h)
        if self.readout_kind == "membrane":
            out = self.readout.summed
        elif self.readout_kind == "membrane_last":
            out = self.readout.mem
        else:
            out = acc
        if record_rates:
            return out, [s / t_steps for s in rate_sums]
        return out

    def params(self) -> list[Tensor]:
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        if self.readout is not None:
            out.extend(self.readout.params())
        return out

    def named_params(self) -> dict[str, Tensor]:
        return {p.name: p for p in self.params()}
