"""Parametric 3-D dynamical systems and feature-to-trajectory temporal encoding.

Each scalar feature seeds a three-dimensional flow; sampling the flow at N
frames turns a static d-vector into a d x N x 3 trajectory tensor.  Three
systems are supported:

* ``duffing`` -- a coupled oscillator whose damping knob ``delta`` sweeps the
  phase-space divergence continuously (trace of the Jacobian is -2*delta at
  every state, so the volume contraction rate is exactly controllable).
* ``lorenz``  -- the classic convection flow; ``rho`` tunes complexity at a
  fixed contraction rate -(sigma + 1 + beta_l).
* ``thomas``  -- the cyclically symmetric sine flow; ``b`` scales dissipation
  linearly (divergence -3b).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DUFFING_ALPHA = 2.0
DUFFING_BETA_CUBIC = 0.1
DUFFING_GAMMA = 0.1
DUFFING_OMEGA = 1.0

LORENZ_SIGMA = 10.0
LORENZ_BETA = 8.0 / 3.0

#: Any state component beyond this magnitude is treated as a blow-up.
DIVERGENCE_LIMIT = 1e9

#: Saturation bound used by downstream encoders that must stay finite even in
#: expansive regimes (see ``integrate(..., clip=...)``).
DRIVE_CLIP = 100.0


class DivergenceError(RuntimeError):
    """Raised when an integrated state leaves the finite regime."""

    def __init__(self, feature_index: int, frame: int, message: str | None = None):
        self.feature_index = feature_index
        self.frame = frame
        super().__init__(
            message
            or f"trajectory diverged (feature {feature_index}, frame {frame}): "
            f"|state| exceeded {DIVERGENCE_LIMIT:g}"
        )


@dataclass(frozen=True)
class SystemSpec:
    """Selects a flow and its parameters.

    Only the fields relevant to ``kind`` are read; the rest keep their
    defaults.  ``delta`` is the single free knob of the duffing system (all
    other oscillator constants are fixed).
    """

    kind: str = "duffing"
    delta: float = 0.0
    alpha: float = DUFFING_ALPHA
    beta_cubic: float = DUFFING_BETA_CUBIC
    gamma: float = DUFFING_GAMMA
    omega: float = DUFFING_OMEGA
    sigma: float = LORENZ_SIGMA
    rho: float = 28.0
    beta_l: float = LORENZ_BETA
    b: float = 0.2

    def __post_init__(self):
        if self.kind not in ("duffing", "lorenz", "thomas"):
            raise ValueError(f"unknown system kind: {self.kind!r}")
        if self.kind == "lorenz" and self.rho < 0:
            raise ValueError("lorenz requires rho >= 0")
        if self.kind == "thomas" and self.b <= 0:
            raise ValueError("thomas requires b > 0")

    @staticmethod
    def duffing(delta: float) -> "SystemSpec":
        return SystemSpec(kind="duffing", delta=float(delta))

    @staticmethod
    def lorenz(rho: float) -> "SystemSpec":
        return SystemSpec(kind="lorenz", rho=float(rho))

    @staticmethod
    def thomas(b: float) -> "SystemSpec":
        return SystemSpec(kind="thomas", b=float(b))

    def divergence_rate(self) -> float:
        """Analytic trace of the Jacobian (state independent for all kinds)."""
        if self.kind == "duffing":
            return -2.0 * self.delta
        if self.kind == "lorenz":
            return -(self.sigma + 1.0 + self.beta_l)
        return -3.0 * self.b


@dataclass(frozen=True)
class EncodingConfig:
    """Sampling layout of an encoded trajectory.

    ``substeps_per_frame`` controls the internal RK4 resolution; 0 picks a
    default that keeps the internal step small (20 for the dense (T=4, N=30)
    layout, 50 for the sparse (T=8, N=5) layout, else <= 0.01 time units).
    """

    t_total: float = 4.0
    n_steps: int = 30
    substeps_per_frame: int = 0

    def __post_init__(self):
        if self.t_total <= 0:
            raise ValueError("t_total must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.substeps_per_frame < 0:
            raise ValueError("substeps_per_frame must be >= 1 (or 0 for auto)")

    @property
    def dt_frame(self) -> float:
        return self.t_total / self.n_steps

    def resolved_substeps(self) -> int:
        if self.substeps_per_frame:
            return self.substeps_per_frame
        if (self.t_total, self.n_steps) == (4.0, 30):
            return 20
        if (self.t_total, self.n_steps) == (8.0, 5):
            return 50
        return max(1, math.ceil(self.dt_frame / 0.01))


@dataclass(frozen=True)
class Trajectory:
    """A d x N x 3 time series with its sampling metadata. Immutable."""

    data: np.ndarray
    dt_frame: float
    spec_used: SystemSpec

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError("trajectory data must have shape (d, N, 3)")
        self.data.flags.writeable = False

    @property
    def n_features(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    @property
    def t_total(self) -> float:
        return self.dt_frame * self.n_frames


def init_state(x: float) -> np.ndarray:
    """Map a scalar feature to its 3-D initial condition (x, 0.2x, -x)."""
    if not np.isfinite(x):
        raise ValueError(f"feature value must be finite, got {x!r}")
    return np.array([x, 0.2 * x, -x], dtype=np.float64)


def _rhs_batch(states: np.ndarray, spec: SystemSpec, out: np.ndarray) -> np.ndarray:
    """Vectorized right-hand side for an (n, 3) block of states."""
    x = states[:, 0]
    y = states[:, 1]
    z = states[:, 2]
    if spec.kind == "duffing":
        out[:, 0] = y
        out[:, 1] = -spec.alpha * x - spec.beta_cubic * x * x * x - spec.delta * y + spec.gamma * z
        out[:, 2] = -spec.omega * x - spec.delta * z + spec.gamma * x * y
    elif spec.kind == "lorenz":
        out[:, 0] = spec.sigma * (y - x)
        out[:, 1] = x * (spec.rho - z) - y
        out[:, 2] = x * y - spec.beta_l * z
    else:  # thomas
        out[:, 0] = np.sin(y) - spec.b * x
        out[:, 1] = np.sin(z) - spec.b * y
        out[:, 2] = np.sin(x) - spec.b * z
    return out


def derivative(state: np.ndarray, spec: SystemSpec) -> np.ndarray:
    """Time derivative of a single 3-D state under ``spec``."""
    state = np.asarray(state, dtype=np.float64)
    if state.shape != (3,):
        raise ValueError("state must be a 3-vector")
    if not np.all(np.isfinite(state)):
        raise ValueError("state must be finite")
    out = np.empty((1, 3))
    _rhs_batch(state[None, :], spec, out)
    return out[0]


def jacobian(state: np.ndarray, spec: SystemSpec) -> np.ndarray:
    """Analytic 3x3 Jacobian of the right-hand side at ``state``."""
    state = np.asarray(state, dtype=np.float64)
    x, y, z = state
    if spec.kind == "duffing":
        return np.array(
            [
                [0.0, 1.0, 0.0],
                [-spec.alpha - 3.0 * spec.beta_cubic * x * x, -spec.delta, spec.gamma],
                [-spec.omega + spec.gamma * y, spec.gamma * x, -spec.delta],
            ]
        )
    if spec.kind == "lorenz":
        return np.array(
            [
                [-spec.sigma, spec.sigma, 0.0],
                [spec.rho - z, -1.0, -x],
                [y, x, -spec.beta_l],
            ]
        )
    return np.array(
        [
            [-spec.b, math.cos(y), 0.0],
            [0.0, -spec.b, math.cos(z)],
            [math.cos(x), 0.0, -spec.b],
        ]
    )


def integrate_batch(
    x0: np.ndarray,
    spec: SystemSpec,
    cfg: EncodingConfig,
    clip: float | None = None,
) -> np.ndarray:
    """Fixed-step RK4 for a batch of initial 3-D states.

    Returns an (n, n_steps, 3) array whose frame k holds the state after
    k*dt_frame of evolution; frame 0 is the initial condition, so the last
    frame sits at t = (N-1) * dt_frame.

    With ``clip`` set, every substep saturates the state into [-clip, clip]
    instead of raising: expansive regimes then yield bounded, deterministic
    (if physically meaningless past saturation) drive signals.  With
    ``clip=None`` a state beyond ``DIVERGENCE_LIMIT`` or a non-finite value
    raises :class:`DivergenceError` naming the offending feature row.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    n = x0.shape[0]
    substeps = cfg.resolved_substeps()
    h = cfg.dt_frame / substeps
    frames = np.empty((n, cfg.n_steps, 3), dtype=np.float64)
    frames[:, 0] = x0
    state = x0.copy()
    k1 = np.empty_like(state)
    k2 = np.empty_like(state)
    k3 = np.empty_like(state)
    k4 = np.empty_like(state)
    # a blow-up mid-frame produces transient inf/nan before the guard fires
    with np.errstate(over="ignore", invalid="ignore"):
        for frame in range(1, cfg.n_steps):
            for _ in range(substeps):
                _rhs_batch(state, spec, k1)
                _rhs_batch(state + (0.5 * h) * k1, spec, k2)
                _rhs_batch(state + (0.5 * h) * k2, spec, k3)
                _rhs_batch(state + h * k3, spec, k4)
                state += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                if clip is not None:
                    np.clip(state, -clip, clip, out=state)
                    np.nan_to_num(state, copy=False, nan=0.0, posinf=clip, neginf=-clip)
            if clip is None:
                bad = ~np.all(np.isfinite(state) & (np.abs(state) <= DIVERGENCE_LIMIT), axis=1)
                if bad.any():
                    raise DivergenceError(int(np.argmax(bad)), frame)
            frames[:, frame] = state
    return frames


def integrate(
    x0: np.ndarray,
    spec: SystemSpec,
    cfg: EncodingConfig,
    clip: float | None = None,
) -> Trajectory:
    """Integrate a single initial 3-D state into a d=1 Trajectory."""
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (3,):
        raise ValueError("x0 must be a 3-vector")
    frames = integrate_batch(x0[None, :], spec, cfg, clip=clip)
    return Trajectory(data=frames, dt_frame=cfg.dt_frame, spec_used=spec)


def encode_features(
    x: np.ndarray,
    spec: SystemSpec,
    cfg: EncodingConfig,
    clip: float | None = None,
) -> Trajectory:
    """Encode a d-vector of features as a d x N x 3 trajectory tensor.

    Row i is the flow started from ``init_state(x[i])``; rows are mutually
    independent by construction.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size < 1:
        raise ValueError("need at least one feature")
    if not np.all(np.isfinite(x)):
        raise ValueError("features must be finite")
    x0 = np.stack([x, 0.2 * x, -x], axis=1)
    frames = integrate_batch(x0, spec, cfg, clip=clip)
    return Trajectory(data=frames, dt_frame=cfg.dt_frame, spec_used=spec)
