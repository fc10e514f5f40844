"""Minimal dense reverse-mode automatic differentiation on numpy arrays.

A Tensor wraps a float64 ndarray; ops record a backward closure plus the
parent tensors that require gradients.  ``backward`` walks the implicit graph
once in reverse topological order (iteratively, so multi-thousand-node
episode graphs do not hit the recursion limit).  Constants are pruned at op
creation: an op whose inputs carry no gradient produces a plain leaf, which
keeps evaluation-only forwards cheap.

Everything is rank <= 3, row-major, float64.  There is no broadcasting
cleverness beyond numpy's own; backward un-broadcasts by summing.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from contextlib import contextmanager

import numpy as np

#: Raise on any op producing a non-finite value (NaN propagation is a bug).
CHECK_FINITE = True

_GRAD_ENABLED = True


class NonFiniteError(ArithmeticError):
    """An op produced NaN/inf, or an optimizer was fed a non-finite gradient."""


@contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        data = np.asarray(data, dtype=np.float64)
        # C-contiguous so flat views (optimizers, grad_check) stay views;
        # ascontiguousarray alone would promote 0-d scalars to shape (1,)
        if not data.flags.c_contiguous:
            data = np.ascontiguousarray(data)
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def add_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad}, name={self.name!r})"

    # Sugar for the handful of spots where operators read better than calls.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return smul(self, -1.0)


def _out(data, parents, backward, op: str) -> Tensor:
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by op {op!r}")
    out = Tensor(data)
    if _GRAD_ENABLED:
        track = tuple(p for p in parents if p.requires_grad)
        if track:
            out.requires_grad = True
            out._parents = track
            out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out_data = a.data + b.data

    def backward(out):
        g = out.grad
        if a.requires_grad:
            a.add_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.add_grad(_unbroadcast(g, b.data.shape))

    return _out(out_data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out_data = a.data - b.data

    def backward(out):
        g = out.grad
        if a.requires_grad:
            a.add_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.add_grad(_unbroadcast(-g, b.data.shape))

    return _out(out_data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out_data = a.data * b.data

    def backward(out):
        g = out.grad
        if a.requires_grad:
            a.add_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.add_grad(_unbroadcast(g * a.data, b.data.shape))

    return _out(out_data, (a, b), backward, "mul")


def smul(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(out):
        a.add_grad(c * out.grad)

    return _out(a.data * c, (a,), backward, "smul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data @ b.data

    def backward(out):
        g = out.grad
        if a.requires_grad:
            a.add_grad(g @ b.data.T)
        if b.requires_grad:
            b.add_grad(a.data.T @ g)

    return _out(out_data, (a, b), backward, "matmul")


def transpose(a: Tensor) -> Tensor:
    def backward(out):
        a.add_grad(out.grad.T)

    return _out(a.data.T, (a,), backward, "transpose")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(out):
        a.add_grad(out.grad * mask)

    return _out(a.data * mask, (a,), backward, "relu")


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward(out):
        a.add_grad(out.grad * (1.0 - out_data**2))

    return _out(out_data, (a,), backward, "tanh")


def sigmoid(a: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(out):
        a.add_grad(out.grad * out_data * (1.0 - out_data))

    return _out(out_data, (a,), backward, "sigmoid")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow surfaces as NonFiniteError
        out_data = np.exp(a.data)

    def backward(out):
        a.add_grad(out.grad * out_data)

    return _out(out_data, (a,), backward, "exp")


def tsum(a: Tensor) -> Tensor:
    def backward(out):
        a.add_grad(np.full_like(a.data, out.grad))

    return _out(a.data.sum(), (a,), backward, "sum")


def tmean(a: Tensor) -> Tensor:
    n = a.data.size

    def backward(out):
        a.add_grad(np.full_like(a.data, out.grad / n))

    return _out(a.data.mean(), (a,), backward, "mean")


def l1_norm(a: Tensor) -> Tensor:
    """Mean absolute value (a size-normalized L1 norm)."""
    n = a.data.size

    def backward(out):
        a.add_grad(out.grad * np.sign(a.data) / n)

    return _out(np.abs(a.data).mean(), (a,), backward, "l1_norm")


def mse(a: Tensor, b) -> Tensor:
    b = _coerce(b)
    diff = a.data - b.data
    n = diff.size

    def backward(out):
        g = out.grad * 2.0 / n
        if a.requires_grad:
            a.add_grad(g * diff)
        if b.requires_grad:
            b.add_grad(-g * diff)

    return _out((diff**2).mean(), (a, b), backward, "mse")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_coerce(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(out):
        g = out.grad
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.add_grad(g[tuple(idx)])

    return _out(out_data, tuple(tensors), backward, "concat")


def tslice(a: Tensor, key) -> Tensor:
    """Basic (non-fancy) slicing with gradient scatter-back."""
    out_data = a.data[key]

    def backward(out):
        g = np.zeros_like(a.data)
        g[key] = out.grad
        a.add_grad(g)

    return _out(out_data.copy(), (a,), backward, "slice")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization over the last axis with learnable gain/bias."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def backward(out):
        g = out.grad
        if gain.requires_grad:
            gain.add_grad((g * xhat).sum(axis=tuple(range(g.ndim - 1))))
        if bias.requires_grad:
            bias.add_grad(g.sum(axis=tuple(range(g.ndim - 1))))
        if x.requires_grad:
            gx = g * gain.data  # dL/dxhat
            n = x.data.shape[-1]
            x.add_grad(
                inv
                * (
                    gx
                    - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
                )
            )

    return _out(xhat * gain.data + bias.data, (x, gain, bias), backward, "layer_norm")


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of integer labels under a row-wise softmax."""
    labels = np.asarray(labels, dtype=np.int64)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=-1, keepdims=True)
    n = labels.shape[0]
    nll = -(z[np.arange(n), labels] - np.log(ez.sum(axis=-1)))

    def backward(out):
        g = probs.copy()
        g[np.arange(n), labels] -= 1.0
        logits.add_grad(out.grad * g / n)

    return _out(nll.mean(), (logits,), backward, "softmax_cross_entropy")


def gather_logprob(logits: Tensor, actions) -> Tensor:
    """Row-wise log softmax probabilities of the chosen actions."""
    actions = np.asarray(actions, dtype=np.int64)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=-1, keepdims=True)
    n = actions.shape[0]
    logp = z[np.arange(n), actions] - np.log(ez.sum(axis=-1))

    def backward(out):
        g = -probs * out.grad[:, None]
        g[np.arange(n), actions] += out.grad
        logits.add_grad(g)

    return _out(logp, (logits,), backward, "gather_logprob")


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    """Plain-numpy softmax for action sampling / greedy evaluation."""
    z = logits - logits.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss (iterative topological order)."""
    if loss.data.size != 1:
        raise ValueError("backward requires a scalar loss")
    if not loss.requires_grad:
        return
    topo: list[Tensor] = []
    visited = {id(loss)}
    stack: list[tuple[Tensor, int]] = [(loss, 0)]
    while stack:
        node, i = stack[-1]
        if i < len(node._parents):
            stack[-1] = (node, i + 1)
            parent = node._parents[i]
            if id(parent) not in visited and parent._backward is not None:
                visited.add(id(parent))
                stack.append((parent, 0))
        else:
            topo.append(node)
            stack.pop()
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        node._backward(node)


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


def gradients(loss: Tensor, params) -> tuple[list[np.ndarray], list[str]]:
    """Gradients of a scalar loss for each parameter.

    Disconnected parameters get zeros (not an error) and are listed in the
    returned diagnostics.
    """
    zero_grads(params)
    backward(loss)
    grads, disconnected = [], []
    for i, p in enumerate(params):
        if p.grad is None:
            grads.append(np.zeros_like(p.data))
            disconnected.append(p.name or f"param{i}")
        else:
            grads.append(p.grad)
    return grads, disconnected


def global_norm(grads) -> float:
    return math.sqrt(sum(float((g**2).sum()) for g in grads))


def clip_global_norm(grads, max_norm: float) -> float:
    """In-place global-norm clipping; returns the pre-clip norm."""
    norm = global_norm(grads)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


class Adam:
    """Standard Adam with bias correction."""

    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads) -> None:
        for i, g in enumerate(grads):
            if not np.all(np.isfinite(g)):
                name = self.params[i].name or f"param{i}"
                raise NonFiniteError(f"non-finite gradient for {name}")
        self.step_count += 1
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def sgd_step(params, grads, lr: float) -> None:
    """Plain gradient descent (no momentum)."""
    for i, (p, g) in enumerate(zip(params, grads)):
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {p.name or i}")
        p.data -= lr * g


def orthogonal(rng: np.random.Generator, shape: tuple, gain: float = 1.0) -> np.ndarray:
    """Orthogonal init (rows or columns orthonormal, whichever fits)."""
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))  # fix the sign ambiguity for determinism
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def fan_scaled_orthogonal(rng: np.random.Generator, shape: tuple, gain: float = 1.0) -> np.ndarray:
    """Orthogonal init with fan-out compensation for (in, out) weights.

    For out > in, a semi-orthogonal matrix spreads the input energy over all
    output units, leaving each unit's drive a factor sqrt(in/out) below the
    kaiming scale; spiking units then never reach threshold at init.  The
    compensation restores a per-unit fan-in norm of ``gain`` and is a no-op
    for fan-in layers.
    """
    in_dim, out_dim = shape
    scale = max(1.0, math.sqrt(out_dim / in_dim))
    return orthogonal(rng, shape, gain * scale)


class MLP:
    """Fully connected net: orthogonal init, ReLU hidden, optional LayerNorm."""

    def __init__(
        self,
        sizes,
        rng: np.random.Generator,
        use_layer_norm: bool = False,
        hidden_gain: float = math.sqrt(2.0),
        out_gain: float = 0.01,
        name: str = "mlp",
    ):
        self.sizes = list(sizes)
        self.use_layer_norm = use_layer_norm
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        self.ln_gain: list[Tensor] = []
        self.ln_bias: list[Tensor] = []
        last = len(sizes) - 2
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            gain = out_gain if i == last else hidden_gain
            self.weights.append(Tensor(fan_scaled_orthogonal(rng, (a, b), gain), True, f"{name}.w{i}"))
            self.biases.append(Tensor(np.zeros(b), True, f"{name}.b{i}"))
            if use_layer_norm and i != last:
                self.ln_gain.append(Tensor(np.ones(b), True, f"{name}.ln_g{i}"))
                self.ln_bias.append(Tensor(np.zeros(b), True, f"{name}.ln_b{i}"))

    def forward(self, x: Tensor) -> Tensor:
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = add(matmul(h, w), b)
            if i != last:
                if self.use_layer_norm:
                    h = layer_norm(h, self.ln_gain[i], self.ln_bias[i])
                h = relu(h)
        return h

    def params(self) -> list[Tensor]:
        return self.weights + self.biases + self.ln_gain + self.ln_bias


class GradCheckReport:
    def __init__(self, tolerance: float):
        self.tolerance = tolerance
        self.per_param: dict[str, float] = {}

    @property
    def passed(self) -> bool:
        return all(err <= self.tolerance for err in self.per_param.values())

    @property
    def worst(self) -> float:
        return max(self.per_param.values()) if self.per_param else 0.0

    def __repr__(self):
        status = "pass" if self.passed else "FAIL"
        return f"GradCheckReport({status}, worst={self.worst:.3g}, tol={self.tolerance:g})"


def grad_check(builder, tolerance: float = 1e-4, h: float = 1e-4) -> GradCheckReport:
    """Compare reverse-mode gradients against central finite differences.

    ``builder()`` must return (params, forward) where forward() re-evaluates
    the scalar loss from the current parameter values.  Intended for small
    models (< 5000 parameters); the forward is re-run twice per element.
    """
    params, forward = builder()
    n_total = sum(p.data.size for p in params)
    if n_total >= 5000:
        raise ValueError(f"grad_check is for models under 5000 params, got {n_total}")
    loss = forward()
    grads, _ = gradients(loss, params)
    report = GradCheckReport(tolerance)
    for p, g in zip(params, grads):
        flat = p.data.reshape(-1)
        worst = 0.0
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            f_plus = float(forward().data)
            flat[k] = orig - h
            f_minus = float(forward().data)
            flat[k] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            analytic = float(g.reshape(-1)[k])
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-2)
            worst = max(worst, err)
        report.per_param[p.name or "param"] = worst
    return report


def save_checkpoint(path: str, named_params: dict) -> None:
    """JSON checkpoint of {name, shape, data} records plus a manifest hash."""
    records = []
    for name in sorted(named_params):
        value = named_params[name]
        data = value.data if isinstance(value, Tensor) else np.asarray(value)
        records.append(
            {"name": name, "shape": list(data.shape), "data": data.reshape(-1).tolist()}
        )
    blob = json.dumps(records, sort_keys=True)
    payload = {"records": records, "sha256": hashlib.sha256(blob.encode()).hexdigest()}
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    with open(path) as fh:
        payload = json.load(fh)
    blob = json.dumps(payload["records"], sort_keys=True)
    digest = hashlib.sha256(blob.encode()).hexdigest()
    if digest != payload["sha256"]:
        raise ValueError(f"checkpoint hash mismatch for {path}")
    return {
        rec["name"]: np.asarray(rec["data"], dtype=np.float64).reshape(rec["shape"])
        for rec in payload["records"]
    }
