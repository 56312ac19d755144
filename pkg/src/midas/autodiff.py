"""Minimal reverse-mode autodiff over dense float64 tensors.

Operations executed inside a ``with Tape() as tape:`` block are recorded in
execution order; ``tape.backward(loss)`` replays the records in reverse and
accumulates gradients into every ``requires_grad`` leaf. Outside a tape
context the same operations are plain numpy computations, which is how all
detached statistics (confidences, sample weights, metrics) are produced.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

EPS_NORM = 1e-12


class GradCheckError(RuntimeError):
    """Raised when grad_check cannot trust its own measurement."""


class Tensor:
    """Dense multi-dimensional array of float64 with an optional gradient buffer."""

    __slots__ = ("values", "requires_grad", "grad")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = requires_grad
        # Leaves that want gradients carry a zero buffer from the start, so an
        # unused leaf reads as all-zero after backward.
        self.grad = np.zeros_like(self.values) if requires_grad else None

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def item(self) -> float:
        return float(self.values)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Record:
    __slots__ = ("name", "inputs", "output", "backward_fn")

    def __init__(self, name, inputs, output, backward_fn):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


_ACTIVE_TAPES: list["Tape"] = []


class Tape:
    """Execution-ordered record of operations for one reverse sweep.

    Records are appended as ops execute, so they are topologically ordered by
    construction: every record's inputs are leaves or outputs of earlier
    records. Single-threaded use only.
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _ACTIVE_TAPES.pop()
        assert popped is self, "tape contexts must nest"
        return False

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into .grad of every requires_grad leaf."""
        if loss.values.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {loss.values.shape}"
            )
        flows: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
        holders: dict[int, Tensor] = {id(loss): loss}
        for rec in reversed(self.records):
            g_out = flows.pop(id(rec.output), None)
            holders.pop(id(rec.output), None)
            if g_out is None:
                continue
            for inp, g_in in zip(rec.inputs, rec.backward_fn(g_out)):
                if g_in is None:
                    continue
                key = id(inp)
                if key in flows:
                    flows[key] = flows[key] + g_in
                else:
                    flows[key] = g_in
                    holders[key] = inp
        for key, tensor in holders.items():
            if tensor.requires_grad:
                tensor.grad = tensor.grad + flows[key]


def backward(loss: Tensor, tape: Tape) -> None:
    tape.backward(loss)


def record_op(name: str, inputs: Sequence[Tensor], output: Tensor,
              backward_fn: Callable) -> Tensor:
    """Register an executed op on the active tape, if any.

    backward_fn maps the upstream gradient to one gradient per input
    (None for inputs that do not receive gradient).
    """
    if _ACTIVE_TAPES:
        _ACTIVE_TAPES[-1].records.append(
            _Record(name, tuple(inputs), output, backward_fn)
        )
    return output


def zero_grad(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = np.zeros_like(p.values)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product [r,k] @ [k,c]; backward dA = dC·Bᵀ, dB = Aᵀ·dC."""
    a, b = as_tensor(a), as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.values.shape[1] != b.values.shape[0]:
        raise ValueError(
            f"matmul shape mismatch: {a.values.shape} @ {b.values.shape}"
        )
    out = Tensor(a.values @ b.values)
    av, bv = a.values, b.values
    return record_op("matmul", (a, b), out,
                     lambda g: (g @ bv.T, av.T @ g))


def add(a: Tensor, b) -> Tensor:
    """Elementwise sum with numpy broadcasting (e.g. bias [n] onto [b,n])."""
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.values + b.values)
    a_shape, b_shape = a.values.shape, b.values.shape
    return record_op("add", (a, b), out,
                     lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)))


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product with broadcasting; constants may be passed raw."""
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.values * b.values)
    av, bv = a.values, b.values
    return record_op("mul", (a, b), out,
                     lambda g: (_unbroadcast(g * bv, av.shape),
                                _unbroadcast(g * av, bv.shape)))


def relu(x: Tensor) -> Tensor:
    """max(0, x); subgradient at 0 is 0."""
    x = as_tensor(x)
    out = Tensor(np.maximum(x.values, 0.0))
    mask = x.values > 0
    return record_op("relu", (x,), out, lambda g: (g * mask,))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along `axis`; backward splits the upstream gradient."""
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.values for t in tensors], axis=axis))
    sizes = [t.values.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def _backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record_op("concat", tuple(tensors), out, _backward)


def take_rows(x: Tensor, indices) -> Tensor:
    """Gather rows x[indices]; backward scatter-adds into the source rows."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= x.values.shape[0]):
        raise IndexError(
            f"take_rows index out of range for {x.values.shape[0]} rows"
        )
    out = Tensor(x.values[idx])
    x_shape = x.values.shape

    def _backward(g):
        gx = np.zeros(x_shape)
        np.add.at(gx, idx, g)
        return (gx,)

    return record_op("take_rows", (x,), out, _backward)


def mean(x: Tensor) -> Tensor:
    """Mean of all elements, as a scalar tensor."""
    x = as_tensor(x)
    out = Tensor(np.mean(x.values))
    n = x.values.size
    x_shape = x.values.shape
    return record_op("mean", (x,), out,
                     lambda g: (np.full(x_shape, float(g) / n),))


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    x = as_tensor(x)
    out = Tensor(np.sum(x.values))
    x_shape = x.values.shape
    return record_op("sum", (x,), out,
                     lambda g: (np.full(x_shape, float(g)),))


def softmax_values(z) -> np.ndarray:
    """Row-wise stable softmax on a plain array, with no tape interaction."""
    return _softmax_values(np.asarray(z, dtype=np.float64))


def _softmax_values(z: np.ndarray) -> np.ndarray:
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def _log_softmax_values(z: np.ndarray) -> np.ndarray:
    shifted = z - np.max(z, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(logits: Tensor) -> Tensor:
    """Row-wise softmax over the last axis, shifted by the row max for stability."""
    logits = as_tensor(logits)
    p = _softmax_values(logits.values)
    out = Tensor(p)
    return record_op(
        "softmax", (logits,), out,
        lambda g: (p * (g - np.sum(g * p, axis=-1, keepdims=True)),))


def cross_entropy_soft(logits: Tensor, target) -> Tensor:
    """Per-row −Σ_c target_c · log_softmax(logits)_c for [b,C] inputs.

    Targets are coefficients, not differentiated; rows need not sum to 1.
    """
    logits = as_tensor(logits)
    t = target.values if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if logits.values.shape != t.shape:
        raise ValueError(
            f"cross_entropy_soft shape mismatch: logits {logits.values.shape} "
            f"vs target {t.shape}"
        )
    log_p = _log_softmax_values(logits.values)
    out = Tensor(-np.sum(t * log_p, axis=-1))
    p = np.exp(log_p)
    t_mass = np.sum(t, axis=-1, keepdims=True)
    return record_op(
        "cross_entropy_soft", (logits,), out,
        lambda g: (g[..., None] * (p * t_mass - t),))


def cosine_similarity(a, b) -> float:
    """aᵀb / (‖a‖‖b‖), mapped to 0 when either norm is degenerate.

    A dead (all-zero) feature must not abort training, so near-zero norms
    yield a neutral similarity instead of raising.
    """
    av = a.values if isinstance(a, Tensor) else np.asarray(a, dtype=np.float64)
    bv = b.values if isinstance(b, Tensor) else np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(av), np.linalg.norm(bv)
    if na < EPS_NORM or nb < EPS_NORM:
        return 0.0
    return float(np.dot(av, bv) / (na * nb))


# ---------------------------------------------------------------------------
# Optimization and verification
# ---------------------------------------------------------------------------

class SGD:
    """Classical momentum SGD with weight decay folded into the velocity.

    v ← μ·v + (g + wd·w);  w ← w − γ·v
    """

    def __init__(self, params: Sequence[Tensor], learning_rate: float,
                 momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocities = {id(p): np.zeros_like(p.values) for p in self.params}

    def step(self, params: Sequence[Tensor] | None = None) -> None:
        """Update `params` (default: all registered) from their .grad buffers."""
        for p in (self.params if params is None else params):
            if p.grad is None:
                raise ValueError("sgd step: parameter has no gradient")
            v = self.velocities[id(p)]
            v = self.momentum * v + (p.grad + self.weight_decay * p.values)
            self.velocities[id(p)] = v
            p.values -= self.learning_rate * v

    def zero_grad(self) -> None:
        zero_grad(self.params)


def grad_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor],
               h: float = 1e-5) -> float:
    """Max relative error between central differences and autodiff gradients.

    loss_fn must be deterministic in `params` (checked by re-evaluation) and
    must rebuild the loss from the current parameter values on every call.
    """
    if not 1e-7 <= h <= 1e-4:
        raise ValueError(f"grad_check step h={h} outside [1e-7, 1e-4]")
    params = list(params)

    base = float(loss_fn().values)
    if float(loss_fn().values) != base:
        raise GradCheckError("loss_fn is not deterministic in its parameters")

    zero_grad(params)
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, ad in zip(params, analytic):
        flat = p.values.reshape(-1)
        ad_flat = ad.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            f_plus = float(loss_fn().values)
            flat[k] = orig - h
            f_minus = float(loss_fn().values)
            flat[k] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            err = abs(fd - ad_flat[k]) / max(1e-8, abs(fd) + abs(ad_flat[k]))
            worst = max(worst, err)
    return worst
