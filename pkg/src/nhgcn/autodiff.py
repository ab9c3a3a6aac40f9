"""Tape-based reverse-mode differentiation for the small set of ops the models use.

Every op evaluates eagerly in float64, records a closure that pushes its output
gradient back onto its inputs, and rejects non-finite results.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

LOG_FLOOR = 1e-12


class TapeError(RuntimeError):
    pass


class Node:
    __slots__ = ("value", "grad", "requires_grad", "name", "_backward")

    def __init__(self, value: np.ndarray, requires_grad: bool = False, name: str | None = None):
        self.value = value
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g


def _finite(x: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values produced by {op}")
    return x


class Tape:
    """Records ops in execution order; :meth:`backward` walks them in reverse."""

    def __init__(self) -> None:
        self._nodes: list[Node] = []
        self._params: dict[str, Node] = {}
        self._done = False

    # -- leaves ------------------------------------------------------------

    def param(self, name: str, value: np.ndarray) -> Node:
        if name in self._params:
            return self._params[name]
        node = Node(_finite(np.asarray(value, dtype=np.float64), f"param {name}"), True, name)
        self._params[name] = node
        return node

    def const(self, value: np.ndarray) -> Node:
        return Node(_finite(np.asarray(value, dtype=np.float64), "constant"))

    def _record(self, value: np.ndarray, parents: Sequence[Node], op: str, backward) -> Node:
        out = Node(_finite(value, op), any(p.requires_grad for p in parents))
        if out.requires_grad:
            out._backward = backward
            self._nodes.append(out)
        return out

    # -- ops ---------------------------------------------------------------

    def matmul(self, a: Node, b: Node) -> Node:
        if a.shape[1] != b.shape[0]:
            raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")

        def back(g):
            a._accumulate(g @ b.value.T)
            b._accumulate(a.value.T @ g)

        return self._record(a.value @ b.value, (a, b), "matmul", back)

    def spmm(self, op: sp.spmatrix, x: Node) -> Node:
        """Constant sparse operator times a dense node."""
        if op.shape[1] != x.shape[0]:
            raise ValueError(f"spmm shape mismatch {op.shape} @ {x.shape}")

        def back(g):
            x._accumulate(np.asarray(op.T @ g))

        return self._record(np.asarray(op @ x.value), (x,), "spmm", back)

    def relu(self, x: Node) -> Node:
        pos = x.value > 0

        def back(g):
            x._accumulate(g * pos)

        return self._record(np.where(pos, x.value, 0.0), (x,), "relu", back)

    def tanh(self, x: Node) -> Node:
        y = np.tanh(x.value)

        def back(g):
            x._accumulate(g * (1.0 - y * y))

        return self._record(y, (x,), "tanh", back)

    def activation(self, name: str, x: Node) -> Node:
        if name == "relu":
            return self.relu(x)
        if name == "tanh":
            return self.tanh(x)
        raise ValueError(f"unknown activation {name!r}")

    def row_softmax(self, x: Node) -> Node:
        z = x.value - x.value.max(axis=1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=1, keepdims=True)

        def back(g):
            x._accumulate(y * (g - np.sum(g * y, axis=1, keepdims=True)))

        return self._record(y, (x,), "row_softmax", back)

    def dropout(self, x: Node, p: float, training: bool, rng: np.random.Generator | None) -> Node:
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {p}")
        if not training or p == 0.0:
            return x
        if rng is None:
            raise ValueError("training-mode dropout needs a random generator")
        keep = (rng.random(x.shape) >= p) / (1.0 - p)

        def back(g):
            x._accumulate(g * keep)

        return self._record(x.value * keep, (x,), "dropout", back)

    def add(self, xs: Sequence[Node]) -> Node:
        shape = xs[0].shape
        if any(x.shape != shape for x in xs):
            raise ValueError("add shape mismatch")

        def back(g):
            for x in xs:
                x._accumulate(g)

        return self._record(sum(x.value for x in xs[1:]) + xs[0].value, xs, "add", back)

    def maximum(self, xs: Sequence[Node]) -> Node:
        """Elementwise max; the gradient goes to the first maximal input."""
        shape = xs[0].shape
        if any(x.shape != shape for x in xs):
            raise ValueError("maximum shape mismatch")
        stack = np.stack([x.value for x in xs])
        win = stack.argmax(axis=0)

        def back(g):
            for i, x in enumerate(xs):
                x._accumulate(np.where(win == i, g, 0.0))

        return self._record(stack.max(axis=0), xs, "maximum", back)

    def concat_cols(self, xs: Sequence[Node]) -> Node:
        if len({x.shape[0] for x in xs}) != 1:
            raise ValueError("concat_cols row mismatch")
        splits = np.cumsum([x.shape[1] for x in xs])[:-1]

        def back(g):
            for x, part in zip(xs, np.split(g, splits, axis=1)):
                x._accumulate(part)

        return self._record(np.concatenate([x.value for x in xs], axis=1), xs, "concat_cols", back)

    def scalar_softmax(self, logits: Node) -> Node:
        z = logits.value - logits.value.max()
        e = np.exp(z)
        y = e / e.sum()

        def back(g):
            logits._accumulate(y * (g - np.dot(g, y)))

        return self._record(y, (logits,), "scalar_softmax", back)

    def scale(self, x: Node, weights: Node, i: int) -> Node:
        """``weights[i] * x`` for a vector node ``weights``."""
        w = weights.value[i]

        def back(g):
            x._accumulate(w * g)
            gw = np.zeros_like(weights.value)
            gw[i] = np.sum(g * x.value)
            weights._accumulate(gw)

        return self._record(w * x.value, (x, weights), "scale", back)

    def trace_nll(self, probs: Node, targets: np.ndarray) -> Node:
        """``-trace(Y^T log B)`` with ``B`` floored at ``LOG_FLOOR``."""
        if targets.shape != probs.shape:
            raise ValueError(f"target shape {targets.shape} != prediction shape {probs.shape}")
        b = probs.value
        clamped = np.maximum(b, LOG_FLOOR)
        value = -np.trace(targets.T @ np.log(clamped))

        def back(g):
            probs._accumulate(np.where(b > LOG_FLOOR, -g * targets / clamped, 0.0))

        return self._record(np.asarray(value, dtype=np.float64), (probs,), "trace_nll", back)

    # -- reverse sweep -----------------------------------------------------

    def backward(self, loss: Node) -> dict[str, np.ndarray]:
        """Gradients of a scalar ``loss`` with respect to every param leaf."""
        if loss.value.size != 1:
            raise TapeError("backward needs a scalar loss")
        if self._done:
            raise TapeError("tape already consumed by a backward pass")
        if not self._nodes or self._nodes[-1] is not loss:
            if not loss.requires_grad:
                self._done = True
                return {k: np.zeros_like(p.value) for k, p in self._params.items()}
            raise TapeError("loss was not the last recorded op on this tape")
        self._done = True
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self._nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)
        return {
            k: (p.grad if p.grad is not None else np.zeros_like(p.value)) for k, p in self._params.items()
        }


def backward(tape: Tape | None, loss: Node | None) -> dict[str, np.ndarray]:
    if tape is None or loss is None:
        raise TapeError("backward called before any forward pass was recorded")
    return tape.backward(loss)


# -- initialization, optimizer, gradient check ---------------------------------


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class Adam:
    """Adam with bias-corrected moments; ``weight_decay`` is added to the
    gradient as an L2 term before the moment updates."""

    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        out = {}
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
            if self.weight_decay:
                g = g + self.weight_decay * p
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            out[name] = p - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return out


LossAndGrad = Callable[[Mapping[str, np.ndarray]], "tuple[float, Mapping[str, np.ndarray]]"]


def grad_check(
    loss_and_grad: LossAndGrad,
    params: Mapping[str, np.ndarray],
    probes: int = 20,
    seed: int = 0,
    step: float = 1e-5,
) -> float:
    """Largest ``|analytic - numeric| / max(1, |numeric|)`` over central
    differences at up to ``probes`` random entries of every parameter."""
    rng = np.random.default_rng(seed)
    params = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    _, grads = loss_and_grad(params)
    worst = 0.0
    for name in sorted(params):
        arr = params[name]
        picks = rng.choice(arr.size, size=min(probes, arr.size), replace=False)
        for flat in picks:
            idx = np.unravel_index(flat, arr.shape)
            orig = arr[idx]
            arr[idx] = orig + step
            up, _ = loss_and_grad(params)
            arr[idx] = orig - step
            down, _ = loss_and_grad(params)
            arr[idx] = orig
            numeric = (up - down) / (2 * step)
            analytic = float(np.asarray(grads[name])[idx])
            worst = max(worst, abs(analytic - numeric) / max(1.0, abs(numeric)))
    return worst
