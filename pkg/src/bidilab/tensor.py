"""Minimal reverse-mode autodiff over numpy arrays.

Only the operations the transformer needs are implemented; each op
records its parents and a closure computing parent gradients. Gradients
are accumulated by a single topological backward sweep from a scalar.
"""

from __future__ import annotations

import math

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False, parents=(), grad_fn=None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._grad_fn = grad_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        if self.data.ndim != 0:
            raise ValueError("backward() requires a scalar output")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._grad_fn is None or node.grad is None:
                continue
            for parent, pgrad in zip(node._parents, node._grad_fn(node.grad)):
                if not parent.requires_grad or pgrad is None:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += pgrad

    def zero_grad(self) -> None:
        self.grad = None

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other: "Tensor") -> "Tensor":
        def grad_fn(g):
            return _unbroadcast(g, self.shape), _unbroadcast(g, other.shape)

        return Tensor(self.data + other.data, parents=(self, other), grad_fn=grad_fn)

    def __mul__(self, other: "Tensor") -> "Tensor":
        def grad_fn(g):
            return (
                _unbroadcast(g * other.data, self.shape),
                _unbroadcast(g * self.data, other.shape),
            )

        return Tensor(self.data * other.data, parents=(self, other), grad_fn=grad_fn)

    def scale(self, c: float) -> "Tensor":
        return Tensor(self.data * c, parents=(self,), grad_fn=lambda g: (g * c,))

    def matmul(self, other: "Tensor") -> "Tensor":
        def grad_fn(g):
            a, b = self.data, other.data
            if b.ndim == 2:
                # x @ W with a 2-d weight: collapse batch dims into one GEMM.
                ga = g @ b.T
                gb = a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
                return ga, gb
            ga = g @ np.swapaxes(b, -1, -2)
            gb = np.swapaxes(a, -1, -2) @ g
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

        return Tensor(self.data @ other.data, parents=(self, other), grad_fn=grad_fn)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return self.matmul(other)

    def linear_t(self, w: "Tensor") -> "Tensor":
        """x @ w.T, used for the tied output projection."""

        def grad_fn(g):
            gx = g @ w.data
            gw = np.tensordot(g, self.data, axes=(tuple(range(g.ndim - 1)),) * 2)
            return gx, gw

        return Tensor(self.data @ w.data.T, parents=(self, w), grad_fn=grad_fn)

    # -- shape --------------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        return Tensor(
            self.data.reshape(*shape),
            parents=(self,),
            grad_fn=lambda g: (g.reshape(self.shape),),
        )

    def transpose(self, *axes) -> "Tensor":
        inverse = np.argsort(axes)
        return Tensor(
            self.data.transpose(*axes),
            parents=(self,),
            grad_fn=lambda g: (g.transpose(*inverse),),
        )

    def narrow(self, axis: int, start: int, size: int) -> "Tensor":
        index = [slice(None)] * self.data.ndim
        index[axis] = slice(start, start + size)
        index = tuple(index)

        def grad_fn(g):
            out = np.zeros_like(self.data)
            out[index] = g
            return (out,)

        return Tensor(self.data[index], parents=(self,), grad_fn=grad_fn)

    def take_rows(self, indices: np.ndarray) -> "Tensor":
        """Gather rows of a 2-d tensor (embedding lookup; indices may be
        any integer array shape)."""

        def grad_fn(g):
            out = np.zeros_like(self.data)
            np.add.at(out, indices.reshape(-1), g.reshape(-1, g.shape[-1]))
            return (out,)

        return Tensor(self.data[indices], parents=(self,), grad_fn=grad_fn)

    # -- nonlinearities -----------------------------------------------------

    def gelu(self) -> "Tensor":
        c = math.sqrt(2.0 / math.pi)
        x = self.data
        x2 = x * x
        inner = c * (x + 0.044715 * x2 * x)
        t = np.tanh(inner)
        out = 0.5 * x * (1.0 + t)

        def grad_fn(g):
            dinner = c * (1.0 + 3 * 0.044715 * x2)
            dx = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
            return (g * dx,)

        return Tensor(out, parents=(self,), grad_fn=grad_fn)

    def layer_norm(self, gain: "Tensor", bias: "Tensor", eps: float = 1e-5) -> "Tensor":
        x = self.data
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - mu) * inv_std
        out = gain.data * xhat + bias.data

        def grad_fn(g):
            dxhat = g * gain.data
            d = x.shape[-1]
            dx = inv_std / d * (
                d * dxhat
                - dxhat.sum(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
            )
            axes = tuple(range(g.ndim - 1))
            return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

        return Tensor(out, parents=(self, gain, bias), grad_fn=grad_fn)

    def masked_softmax(self, allowed: np.ndarray) -> "Tensor":
        """Softmax over the last axis restricted to `allowed` entries.

        Rows with no allowed entry come out as all zeros (their output is
        never used downstream).
        """
        scores = np.where(allowed, self.data, -np.inf)
        row_max = scores.max(axis=-1, keepdims=True)
        row_max = np.where(np.isfinite(row_max), row_max, 0.0)
        exps = np.exp(scores - row_max)
        denom = exps.sum(axis=-1, keepdims=True)
        probs = np.divide(exps, denom, out=np.zeros_like(exps), where=denom > 0)

        def grad_fn(g):
            dot = (g * probs).sum(axis=-1, keepdims=True)
            return (probs * (g - dot),)

        return Tensor(probs, parents=(self,), grad_fn=grad_fn)

    def mean_nll(self, targets: np.ndarray) -> tuple["Tensor", np.ndarray]:
        """Cross-entropy over rows of (N, V) logits.

        Returns (scalar mean NLL tensor, per-row NLL array).
        """
        logits = self.data
        n = logits.shape[0]
        if n == 0:
            raise ValueError("no valid target slots")
        row_max = logits.max(axis=-1, keepdims=True)
        shifted = logits - row_max
        lse = np.log(np.exp(shifted).sum(axis=-1)) + row_max[:, 0]
        picked = logits[np.arange(n), targets]
        nll = lse - picked
        mean = nll.mean()

        def grad_fn(g):
            probs = np.exp(shifted) / np.exp(shifted).sum(axis=-1, keepdims=True)
            probs[np.arange(n), targets] -= 1.0
            return (g * probs / n,)

        return Tensor(np.asarray(mean), parents=(self,), grad_fn=grad_fn), nll


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient to the shape of a broadcast operand."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad
