"""Minimal reverse-mode autodiff over dense 2-D float matrices.

Values are computed eagerly when an operation node is created; each node
records a closure that routes the output gradient to its parents.  Graphs
are rebuilt per evaluation (training rebuilds one graph per batch), so
``finite_difference_check`` takes a zero-argument builder that reconstructs
the scalar loss from the current leaf values.

Double precision is the default; pass ``dtype=np.float32`` to leaf
constructors for single precision.  All randomness flows through `Rng`,
a seeded PCG64 stream that is reproducible across platforms.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NonFiniteError, ShapeError

DEFAULT_DTYPE = np.float64

# Module-level switch: when on, every op asserts its output is finite.
_DEBUG_CHECKS = False


def set_debug_checks(enabled: bool) -> None:
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = enabled


class Node:
    """One vertex of the computation graph: a 2-D value plus backward hook."""

    __slots__ = ("value", "grad", "parents", "_backward", "name")

    def __init__(self, value: np.ndarray, parents: tuple = (), backward=None, name: str = ""):
        self.value = value
        self.grad = None
        self.parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Node(shape={self.value.shape}{tag})"


def _as_matrix(data, dtype) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError("leaf", arr.shape, detail="values must be 2-D matrices")
    return arr


def leaf(data, name: str = "", dtype=DEFAULT_DTYPE) -> Node:
    """Create a trainable/perturbable graph input. Rejects non-finite data."""
    arr = _as_matrix(data, dtype)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"leaf {name!r} contains NaN or Inf")
    return Node(arr, name=name)


def constant(data, name: str = "const", dtype=DEFAULT_DTYPE) -> Node:
    """Alias of `leaf` for inputs that are not optimized (data, masks)."""
    return leaf(data, name=name, dtype=dtype)


def _out(value: np.ndarray, parents: tuple, backward, name: str) -> Node:
    if _DEBUG_CHECKS and not np.all(np.isfinite(value)):
        raise NonFiniteError(f"op {name} produced non-finite values")
    return Node(value, parents, backward, name)


def _accum(node: Node, g: np.ndarray) -> None:
    if node.grad is None:
        node.grad = g.copy()
    else:
        node.grad += g


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def matmul(a: Node, b: Node) -> Node:
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape, detail="inner dimensions differ")
    value = a.value @ b.value

    def backward(g):
        _accum(a, g @ b.value.T)
        _accum(b, a.value.T @ g)

    return _out(value, (a, b), backward, "matmul")


def transpose(a: Node) -> Node:
    def backward(g):
        _accum(a, g.T)

    return _out(a.value.T.copy(), (a,), backward, "transpose")


def add(a: Node, b: Node) -> Node:
    if a.shape != b.shape:
        raise ShapeError("add", a.shape, b.shape)

    def backward(g):
        _accum(a, g)
        _accum(b, g)

    return _out(a.value + b.value, (a, b), backward, "add")


def sub(a: Node, b: Node) -> Node:
    if a.shape != b.shape:
        raise ShapeError("sub", a.shape, b.shape)

    def backward(g):
        _accum(a, g)
        _accum(b, -g)

    return _out(a.value - b.value, (a, b), backward, "sub")


def mul(a: Node, b: Node) -> Node:
    """Elementwise (Hadamard) product."""
    if a.shape != b.shape:
        raise ShapeError("mul", a.shape, b.shape)

    def backward(g):
        _accum(a, g * b.value)
        _accum(b, g * a.value)

    return _out(a.value * b.value, (a, b), backward, "mul")


def neg(a: Node) -> Node:
    def backward(g):
        _accum(a, -g)

    return _out(-a.value, (a,), backward, "neg")


def scale(a: Node, k: float) -> Node:
    """Multiply by a python constant (not differentiated w.r.t. k)."""

    def backward(g):
        _accum(a, g * k)

    return _out(a.value * k, (a,), backward, "scale")


def scalar_mul(a: Node, s: Node) -> Node:
    """Multiply a matrix by a 1x1 graph scalar; differentiable in both."""
    if s.shape != (1, 1):
        raise ShapeError("scalar_mul", a.shape, s.shape, detail="scalar operand must be 1x1")

    def backward(g):
        _accum(a, g * s.value[0, 0])
        _accum(s, np.array([[np.sum(g * a.value)]], dtype=a.value.dtype))

    return _out(a.value * s.value[0, 0], (a, s), backward, "scalar_mul")


def add_rowvec(x: Node, r: Node) -> Node:
    """Broadcast-add a [1, w] row vector to every row of x."""
    if r.shape != (1, x.shape[1]):
        raise ShapeError("add_rowvec", x.shape, r.shape)

    def backward(g):
        _accum(x, g)
        _accum(r, g.sum(axis=0, keepdims=True))

    return _out(x.value + r.value, (x, r), backward, "add_rowvec")


def mul_rowvec(x: Node, r: Node) -> Node:
    if r.shape != (1, x.shape[1]):
        raise ShapeError("mul_rowvec", x.shape, r.shape)

    def backward(g):
        _accum(x, g * r.value)
        _accum(r, (g * x.value).sum(axis=0, keepdims=True))

    return _out(x.value * r.value, (x, r), backward, "mul_rowvec")


def add_colvec(x: Node, c: Node) -> Node:
    """Broadcast-add an [h, 1] column vector to every column of x."""
    if c.shape != (x.shape[0], 1):
        raise ShapeError("add_colvec", x.shape, c.shape)

    def backward(g):
        _accum(x, g)
        _accum(c, g.sum(axis=1, keepdims=True))

    return _out(x.value + c.value, (x, c), backward, "add_colvec")


def mul_colvec(x: Node, c: Node) -> Node:
    if c.shape != (x.shape[0], 1):
        raise ShapeError("mul_colvec", x.shape, c.shape)

    def backward(g):
        _accum(x, g * c.value)
        _accum(c, (g * x.value).sum(axis=1, keepdims=True))

    return _out(x.value * c.value, (x, c), backward, "mul_colvec")


def softmax_rows(x: Node) -> Node:
    """Numerically stable softmax over the last axis (each row sums to 1)."""
    shifted = x.value - x.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        dot = (g * s).sum(axis=1, keepdims=True)
        _accum(x, s * (g - dot))

    return _out(s, (x,), backward, "softmax_rows")


_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


def gelu(x: Node) -> Node:
    """GELU, tanh approximation with the standard fixed constants."""
    v = x.value
    inner = _GELU_C * (v + _GELU_A * v**3)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3.0 * _GELU_A * v**2)
        deriv = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t**2) * d_inner
        _accum(x, g * deriv)

    return _out(out, (x,), backward, "gelu")


def relu(x: Node) -> Node:
    mask = x.value > 0

    def backward(g):
        _accum(x, g * mask)

    return _out(np.maximum(x.value, 0.0), (x,), backward, "relu")


def row_mean(x: Node) -> Node:
    """Mean over the last axis, keeping a [rows, 1] column."""
    n = x.shape[1]
    out = x.value.mean(axis=1, keepdims=True)

    def backward(g):
        _accum(x, np.repeat(g / n, n, axis=1))

    return _out(out, (x,), backward, "row_mean")


def pow_elem(x: Node, p: float) -> Node:
    """Elementwise power; non-integer exponents require positive inputs."""
    out = x.value**p

    def backward(g):
        _accum(x, g * p * x.value ** (p - 1.0))

    return _out(out, (x,), backward, "pow_elem")


def abs_elem(x: Node) -> Node:
    """Elementwise absolute value; the subgradient at exactly 0 is 0."""
    sign = np.sign(x.value)

    def backward(g):
        _accum(x, g * sign)

    return _out(np.abs(x.value), (x,), backward, "abs_elem")


def log_elem(x: Node) -> Node:
    if np.any(x.value <= 0):
        raise NonFiniteError("log_elem requires strictly positive inputs")

    def backward(g):
        _accum(x, g / x.value)

    return _out(np.log(x.value), (x,), backward, "log_elem")


def add_const(x: Node, k: float) -> Node:
    def backward(g):
        _accum(x, g)

    return _out(x.value + k, (x,), backward, "add_const")


def sum_all(x: Node) -> Node:
    def backward(g):
        _accum(x, np.full_like(x.value, g[0, 0]))

    return _out(np.array([[x.value.sum()]], dtype=x.value.dtype), (x,), backward, "sum_all")


def mean_all(x: Node) -> Node:
    n = x.value.size

    def backward(g):
        _accum(x, np.full_like(x.value, g[0, 0] / n))

    return _out(np.array([[x.value.mean()]], dtype=x.value.dtype), (x,), backward, "mean_all")


def concat_cols(parts: Sequence[Node]) -> Node:
    if not parts:
        raise ShapeError("concat_cols", (), detail="needs at least one operand")
    rows = parts[0].shape[0]
    for p in parts:
        if p.shape[0] != rows:
            raise ShapeError("concat_cols", *(q.shape for q in parts), detail="row counts differ")
    widths = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, g[:, lo:hi])

    return _out(np.hstack([p.value for p in parts]), tuple(parts), backward, "concat_cols")


def zeros(rows: int, cols: int, dtype=DEFAULT_DTYPE) -> Node:
    return Node(np.zeros((rows, cols), dtype=dtype), name="zeros")


def node_sum(nodes: Iterable[Node]) -> Node | None:
    """Sum a sequence of same-shaped nodes; None for an empty sequence."""
    total = None
    for n in nodes:
        total = n if total is None else add(total, n)
    return total


# ---------------------------------------------------------------------------
# evaluation and backward pass
# ---------------------------------------------------------------------------

def evaluate(root: Node, check_finite: bool = True) -> np.ndarray:
    """Return the root value (values are computed eagerly at build time)."""
    if check_finite and not np.all(np.isfinite(root.value)):
        raise NonFiniteError("graph evaluation produced non-finite values")
    return root.value


def _toposort(root: Node) -> list[Node]:
    order: list[Node] = []
    visited: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(root: Node, leaves: Sequence[Node] | None = None) -> dict[int, np.ndarray]:
    """Backpropagate from a scalar root; returns gradients keyed by id(leaf).

    Leaves passed explicitly but unreachable from the root get zero
    gradients of their own shape.
    """
    if root.shape != (1, 1):
        raise ShapeError("backward", root.shape, detail="root must be a 1x1 scalar")
    order = _toposort(root)
    for node in order:
        node.grad = None
    root.grad = np.ones((1, 1), dtype=root.value.dtype)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    grads: dict[int, np.ndarray] = {}
    for node in order:
        if node._backward is None and node.grad is not None:
            grads[id(node)] = node.grad
    if leaves is not None:
        for lf in leaves:
            if id(lf) not in grads:
                grads[id(lf)] = np.zeros_like(lf.value)
    return grads


def grad_of(grads: dict[int, np.ndarray], lf: Node) -> np.ndarray:
    return grads.get(id(lf), np.zeros_like(lf.value))


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

@dataclass
class FiniteDifferenceReport:
    passed: bool
    max_rel_err: float
    max_abs_err: float
    worst_index: tuple[int, int]
    tolerance: float

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return (
            f"finite-difference {status}: max_rel_err={self.max_rel_err:.3e} "
            f"max_abs_err={self.max_abs_err:.3e} at {self.worst_index} (tol={self.tolerance:g})"
        )


def finite_difference_check(
    build: Callable[[], Node],
    target: Node,
    step: float = 1e-4,
    tolerance: float = 1e-5,
) -> FiniteDifferenceReport:
    """Compare backward gradients to central differences, entry by entry.

    ``build`` reconstructs the scalar loss from the current leaf values, so
    perturbing ``target.value`` in place and rebuilding yields the perturbed
    loss.  The relative error normalizes the largest entrywise discrepancy
    by the gradient scale: ``max|a - n| / max(max|a|, max|n|, 1e-8)``.
    Never raises on mismatch; inspect ``passed`` on the report.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    root = build()
    if root.shape != (1, 1):
        raise ShapeError("finite_difference_check", root.shape, detail="loss must be scalar")
    grads = backward(root, leaves=[target])
    analytic = grad_of(grads, target)

    numeric = np.zeros_like(target.value)
    flat = target.value.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = build().value[0, 0]
        flat[i] = orig - step
        f_minus = build().value[0, 0]
        flat[i] = orig
        num_flat[i] = (f_plus - f_minus) / (2.0 * step)

    diff = np.abs(analytic - numeric)
    denom = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    max_abs = float(diff.max(initial=0.0))
    rel = max_abs / denom
    worst = np.unravel_index(int(diff.argmax()), diff.shape) if diff.size else (0, 0)
    return FiniteDifferenceReport(
        passed=rel < tolerance,
        max_rel_err=float(rel),
        max_abs_err=max_abs,
        worst_index=(int(worst[0]), int(worst[1])),
        tolerance=tolerance,
    )


# ---------------------------------------------------------------------------
# seeded randomness
# ---------------------------------------------------------------------------

class Rng:
    """Deterministic random stream (PCG64). Same seed, same stream, anywhere.

    Child streams are derived by hashing the parent seed with a string tag,
    so independent consumers cannot perturb each other's sequences.
    """

    ALGORITHM = "pcg64"

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, tag: str) -> "Rng":
        digest = hashlib.sha256(f"{self.seed}/{tag}".encode()).digest()
        return Rng(int.from_bytes(digest[:8], "little"))

    def normal(self, rows: int, cols: int, std: float = 1.0, dtype=DEFAULT_DTYPE) -> np.ndarray:
        return (self._gen.standard_normal((rows, cols)) * std).astype(dtype)

    def uniform(self, rows: int, cols: int, low: float = 0.0, high: float = 1.0, dtype=DEFAULT_DTYPE) -> np.ndarray:
        return self._gen.uniform(low, high, size=(rows, cols)).astype(dtype)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def bernoulli(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        return (self._gen.random(p.shape) < p).astype(np.int64)

    def shuffle(self, x) -> None:
        self._gen.shuffle(x)
