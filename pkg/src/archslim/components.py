"""Gated transformer sub-components.

Every searchable component is stored pre-sliced: a feedforward stack holds
``m`` equal-width slices whose outputs sum to the full two-layer network,
an attention head holds query-key similarity slices and value slices, and
layer normalization carries a gate on its mean subtraction.  Gates are
either python floats (binary search, architecture evaluation) or 1x1 graph
nodes (relaxed search), and a gate of exactly 0 skips the slice entirely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grad
from .errors import InvalidArchitectureError, ShapeError
from .grad import Node, Rng

ACTIVATIONS = ("gelu", "relu")


def _activate(x: Node, activation: str) -> Node:
    if activation == "gelu":
        return grad.gelu(x)
    if activation == "relu":
        return grad.relu(x)
    raise ValueError(f"unknown activation {activation!r}")


def is_zero_gate(gate) -> bool:
    return isinstance(gate, (int, float)) and gate == 0.0


def apply_gate(x: Node, gate) -> Node:
    """Scale a component output by its gate (float or 1x1 node)."""
    if isinstance(gate, Node):
        return grad.scalar_mul(x, gate)
    if gate == 1.0:
        return x
    return grad.scale(x, float(gate))


# ---------------------------------------------------------------------------
# feedforward
# ---------------------------------------------------------------------------

@dataclass
class FeedForwardSlice:
    """One of m equal slices of a two-layer feedforward network."""

    w1: Node  # [h, width]
    b1: Node  # [1, width]
    w2: Node  # [width, h]

    @property
    def width(self) -> int:
        return self.w1.shape[1]


@dataclass
class FeedForwardStack:
    """All slices of one feedforward component plus the shared output bias.

    The output bias is added once after the slice sum, not per slice, so
    the sum of slice outputs reproduces the undecomposed network exactly.
    """

    slices: list[FeedForwardSlice]
    b2: Node  # [1, h]
    activation: str = "gelu"

    @property
    def hidden(self) -> int:
        return self.slices[0].w1.shape[0]


def ff_slice_forward(sl: FeedForwardSlice, x: Node, activation: str = "gelu") -> Node:
    """Dense(width) -> activation -> Dense(h) for a single slice, no output bias."""
    if x.shape[1] != sl.w1.shape[0]:
        raise ShapeError("ff_slice_forward", x.shape, sl.w1.shape)
    hidden = grad.add_rowvec(grad.matmul(x, sl.w1), sl.b1)
    return grad.matmul(_activate(hidden, activation), sl.w2)


def ff_stack_forward(stack: FeedForwardStack, x: Node, gates=None) -> Node:
    """Gated slice sum plus the shared output bias."""
    if gates is None:
        gates = [1.0] * len(stack.slices)
    parts = [
        apply_gate(ff_slice_forward(sl, x, stack.activation), g)
        for sl, g in zip(stack.slices, gates)
        if not is_zero_gate(g)
    ]
    total = grad.node_sum(parts)
    if total is None:
        total = grad.zeros(x.shape[0], stack.hidden, dtype=x.value.dtype)
    return grad.add_rowvec(total, stack.b2)


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------

@dataclass
class SimSlice:
    """Query and key projections for one slice of the similarity dimension."""

    wq: Node  # [h, width]
    wk: Node  # [h, width]

    @property
    def width(self) -> int:
        return self.wq.shape[1]


@dataclass
class ValueSlice:
    """Value projection and its matching rows of the output projection."""

    wv: Node  # [h, width]
    wo: Node  # [width, h]

    @property
    def width(self) -> int:
        return self.wv.shape[1]


@dataclass
class AttentionHead:
    sim_slices: list[SimSlice]
    value_slices: list[ValueSlice]

    @property
    def key_dim(self) -> int:
        return sum(s.width for s in self.sim_slices)

    @property
    def value_dim(self) -> int:
        return sum(s.width for s in self.value_slices)


def sim_forward(slices: list[SimSlice], x: Node, gates=None) -> Node:
    """Sum of per-slice (X Wq)(X Wk)^T scores; empty slice set gives zeros."""
    if gates is None:
        gates = [1.0] * len(slices)
    parts = []
    for sl, g in zip(slices, gates):
        if is_zero_gate(g):
            continue
        q = grad.matmul(x, sl.wq)
        k = grad.matmul(x, sl.wk)
        parts.append(apply_gate(grad.matmul(q, grad.transpose(k)), g))
    total = grad.node_sum(parts)
    if total is None:
        total = grad.zeros(x.shape[0], x.shape[0], dtype=x.value.dtype)
    return total


def head_forward(
    head: AttentionHead,
    x: Node,
    sim_scale: float,
    sim_gates=None,
    value_gates=None,
    check_values_retained: bool = True,
) -> Node:
    """Single-head attention as a gated sum over value slices.

    With every similarity slice gated off the scores are all zero, so the
    softmax degenerates to uniform weights: the head becomes a mean pooling
    over value projections.  A retained head with every value slice gated
    off is structurally invalid and rejected by default; the relaxed
    supernet forward disables the check because sampled or fractional
    states may pass through it transiently.
    """
    if value_gates is None:
        value_gates = [1.0] * len(head.value_slices)
    active_values = [
        (sl, g) for sl, g in zip(head.value_slices, value_gates) if not is_zero_gate(g)
    ]
    if check_values_retained and not active_values:
        raise InvalidArchitectureError("retained attention head has no retained value slices")
    scores = grad.scale(sim_forward(head.sim_slices, x, sim_gates), sim_scale)
    attn = grad.softmax_rows(scores)
    parts = []
    for sl, g in active_values:
        v = grad.matmul(attn, grad.matmul(x, sl.wv))
        parts.append(apply_gate(grad.matmul(v, sl.wo), g))
    total = grad.node_sum(parts)
    if total is None:
        total = grad.zeros(x.shape[0], x.shape[1], dtype=x.value.dtype)
    return total


def multihead_forward(
    heads: list[AttentionHead],
    x: Node,
    sim_scale: float,
    head_gates=None,
) -> Node:
    """Sum of gated single-head attentions; all heads must share value_dim."""
    dims = {h.value_dim for h in heads}
    if len(dims) > 1:
        raise ShapeError(
            "multihead_forward", *(h.value_dim for h in heads),
            detail="all heads in a block must share the value dimension",
        )
    if head_gates is None:
        head_gates = [1.0] * len(heads)
    parts = [
        apply_gate(head_forward(h, x, sim_scale), g)
        for h, g in zip(heads, head_gates)
        if not is_zero_gate(g)
    ]
    total = grad.node_sum(parts)
    if total is None:
        total = grad.zeros(x.shape[0], x.shape[1], dtype=x.value.dtype)
    return total


# ---------------------------------------------------------------------------
# layer normalization
# ---------------------------------------------------------------------------

LN_VARIANCE_FLOOR = 1e-12


@dataclass
class LayerNorm:
    alpha: Node  # [1, h]
    beta: Node  # [1, h]
    eps: float = LN_VARIANCE_FLOOR


def layer_norm_forward(ln: LayerNorm, x: Node, mean_gate=1.0) -> Node:
    """Row normalization with a gated mean: mu' = gate * mean(row).

    sigma is sqrt(mean((row - mu')^2) + eps); the floor keeps constant rows
    finite.  mean_gate may be a float or a 1x1 node.
    """
    if isinstance(mean_gate, Node):
        mu_eff = grad.scalar_mul(grad.row_mean(x), mean_gate)
    elif mean_gate == 0.0:
        mu_eff = None
    elif mean_gate == 1.0:
        mu_eff = grad.row_mean(x)
    else:
        mu_eff = grad.scale(grad.row_mean(x), float(mean_gate))
    centered = x if mu_eff is None else grad.add_colvec(x, grad.neg(mu_eff))
    variance = grad.row_mean(grad.mul(centered, centered))
    sigma = grad.pow_elem(grad.add_const(variance, ln.eps), 0.5)
    inv = grad.pow_elem(sigma, -1.0)
    normalized = grad.mul_colvec(centered, inv)
    return grad.add_rowvec(grad.mul_rowvec(normalized, ln.alpha), ln.beta)


# ---------------------------------------------------------------------------
# weight construction
# ---------------------------------------------------------------------------

def make_ff_stack(rng: Rng, hidden: int, ff_dim: int, m: int, activation: str = "gelu",
                  name: str = "ff", dtype=np.float64) -> FeedForwardStack:
    if ff_dim % m != 0:
        raise ShapeError("make_ff_stack", (ff_dim, m), detail="ff_dim must divide evenly")
    width = ff_dim // m
    std_in = 1.0 / np.sqrt(hidden)
    std_out = 1.0 / np.sqrt(width)
    slices = [
        FeedForwardSlice(
            w1=grad.leaf(rng.normal(hidden, width, std_in, dtype), f"{name}.s{i}.w1", dtype),
            b1=grad.leaf(np.zeros((1, width)), f"{name}.s{i}.b1", dtype),
            w2=grad.leaf(rng.normal(width, hidden, std_out, dtype), f"{name}.s{i}.w2", dtype),
        )
        for i in range(m)
    ]
    b2 = grad.leaf(np.zeros((1, hidden)), f"{name}.b2", dtype)
    return FeedForwardStack(slices=slices, b2=b2, activation=activation)


def make_head(rng: Rng, hidden: int, key_dim: int, value_dim: int, m_sim: int, m_value: int,
              name: str = "head", dtype=np.float64) -> AttentionHead:
    if key_dim % m_sim != 0 or value_dim % m_value != 0:
        raise ShapeError(
            "make_head", (key_dim, m_sim), (value_dim, m_value),
            detail="key/value dims must divide evenly",
        )
    kw = key_dim // m_sim
    vw = value_dim // m_value
    std_h = 1.0 / np.sqrt(hidden)
    std_v = 1.0 / np.sqrt(vw)
    sims = [
        SimSlice(
            wq=grad.leaf(rng.normal(hidden, kw, std_h, dtype), f"{name}.sim{i}.wq", dtype),
            wk=grad.leaf(rng.normal(hidden, kw, std_h, dtype), f"{name}.sim{i}.wk", dtype),
        )
        for i in range(m_sim)
    ]
    values = [
        ValueSlice(
            wv=grad.leaf(rng.normal(hidden, vw, std_h, dtype), f"{name}.val{j}.wv", dtype),
            wo=grad.leaf(rng.normal(vw, hidden, std_v, dtype), f"{name}.val{j}.wo", dtype),
        )
        for j in range(m_value)
    ]
    return AttentionHead(sim_slices=sims, value_slices=values)


def make_layer_norm(hidden: int, name: str = "ln", dtype=np.float64) -> LayerNorm:
    return LayerNorm(
        alpha=grad.leaf(np.ones((1, hidden)), f"{name}.alpha", dtype),
        beta=grad.leaf(np.zeros((1, hidden)), f"{name}.beta", dtype),
    )
