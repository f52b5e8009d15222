"""Connector units: composing gated components into layered residual networks.

A connector chain threads a state ``(stream, carry)`` through a sequence of
components.  Each unit adds its component output to the carry; the unit's
connection gate decides whether the accumulated carry is folded into the
stream now (vertical, gate 1: the current layer ends here) or passed along
(horizontal, gate 0: the next component joins the same layer).  The chain
terminates by adding stream and carry, which restores the residual
connection.  For ``k`` units the ``2**(k-1)`` gate settings enumerate every
split of the components into consecutive residual layers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

from . import grad
from .errors import ShapeError
from .grad import Node


@dataclass
class ConnectorState:
    stream: Node
    carry: Node


def initial_state(x: Node) -> ConnectorState:
    """Chain entry point: empty carry."""
    return ConnectorState(stream=x, carry=grad.zeros(x.shape[0], x.shape[1], dtype=x.value.dtype))


def connector_apply(f: Callable[[Node], Node], gate, state: ConnectorState) -> ConnectorState:
    """One connector unit.

    new_stream = stream + gate * (f(stream) + carry)
    new_carry  = (1 - gate) * (f(stream) + carry)

    ``gate`` may be a float in [0, 1] or a 1x1 node (relaxed search, where a
    fractional gate acts as a scaled residual connection).  The identity
    new_stream + new_carry == stream + f(stream) + carry holds for any gate.
    """
    out = f(state.stream)
    if out.shape != state.stream.shape:
        raise ShapeError("connector_apply", state.stream.shape, out.shape,
                         detail="component must preserve the state shape")
    pending = grad.add(out, state.carry)
    if isinstance(gate, Node):
        one_minus = grad.add_const(grad.neg(gate), 1.0)
        return ConnectorState(
            stream=grad.add(state.stream, grad.scalar_mul(pending, gate)),
            carry=grad.scalar_mul(pending, one_minus),
        )
    g = float(gate)
    if g == 0.0:
        return ConnectorState(stream=state.stream, carry=pending)
    if g == 1.0:
        return ConnectorState(
            stream=grad.add(state.stream, pending),
            carry=grad.zeros(out.shape[0], out.shape[1], dtype=out.value.dtype),
        )
    return ConnectorState(
        stream=grad.add(state.stream, grad.scale(pending, g)),
        carry=grad.scale(pending, 1.0 - g),
    )


def omega_combine(state: ConnectorState) -> Node:
    """Terminal combiner: stream + carry."""
    if state.stream.shape != state.carry.shape:
        raise ShapeError("omega_combine", state.stream.shape, state.carry.shape)
    return grad.add(state.stream, state.carry)


def chain_forward(
    units: Sequence[Callable[[Node], Node]],
    connections: Sequence,
    x: Node,
) -> Node:
    """Fold connector units over an input and combine.

    ``connections`` has one gate per non-terminal unit (len(units) - 1
    entries); the terminal unit's gate is irrelevant because the combiner
    adds stream and carry regardless.
    """
    if len(units) == 0:
        raise ShapeError("chain_forward", (), detail="chain needs at least one unit")
    if len(connections) != len(units) - 1:
        raise ShapeError(
            "chain_forward", (len(units),), (len(connections),),
            detail="need one connection gate per non-terminal unit",
        )
    state = initial_state(x)
    for i, f in enumerate(units):
        gate = connections[i] if i < len(units) - 1 else 0.0
        state = connector_apply(f, gate, state)
    return omega_combine(state)


def layer_assignment(connections: Sequence[int]) -> tuple[int, ...]:
    """Map binary connection gates to the residual layer index of each unit."""
    layers = []
    current = 0
    for g in list(connections) + [0]:
        layers.append(current)
        if g == 1:
            current += 1
    return tuple(layers)
