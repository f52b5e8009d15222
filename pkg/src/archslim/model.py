"""Assembling gated components and connector chains into runnable networks.

A network is a token embedding, a stack of blocks, and a task head.  Each
block is two connector chains with a layer norm after each: the attention
chain runs one unit per head, the feedforward chain one unit per slice.
Gates may be floats (binary architectures, evaluation, profiling) or 1x1
graph nodes (relaxed search); a float gate of exactly zero skips the
component's computation entirely, so evaluating a pruned architecture
costs what the pruned network costs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import components as comp
from . import connectors as conn
from . import grad
from .errors import ConfigError
from .grad import Node, Rng
from .schemas import SearchSpaceConfig
from .space import BlockParams, SpaceTemplate


@dataclass
class BlockWeights:
    heads: list[comp.AttentionHead]
    ff: comp.FeedForwardStack
    ln_att: comp.LayerNorm
    ln_ff: comp.LayerNorm


@dataclass
class NetworkWeights:
    config: SearchSpaceConfig
    vocab_size: int
    num_classes: int
    embed: Node
    blocks: list[BlockWeights]
    out_w: Node
    out_b: Node
    sim_scale: float
    # per-block, per-head overrides of the softmax scale; retraining uses
    # scales recomputed from the retained similarity slices
    head_scales: list[list[float]] | None = None


def build_network(cfg: SearchSpaceConfig, vocab_size: int, num_classes: int, rng: Rng) -> NetworkWeights:
    h = cfg.hidden
    embed = grad.leaf(rng.child("embed").normal(vocab_size, h, 1.0), "embed")
    blocks = []
    for b in range(cfg.layers):
        brng = rng.child(f"block{b}")
        heads = [
            comp.make_head(
                brng.child(f"h{j}"), h, cfg.key_dim, cfg.value_dim,
                cfg.m_sim, cfg.m_value, name=f"b{b}.att.h{j}",
            )
            for j in range(cfg.heads)
        ]
        ff = comp.make_ff_stack(brng.child("ff"), h, cfg.ff_dim, cfg.m_ff,
                                cfg.activation, name=f"b{b}.ff")
        blocks.append(BlockWeights(
            heads=heads,
            ff=ff,
            ln_att=comp.make_layer_norm(h, name=f"b{b}.ln_att"),
            ln_ff=comp.make_layer_norm(h, name=f"b{b}.ln_ff"),
        ))
    out_rng = rng.child("head")
    out_w = grad.leaf(out_rng.normal(h, num_classes, 1.0 / np.sqrt(h)), "out_w")
    out_b = grad.leaf(np.zeros((1, num_classes)), "out_b")
    return NetworkWeights(
        config=cfg, vocab_size=vocab_size, num_classes=num_classes,
        embed=embed, blocks=blocks, out_w=out_w, out_b=out_b,
        sim_scale=1.0 / np.sqrt(cfg.key_dim),
    )


def weight_leaves(net: NetworkWeights) -> dict[str, Node]:
    """Every trainable tensor, keyed by its stable name, in a fixed order."""
    out: dict[str, Node] = {"embed": net.embed}
    for block in net.blocks:
        for head in block.heads:
            for s in head.sim_slices:
                out[s.wq.name] = s.wq
                out[s.wk.name] = s.wk
            for v in head.value_slices:
                out[v.wv.name] = v.wv
                out[v.wo.name] = v.wo
        for s in block.ff.slices:
            out[s.w1.name] = s.w1
            out[s.b1.name] = s.b1
            out[s.w2.name] = s.w2
        out[block.ff.b2.name] = block.ff.b2
        out[block.ln_att.alpha.name] = block.ln_att.alpha
        out[block.ln_att.beta.name] = block.ln_att.beta
        out[block.ln_ff.alpha.name] = block.ln_ff.alpha
        out[block.ln_ff.beta.name] = block.ln_ff.beta
    out["out_w"] = net.out_w
    out["out_b"] = net.out_b
    return out


def copy_network(net: NetworkWeights) -> NetworkWeights:
    """Deep copy with fresh leaf nodes (same names, copied arrays)."""

    def cp(node: Node) -> Node:
        return grad.leaf(node.value.copy(), node.name)

    blocks = []
    for block in net.blocks:
        heads = [
            comp.AttentionHead(
                sim_slices=[comp.SimSlice(cp(s.wq), cp(s.wk)) for s in hd.sim_slices],
                value_slices=[comp.ValueSlice(cp(v.wv), cp(v.wo)) for v in hd.value_slices],
            )
            for hd in block.heads
        ]
        ff = comp.FeedForwardStack(
            slices=[comp.FeedForwardSlice(cp(s.w1), cp(s.b1), cp(s.w2)) for s in block.ff.slices],
            b2=cp(block.ff.b2),
            activation=block.ff.activation,
        )
        blocks.append(BlockWeights(
            heads=heads, ff=ff,
            ln_att=comp.LayerNorm(cp(block.ln_att.alpha), cp(block.ln_att.beta), block.ln_att.eps),
            ln_ff=comp.LayerNorm(cp(block.ln_ff.alpha), cp(block.ln_ff.beta), block.ln_ff.eps),
        ))
    return NetworkWeights(
        config=net.config, vocab_size=net.vocab_size, num_classes=net.num_classes,
        embed=cp(net.embed), blocks=blocks, out_w=cp(net.out_w), out_b=cp(net.out_b),
        sim_scale=net.sim_scale,
    )


def _gate_or(gates: Mapping[str, object], pid: str | None, default: float):
    if pid is None:
        return default
    return gates.get(pid, default)


def block_forward(
    block: BlockWeights,
    params: BlockParams,
    x: Node,
    gates: Mapping[str, object],
    sim_scale: float,
    head_scales: list[float] | None = None,
) -> Node:
    """One transformer block under the given gate assignment."""
    rows, h = x.shape

    def head_unit(j: int):
        head = block.heads[j]
        head_gate = _gate_or(gates, params.heads[j], 1.0)
        sim_gates = [_gate_or(gates, pid, 1.0) for pid in params.sims[j]]
        value_gates = [_gate_or(gates, pid, 1.0) for pid in params.values]
        scale = head_scales[j] if head_scales is not None else sim_scale

        def unit(s: Node) -> Node:
            if comp.is_zero_gate(head_gate):
                return grad.zeros(s.shape[0], s.shape[1], dtype=s.value.dtype)
            out = comp.head_forward(head, s, scale, sim_gates, value_gates,
                                    check_values_retained=False)
            return comp.apply_gate(out, head_gate)

        return unit

    att_units = [head_unit(j) for j in range(len(block.heads))]
    att_conns = [_gate_or(gates, pid, 0.0) for pid in params.att_conns]
    if not params.att_conns:
        att_conns = [0.0] * (len(att_units) - 1)
    y = conn.chain_forward(att_units, att_conns, x)
    y = comp.layer_norm_forward(block.ln_att, y, _gate_or(gates, params.ln_att, 1.0))

    def ff_unit(i: int):
        sl = block.ff.slices[i]
        gate = _gate_or(gates, params.ff[i], 1.0)

        def unit(s: Node) -> Node:
            if comp.is_zero_gate(gate):
                return grad.zeros(s.shape[0], s.shape[1], dtype=s.value.dtype)
            out = comp.ff_slice_forward(sl, s, block.ff.activation)
            return comp.apply_gate(out, gate)

        return unit

    ff_units = [ff_unit(i) for i in range(len(block.ff.slices))]
    ff_conns = [_gate_or(gates, pid, 0.0) for pid in params.ff_conns]
    z = conn.chain_forward(ff_units, ff_conns, y)
    z = grad.add_rowvec(z, block.ff.b2)  # shared output bias, added once per block
    return comp.layer_norm_forward(block.ln_ff, z, _gate_or(gates, params.ln_ff, 1.0))


def network_forward(
    net: NetworkWeights,
    template: SpaceTemplate,
    gates: Mapping[str, object],
    tokens: np.ndarray,
) -> Node:
    """Embed a token sequence and run it through every block."""
    onehot = np.zeros((len(tokens), net.vocab_size), dtype=net.embed.value.dtype)
    onehot[np.arange(len(tokens)), tokens] = 1.0
    x = grad.matmul(grad.constant(onehot, "tokens"), net.embed)
    for i, (block, params) in enumerate(zip(net.blocks, template.blocks)):
        scales = net.head_scales[i] if net.head_scales is not None else None
        x = block_forward(block, params, x, gates, net.sim_scale, scales)
    return x


def task_logits(
    net: NetworkWeights,
    template: SpaceTemplate,
    gates: Mapping[str, object],
    tokens: np.ndarray,
    kind: str,
) -> Node:
    """Pooled logits for classification, per-position logits otherwise."""
    x = network_forward(net, template, gates, tokens)
    if kind == "sequence-classification":
        pool = grad.constant(np.full((1, len(tokens)), 1.0 / len(tokens)), "pool")
        x = grad.matmul(pool, x)
    return grad.add_rowvec(grad.matmul(x, net.out_w), net.out_b)


def cross_entropy(logits: Node, target_rows: np.ndarray) -> Node:
    """Mean row-wise cross entropy; rows with target -1 are ignored."""
    rows, classes = logits.shape
    onehot = np.zeros((rows, classes), dtype=logits.value.dtype)
    active = 0
    for r, t in enumerate(np.atleast_1d(target_rows)):
        if t >= 0:
            onehot[r, int(t)] = 1.0
            active += 1
    if active == 0:
        raise ConfigError("cross entropy needs at least one labeled row")
    probs = grad.softmax_rows(logits)
    picked = grad.sum_all(grad.mul(grad.log_elem(probs), grad.constant(onehot, "target")))
    return grad.scale(picked, -1.0 / active)


def example_loss(
    net: NetworkWeights,
    template: SpaceTemplate,
    gates: Mapping[str, object],
    tokens: np.ndarray,
    target,
    kind: str,
) -> Node:
    logits = task_logits(net, template, gates, tokens, kind)
    if kind == "sequence-classification":
        return cross_entropy(logits, np.array([int(target)]))
    return cross_entropy(logits, np.asarray(target))


def batch_loss(net, template, gates, examples, kind: str) -> Node:
    losses = [example_loss(net, template, gates, toks, tgt, kind) for toks, tgt in examples]
    return grad.scale(grad.node_sum(losses), 1.0 / len(losses))


def predict(net, template, gates, tokens: np.ndarray, kind: str) -> np.ndarray:
    logits = task_logits(net, template, gates, tokens, kind)
    return np.argmax(logits.value, axis=1)


def accuracy(net, template, gates, examples, kind: str) -> float:
    """Fraction of correct argmax predictions over labeled positions."""
    correct = 0
    total = 0
    for tokens, target in examples:
        pred = predict(net, template, gates, tokens, kind)
        if kind == "sequence-classification":
            correct += int(pred[0] == int(target))
            total += 1
        else:
            tgt = np.asarray(target)
            mask = tgt >= 0
            correct += int((pred[mask] == tgt[mask]).sum())
            total += int(mask.sum())
    return correct / max(total, 1)


def retained_sim_scales(template: SpaceTemplate, values: Mapping[str, float]) -> list[list[float]]:
    """Softmax scales recomputed from each head's retained similarity width.

    Used when an architecture is trained from scratch; during search the
    scale stays at the full key dimension so gate changes cannot jump the
    score magnitude discontinuously.
    """
    cfg = template.config
    width = cfg.key_dim // cfg.m_sim
    scales = []
    for bp in template.blocks:
        row = []
        for sim_ids in bp.sims:
            retained = sum(1 for sid in sim_ids if values.get(sid, 0.0) != 0.0)
            row.append(1.0 / np.sqrt(max(retained * width, 1)))
        scales.append(row)
    return scales


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def dump_weights(net: NetworkWeights) -> dict:
    """Shape-tagged JSON tensor dump with a versioned header."""
    arrays = {
        name: {"shape": list(node.value.shape), "data": node.value.reshape(-1).tolist()}
        for name, node in weight_leaves(net).items()
    }
    return {
        "checkpoint_version": CHECKPOINT_VERSION,
        "dtype": str(net.embed.value.dtype),
        "config": net.config.model_dump(),
        "vocab_size": net.vocab_size,
        "num_classes": net.num_classes,
        "arrays": arrays,
    }


def load_weights(payload: dict) -> NetworkWeights:
    if payload.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {payload.get('checkpoint_version')!r}")
    cfg = SearchSpaceConfig(**payload["config"])
    net = build_network(cfg, payload["vocab_size"], payload["num_classes"], Rng(0))
    leaves = weight_leaves(net)
    dtype = np.dtype(payload["dtype"])
    for name, spec in payload["arrays"].items():
        if name not in leaves:
            raise ConfigError(f"checkpoint contains unknown tensor {name!r}")
        arr = np.asarray(spec["data"], dtype=dtype).reshape(spec["shape"])
        if arr.shape != leaves[name].value.shape:
            raise ConfigError(f"checkpoint tensor {name!r} has shape {arr.shape}, "
                              f"expected {leaves[name].value.shape}")
        leaves[name].value = arr
    return net
