"""Portable architecture descriptions and DOT rendering.

A description captures the selected architecture structurally (retained
heads with their sliced dimensions, feedforward layer splits, layer-norm
mean flags) plus the exact gate values, so that together with a weight
checkpoint it rebuilds a network that reproduces the pruned one-shot
model.  The reported per-head key dimension counts retained similarity
slices; the rebuilt network keeps the search-time softmax scale, which is
the folded-equivalent form of rescaling the query projections for the
smaller dimension.
"""

from __future__ import annotations

import hashlib
import json

from . import costmodel, model, space
from .connectors import layer_assignment
from .errors import InvalidArchitectureError
from .schemas import (
    ArchitectureDescription,
    BlockDescription,
    HeadDescription,
    Provenance,
    SelectedArchitecture,
)


def config_hash(payload) -> str:
    """Stable fingerprint of any JSON-serializable configuration."""
    if hasattr(payload, "model_dump"):
        payload = payload.model_dump()
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _grouped_layers(indices, conns, values):
    """Residual layers of a chain: retained unit indices grouped by layer."""
    gates = [1 if values.get(cid, 0.0) >= 0.5 else 0 for cid in conns]
    if len(gates) < len(indices) - 1:
        gates = gates + [0] * (len(indices) - 1 - len(gates))
    assignment = layer_assignment(gates)
    layers: dict[int, list[int]] = {}
    for unit, layer in zip(indices, assignment):
        layers.setdefault(layer, []).append(unit)
    return [layers[k] for k in sorted(layers)]


def extract_description(
    selected: dict[str, float],
    template: space.SpaceTemplate,
    costs: dict[str, float],
    provenance: Provenance | None = None,
) -> ArchitectureDescription:
    """Describe a selected architecture and its modeled cost."""
    cfg = template.config
    missing = [pid for pid in template.entries if pid not in selected]
    if missing:
        raise InvalidArchitectureError(f"selection is missing gates: {missing[:4]}")
    sim_width = cfg.key_dim // cfg.m_sim
    value_width = cfg.value_dim // cfg.m_value

    blocks = []
    for b, bp in enumerate(template.blocks):
        heads = []
        retained_heads = []
        for j, hid in enumerate(bp.heads):
            retained = selected[hid] != 0.0
            sims_on = sum(1 for sid in bp.sims[j] if selected[sid] != 0.0) if retained else 0
            values_on = sum(1 for vid in bp.values if selected[vid] != 0.0) if retained else 0
            heads.append(HeadDescription(
                index=j,
                retained=retained,
                key_dim=sims_on * sim_width,
                value_dim=values_on * value_width,
                value_mean_pooling=bool(retained and sims_on == 0),
            ))
            if retained:
                retained_heads.append(j)
        ff_on = [i for i, fid in enumerate(bp.ff) if selected[fid] != 0.0]
        ff_width = cfg.ff_dim // cfg.m_ff
        att_layers = (
            [[j for j in layer if j in retained_heads]
             for layer in _grouped_layers(list(range(cfg.heads)), bp.att_conns, selected)]
            if retained_heads else []
        )
        att_layers = [layer for layer in att_layers if layer]
        ff_layers = (
            [[ff_width for i in layer if i in ff_on]
             for layer in _grouped_layers(list(range(cfg.m_ff)), bp.ff_conns, selected)]
            if ff_on else []
        )
        ff_layers = [layer for layer in ff_layers if layer]
        blocks.append(BlockDescription(
            index=b,
            heads=heads,
            attention_layers=att_layers,
            ff_layers=ff_layers,
            ln_mean=[
                bool(bp.ln_att is None or selected[bp.ln_att] >= 0.5),
                bool(bp.ln_ff is None or selected[bp.ln_ff] >= 0.5),
            ],
            attention_dropped=not retained_heads,
            ff_dropped=not ff_on,
        ))

    baseline = space.init_arch(template, "baseline")
    binary = {
        pid: (1.0 if (v != 0.0 if template.entries[pid].kind == space.SELECTION else v >= 0.5) else 0.0)
        for pid, v in selected.items()
    }
    binary = space.canonicalize(template, binary)
    cost = costmodel.cost_loss(binary, costs, "binary")
    speedup = costmodel.estimate_speedup(binary, costs, baseline)
    return ArchitectureDescription(
        space=cfg,
        blocks=blocks,
        gates={pid: float(v) for pid, v in selected.items()},
        predicted_cost=cost,
        predicted_speedup=speedup.predicted if not speedup.infinite else 0.0,
        speedup_infinite=speedup.infinite,
        provenance=provenance or Provenance(),
    )


def selected_architecture(selected: dict[str, float], template: space.SpaceTemplate,
                          provenance: Provenance | None = None) -> SelectedArchitecture:
    return SelectedArchitecture(
        space=template.config,
        values={pid: float(v) for pid, v in selected.items()},
        provenance=provenance or Provenance(),
    )


def rebuild_network(desc: ArchitectureDescription, checkpoint: dict):
    """Instantiate a runnable network from a description and a weight dump.

    Returns (net, template, gates); the forward under these gates matches
    the pruned one-shot network the description was extracted from.
    """
    template = space.build_space(desc.space)
    net = model.load_weights(checkpoint)
    if net.config != desc.space:
        raise InvalidArchitectureError("checkpoint and description disagree on the space")
    return net, template, dict(desc.gates)


# ---------------------------------------------------------------------------
# DOT rendering
# ---------------------------------------------------------------------------

def _quote(text: str) -> str:
    return '"' + text.replace('"', r"\"") + '"'


def export_dot(desc: ArchitectureDescription) -> str:
    """Deterministic DOT digraph of the selected architecture.

    Nodes are components with their dimensions; edges follow the data
    flow.  Components sharing a residual layer share a rank.  Dropped
    sub-blocks leave only the residual edge.
    """
    lines = [
        "digraph architecture {",
        "  rankdir=TB;",
        "  node [shape=box, fontsize=10];",
        f"  input [label={_quote('input [l x %d]' % desc.space.hidden)}];",
    ]
    prev = "input"
    for block in desc.blocks:
        b = block.index
        # attention sub-block
        if block.attention_layers:
            for layer_idx, layer in enumerate(block.attention_layers):
                ids = []
                for j in layer:
                    head = block.heads[j]
                    node_id = f"b{b}_att_l{layer_idx}_h{j}"
                    kind = "value mean pooling" if head.value_mean_pooling else "attention head"
                    label = f"block {b} {kind} {j} (dk={head.key_dim}, dv={head.value_dim})"
                    lines.append(f"  {node_id} [label={_quote(label)}];")
                    lines.append(f"  {prev} -> {node_id};")
                    ids.append(node_id)
                lines.append("  { rank=same; " + "; ".join(ids) + "; }")
                join = f"b{b}_att_join{layer_idx}"
                lines.append(f"  {join} [label={_quote('add + residual')}, shape=ellipse];")
                for node_id in ids:
                    lines.append(f"  {node_id} -> {join};")
                lines.append(f"  {prev} -> {join} [style=dashed];")
                prev = join
        # dropped attention leaves only the residual edge into the layer norm
        ln1 = f"b{b}_ln_att"
        mean_tag = "zero-mean" if block.ln_mean[0] else "no-mean"
        lines.append(f"  {ln1} [label={_quote(f'block {b} layernorm ({mean_tag})')}, shape=ellipse];")
        lines.append(f"  {prev} -> {ln1};")
        prev = ln1
        # feedforward sub-block
        if block.ff_layers:
            for layer_idx, layer in enumerate(block.ff_layers):
                ids = []
                for pos, width in enumerate(layer):
                    node_id = f"b{b}_ff_l{layer_idx}_s{pos}"
                    label = f"block {b} feedforward (width {width})"
                    lines.append(f"  {node_id} [label={_quote(label)}];")
                    lines.append(f"  {prev} -> {node_id};")
                    ids.append(node_id)
                lines.append("  { rank=same; " + "; ".join(ids) + "; }")
                join = f"b{b}_ff_join{layer_idx}"
                lines.append(f"  {join} [label={_quote('add + residual')}, shape=ellipse];")
                for node_id in ids:
                    lines.append(f"  {node_id} -> {join};")
                lines.append(f"  {prev} -> {join} [style=dashed];")
                prev = join
        ln2 = f"b{b}_ln_ff"
        mean_tag = "zero-mean" if block.ln_mean[1] else "no-mean"
        lines.append(f"  {ln2} [label={_quote(f'block {b} layernorm ({mean_tag})')}, shape=ellipse];")
        lines.append(f"  {prev} -> {ln2};")
        prev = ln2
    lines.append(f"  output [label={_quote('output')}];")
    lines.append(f"  {prev} -> output;")
    if desc.speedup_infinite:
        speed = "inf"
    else:
        speed = f"{desc.predicted_speedup:.3f}x"
    caption = f"predicted cost {desc.predicted_cost:.1f} ({speed} vs baseline)"
    lines.append(f"  label={_quote(caption)};")
    lines.append("}")
    return "\n".join(lines) + "\n"
