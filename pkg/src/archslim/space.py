"""Architecture-parameter space: construction, validation, enumeration.

Each searchable degree of freedom gets one named gate.  Selection gates
keep or drop a sub-component (feedforward slice, similarity slice, value
slice, whole head, layer-norm mean); connection gates pick horizontal or
vertical placement inside a chain.  Value-slice gates are shared across
the heads of a block so every retained head keeps the same value
dimension.  Gate ids are stable strings like ``b0.att.h1.sim0`` so that
emitted files are self-describing.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from . import costmodel
from .errors import ConfigError, InvalidArchitectureError
from .schemas import SearchSpaceConfig

SELECTION = "selection"
CONNECTION = "connection"


@dataclass(frozen=True)
class ParamEntry:
    param_id: str
    kind: str  # selection | connection
    category: str  # cost category this gate is billed against
    block: int
    tie_group: str | None = None


@dataclass
class BlockParams:
    """Gate ids for one transformer block, grouped by role."""

    heads: list[str] = field(default_factory=list)
    sims: list[list[str]] = field(default_factory=list)  # [head][slice]
    values: list[str] = field(default_factory=list)  # [slice], shared across heads
    ff: list[str] = field(default_factory=list)
    att_conns: list[str] = field(default_factory=list)
    ff_conns: list[str] = field(default_factory=list)
    ln_att: str | None = None
    ln_ff: str | None = None


@dataclass
class SpaceTemplate:
    config: SearchSpaceConfig
    entries: dict[str, ParamEntry]
    blocks: list[BlockParams]

    def selection_ids(self) -> list[str]:
        return [pid for pid, e in self.entries.items() if e.kind == SELECTION]

    def connection_ids(self) -> list[str]:
        return [pid for pid, e in self.entries.items() if e.kind == CONNECTION]

    def free_groups(self) -> dict[str, list[str]]:
        """Map each independently-assignable group to its member gate ids."""
        groups: dict[str, list[str]] = {}
        for pid, e in self.entries.items():
            key = e.tie_group if e.tie_group is not None else pid
            groups.setdefault(key, []).append(pid)
        return groups


def build_space(cfg: SearchSpaceConfig) -> SpaceTemplate:
    """Create one gate per searchable degree of freedom of the configuration."""
    if cfg.layers < 1:
        raise ConfigError("need at least one block")
    if cfg.heads > 1 and not cfg.tie_value_slices:
        raise ConfigError(
            "heads with independent value dimensions are excluded from the "
            "search space; value slices must be tied across heads"
        )
    entries: dict[str, ParamEntry] = {}
    blocks: list[BlockParams] = []

    def put(pid: str, kind: str, category: str, block: int, tie: str | None = None):
        entries[pid] = ParamEntry(pid, kind, category, block, tie)

    for b in range(cfg.layers):
        bp = BlockParams()
        for j in range(cfg.heads):
            hid = f"b{b}.att.h{j}"
            put(hid, SELECTION, costmodel.ATTENTION_HEAD, b)
            bp.heads.append(hid)
            sim_ids = []
            for s in range(cfg.m_sim):
                sid = f"b{b}.att.h{j}.sim{s}"
                put(sid, SELECTION, costmodel.QUERY_KEY_SIMILARITY, b)
                sim_ids.append(sid)
            bp.sims.append(sim_ids)
        for v in range(cfg.m_value):
            vid = f"b{b}.att.val{v}"
            put(vid, SELECTION, costmodel.ATTENTION_VALUE, b)
            bp.values.append(vid)
        for j in range(cfg.heads - 1):
            if cfg.allow_vertical_attention:
                cid = f"b{b}.att.conn{j}"
                put(cid, CONNECTION, costmodel.VERTICAL_ATTENTION, b)
                bp.att_conns.append(cid)
        for s in range(cfg.m_ff):
            fid = f"b{b}.ff.s{s}"
            put(fid, SELECTION, costmodel.FEEDFORWARD, b)
            bp.ff.append(fid)
        for s in range(cfg.m_ff - 1):
            cid = f"b{b}.ff.conn{s}"
            put(cid, CONNECTION, costmodel.VERTICAL_FEEDFORWARD, b)
            bp.ff_conns.append(cid)
        if cfg.search_ln_mean:
            bp.ln_att = f"b{b}.ln_att.mean"
            bp.ln_ff = f"b{b}.ln_ff.mean"
            put(bp.ln_att, SELECTION, costmodel.LAYER_NORM_MEAN, b)
            put(bp.ln_ff, SELECTION, costmodel.LAYER_NORM_MEAN, b)
        blocks.append(bp)

    return SpaceTemplate(config=cfg, entries=entries, blocks=blocks)


def init_arch(template: SpaceTemplate, mode: str = "baseline") -> dict[str, float]:
    """Baseline: everything retained, chains horizontal, mean subtraction on.

    Uniform: every gate at probability one half; used to seed the sampling
    policy, never to run a network directly.
    """
    if mode == "baseline":
        return {
            pid: 1.0 if e.kind == SELECTION else 0.0
            for pid, e in template.entries.items()
        }
    if mode == "uniform":
        return {pid: 0.5 for pid in template.entries}
    raise ConfigError(f"unknown init mode {mode!r}")


def enumerate_architectures(template: SpaceTemplate, max_params: int = 20):
    """Yield every binary gate assignment; tied gates move together."""
    groups = template.free_groups()
    if len(groups) > max_params:
        raise ConfigError(
            f"{len(groups)} free parameters exceed the enumeration cap of {max_params}"
        )
    keys = sorted(groups)
    for bits in itertools.product((0.0, 1.0), repeat=len(keys)):
        values: dict[str, float] = {}
        for key, bit in zip(keys, bits):
            for pid in groups[key]:
                values[pid] = bit
        yield values


def is_binary(values: dict[str, float]) -> bool:
    return all(v in (0.0, 1.0) for v in values.values())


def validate_arch(template: SpaceTemplate, values: dict[str, float]) -> None:
    """Reject structurally invalid binary gate assignments."""
    missing = [pid for pid in template.entries if pid not in values]
    if missing:
        raise InvalidArchitectureError(f"missing gates: {missing[:4]}")
    if not is_binary(values):
        bad = [pid for pid, v in values.items() if v not in (0.0, 1.0)]
        raise InvalidArchitectureError(f"non-binary gates: {bad[:4]}")
    groups = template.free_groups()
    for key, members in groups.items():
        vals = {values[m] for m in members}
        if len(vals) > 1:
            raise InvalidArchitectureError(f"tied gates disagree in group {key}")
    for bp in template.blocks:
        heads_on = [h for h in bp.heads if values[h] == 1.0]
        values_on = [v for v in bp.values if values[v] == 1.0]
        if heads_on and not values_on:
            raise InvalidArchitectureError(
                f"retained head(s) {heads_on} have no retained value slices"
            )
    anything = any(values[pid] == 1.0 for pid, e in template.entries.items()
                   if e.kind == SELECTION and e.category != costmodel.LAYER_NORM_MEAN)
    if not anything:
        raise InvalidArchitectureError("empty architecture: every component is dropped")


def canonicalize(template: SpaceTemplate, values: dict[str, float]) -> dict[str, float]:
    """Zero gates that cannot influence the network they describe.

    Similarity slices of a dropped head, value gates of a block with no
    retained heads, and connection gates inside a fully dropped chain are
    all unreachable; zeroing them makes the modeled cost match what the
    network actually computes.
    """
    out = dict(values)
    for bp in template.blocks:
        heads_on = [h for h in bp.heads if out[h] != 0.0]
        for hid, sim_ids in zip(bp.heads, bp.sims):
            if out[hid] == 0.0:
                for sid in sim_ids:
                    out[sid] = 0.0
        if not heads_on:
            for vid in bp.values:
                out[vid] = 0.0
            for cid in bp.att_conns:
                out[cid] = 0.0
        if all(out[fid] == 0.0 for fid in bp.ff):
            for cid in bp.ff_conns:
                out[cid] = 0.0
    return out


def repair(template: SpaceTemplate, values: dict[str, float]) -> dict[str, float]:
    """Make an extracted binary assignment structurally valid.

    A retained head in a block whose value gates are all off cannot
    compute anything; such heads are dropped.  The result is canonical.
    """
    out = dict(values)
    for bp in template.blocks:
        if all(out[v] == 0.0 for v in bp.values):
            for hid in bp.heads:
                out[hid] = 0.0
    return canonicalize(template, out)
