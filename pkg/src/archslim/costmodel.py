"""Offline component profiling and the differentiable cost objective.

Profiling times each component category on the current machine at several
sequence lengths; a category's aggregated cost is the highest one observed
across lengths.  Category costs are divided evenly among the gates billed
against them and normalized so the baseline network (all selection gates
on, all chains horizontal) has total cost 1.0.  Horizontal connections are
free; a vertical connection is billed the extra layer boundary it creates.
"""

from __future__ import annotations

import hashlib
import io
import platform
import time
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable

import numpy as np

from . import components as comp
from . import grad
from .errors import ConfigError
from .grad import Rng
from .schemas import CostProfile, SearchSpaceConfig

if TYPE_CHECKING:
    from .space import SpaceTemplate

FEEDFORWARD = "feedforward"
ATTENTION_HEAD = "attention_head"
QUERY_KEY_SIMILARITY = "query_key_similarity"
ATTENTION_VALUE = "attention_value"
LAYER_NORM_MEAN = "layer_norm_mean"
VERTICAL_FEEDFORWARD = "vertical_feedforward"
VERTICAL_ATTENTION = "vertical_attention"

CATEGORY_LABELS = {
    FEEDFORWARD: "Feedforward",
    ATTENTION_HEAD: "Attention Head",
    QUERY_KEY_SIMILARITY: "Query-Key Similarity",
    ATTENTION_VALUE: "Attention Value",
    LAYER_NORM_MEAN: "Layer Normalization Mean",
    VERTICAL_FEEDFORWARD: "Vertical Feedforward",
    VERTICAL_ATTENTION: "Vertical Attention",
}

DEFAULT_LENGTHS = (32, 128, 512)
WARMUP_RUNS = 3


def _median_time(fn: Callable[[], object], reps: int) -> float:
    for _ in range(WARMUP_RUNS):
        fn()
    times = []
    for _ in range(reps):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return float(np.median(times))


def profile(
    cfg: SearchSpaceConfig,
    lengths=DEFAULT_LENGTHS,
    reps: int = 7,
    rng: Rng | None = None,
    machine: str = "",
) -> CostProfile:
    """Measure per-category forward cost of the configured network.

    Components are timed once per block and scaled by the block count, so
    a category value is the whole network's share.  Vertical connections
    are billed as one extra layer-norm pass (the serialization point a new
    layer introduces).  Profiling must not run concurrently with other
    load; it is strictly sequential by construction.
    """
    if reps < 5:
        raise ConfigError("profiling needs at least 5 repetitions")
    rng = rng or Rng(0)
    h = cfg.hidden
    ff = comp.make_ff_stack(rng.child("ff"), h, cfg.ff_dim, cfg.m_ff, cfg.activation)
    head = comp.make_head(rng.child("head"), h, cfg.key_dim, cfg.value_dim, cfg.m_sim, cfg.m_value)
    ln = comp.make_layer_norm(h)
    scale = 1.0 / np.sqrt(cfg.key_dim)

    measurements: dict[str, dict[int, float]] = {c: {} for c in (
        FEEDFORWARD, ATTENTION_HEAD, QUERY_KEY_SIMILARITY, ATTENTION_VALUE,
        LAYER_NORM_MEAN, VERTICAL_FEEDFORWARD, VERTICAL_ATTENTION,
    )}
    warnings: list[str] = []
    resolution = time.get_clock_info("perf_counter").resolution

    for length in lengths:
        x = grad.leaf(rng.uniform(length, h, -1, 1))
        uniform_attn = grad.constant(np.full((length, length), 1.0 / length))

        def time_category(category: str, fn: Callable[[], object], multiplier: float):
            t = _median_time(fn, reps) * multiplier
            if t < 10.0 * resolution:
                warnings.append(
                    f"{category}@{length}: measured {t:.3e}s is below 10x timer resolution"
                )
            measurements[category][length] = t

        time_category(FEEDFORWARD, lambda: comp.ff_stack_forward(ff, x), cfg.layers)
        time_category(
            ATTENTION_HEAD,
            lambda: comp.head_forward(head, x, sim_scale=scale),
            cfg.layers * cfg.heads,
        )
        time_category(
            QUERY_KEY_SIMILARITY,
            lambda: comp.sim_forward(head.sim_slices, x),
            cfg.layers * cfg.heads,
        )

        def value_path():
            parts = [
                grad.matmul(grad.matmul(uniform_attn, grad.matmul(x, vs.wv)), vs.wo)
                for vs in head.value_slices
            ]
            return grad.node_sum(parts)

        time_category(ATTENTION_VALUE, value_path, cfg.layers * cfg.heads)

        def mean_subtract():
            return grad.add_colvec(x, grad.neg(grad.row_mean(x)))

        time_category(LAYER_NORM_MEAN, mean_subtract, cfg.layers * 2)

        ln_time_mult_ff = cfg.layers * max(cfg.m_ff - 1, 0)
        ln_time_mult_att = cfg.layers * max(cfg.heads - 1, 0)
        ln_forward = lambda: comp.layer_norm_forward(ln, x, mean_gate=1.0)
        time_category(VERTICAL_FEEDFORWARD, ln_forward, max(ln_time_mult_ff, 1))
        time_category(VERTICAL_ATTENTION, ln_forward, max(ln_time_mult_att, 1))

    prof = CostProfile(
        machine=machine or f"{platform.node()} {platform.machine()} py{platform.python_version()}",
        reps=reps,
        lengths=list(lengths),
        measurements=measurements,
        aggregated=aggregate(measurements),
        warnings=warnings,
    )
    prof.profile_id = profile_fingerprint(prof)
    return prof


def aggregate(measurements: dict[str, dict[int, float]]) -> dict[str, float]:
    """Per category, take the highest cost across profiled lengths."""
    out: dict[str, float] = {}
    for category, by_len in measurements.items():
        if not by_len:
            raise ConfigError(f"category {category!r} has no measurements")
        out[category] = max(by_len.values())
    return out


def profile_fingerprint(prof: CostProfile) -> str:
    payload = prof.model_dump_json(exclude={"profile_id"})
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def synthetic_profile(shares: dict[str, float] | None = None) -> CostProfile:
    """A machine-independent profile for reproducible runs and examples.

    Category shares default to the relative weights of a profiled
    transformer encoder where feedforward and attention dominate and the
    mean subtraction and vertical connections are marginal.
    """
    shares = shares or {
        FEEDFORWARD: 43.3,
        ATTENTION_HEAD: 54.9,
        QUERY_KEY_SIMILARITY: 28.9,
        ATTENTION_VALUE: 22.8,
        LAYER_NORM_MEAN: 0.8,
        VERTICAL_FEEDFORWARD: 1.3,
        VERTICAL_ATTENTION: 1.3,
    }
    measurements = {cat: {0: val} for cat, val in shares.items()}
    prof = CostProfile(
        machine="synthetic",
        reps=5,
        lengths=[0],
        measurements=measurements,
        aggregated=aggregate(measurements),
    )
    prof.profile_id = profile_fingerprint(prof)
    return prof


BASELINE_COST = 100.0  # modeled costs are percent of the baseline network


def param_costs(template: "SpaceTemplate", profile: CostProfile) -> dict[str, float]:
    """Distribute category costs over gates; baseline totals 100 units.

    Each category's aggregated cost is split evenly among the gates billed
    to it.  Vertical attention falls back to the vertical feedforward cost
    when it was not profiled separately.  The normalizer is the sum over
    selection gates only (the baseline network carries no vertical
    connections), scaled so the baseline network costs exactly
    ``BASELINE_COST`` units: costs read as percent of baseline, which keeps
    a given cost weight's pressure comparable across machines and puts the
    sweep range the search uses on the scale where its largest values
    rival the task loss.
    """
    agg = dict(profile.aggregated)
    if VERTICAL_ATTENTION not in agg and VERTICAL_FEEDFORWARD in agg:
        agg[VERTICAL_ATTENTION] = agg[VERTICAL_FEEDFORWARD]
    counts: dict[str, int] = {}
    for entry in template.entries.values():
        counts[entry.category] = counts.get(entry.category, 0) + 1
    raw: dict[str, float] = {}
    for pid, entry in template.entries.items():
        if entry.category not in agg:
            raise ConfigError(f"cost profile is missing category {entry.category!r}")
        raw[pid] = agg[entry.category] / counts[entry.category]
    baseline_total = sum(
        c for pid, c in raw.items() if template.entries[pid].kind == "selection"
    )
    if baseline_total <= 0:
        raise ConfigError("baseline cost is zero; profile contains no positive times")
    return {pid: BASELINE_COST * c / baseline_total for pid, c in raw.items()}


def cost_loss(values: dict[str, float], costs: dict[str, float], mode: str = "binary") -> float:
    """Modeled network cost: sum of gate-weighted component costs."""
    if mode == "binary":
        return float(sum(costs[pid] for pid, v in values.items() if v == 1.0))
    if mode == "relaxed":
        return float(sum(abs(v) * costs[pid] for pid, v in values.items()))
    raise ConfigError(f"unknown cost mode {mode!r}")


def cost_loss_node(gates: dict[str, grad.Node], costs: dict[str, float]) -> grad.Node:
    """Graph form of the relaxed cost sum |w_i| * c_i (differentiable in w)."""
    parts = [
        grad.scale(grad.abs_elem(g), costs[pid])
        for pid, g in gates.items()
        if costs.get(pid, 0.0) != 0.0
    ]
    total = grad.node_sum(parts)
    if total is None:
        total = grad.zeros(1, 1)
    return total


@dataclass
class SpeedupEstimate:
    predicted: float
    infinite: bool = False
    measured: float | None = None


def estimate_speedup(
    values: dict[str, float],
    costs: dict[str, float],
    baseline_values: dict[str, float],
) -> SpeedupEstimate:
    """Baseline cost over architecture cost; an empty architecture is flagged."""
    base = cost_loss(baseline_values, costs, "binary")
    if base <= 0:
        raise ConfigError("baseline architecture has zero modeled cost")
    arch = cost_loss(values, costs, "binary")
    if arch <= 0:
        return SpeedupEstimate(predicted=float("inf"), infinite=True)
    return SpeedupEstimate(predicted=base / arch)


def measure_wall_time(fn: Callable[[], object], reps: int = 9) -> float:
    """Median wall time of a forward pass; strictly sequential."""
    return _median_time(fn, reps)


def measured_speedup(baseline_fn: Callable[[], object], selected_fn: Callable[[], object],
                     reps: int = 9) -> float:
    """Wall-time ratio of the baseline forward over the selected forward."""
    base = _median_time(baseline_fn, reps)
    sel = _median_time(selected_fn, reps)
    if sel <= 0:
        raise ConfigError("selected network measured zero time")
    return base / sel


def pearson(xs, ys) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.size != y.size or x.size < 2:
        raise ConfigError("correlation needs two same-length samples")
    return float(np.corrcoef(x, y)[0, 1])


def measurements_csv(profile: CostProfile) -> str:
    """Category-by-length table, one row per component category."""
    buf = io.StringIO()
    lengths = profile.lengths
    buf.write("Component," + ",".join(str(l) for l in lengths) + "\n")
    for category, by_len in profile.measurements.items():
        label = CATEGORY_LABELS.get(category, category)
        cells = ",".join(f"{by_len.get(l, float('nan')):.6g}" for l in lengths)
        buf.write(f"{label},{cells}\n")
    return buf.getvalue()
