"""Search-train loops, retraining, grid sweeps, and distillation.

All randomness inside a run derives from the run seed through named child
streams (``init``, ``batches``, ``policy``), so reruns are bit-identical
and the policy sampler cannot perturb the batch order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import costmodel, grad, model, optim, space, tasks
from .errors import ConfigError, InvalidArchitectureError, TrainingDiverged
from .grad import Rng, backward, grad_of
from .schemas import (
    CostProfile,
    DistillConfig,
    GridPoint,
    GridResult,
    Hyperparams,
    MetricRecord,
    SearchSpaceConfig,
)


@dataclass
class TrainedModel:
    """A runnable network: weights plus the gate assignment it was given."""

    template: space.SpaceTemplate
    net: model.NetworkWeights
    gates: dict[str, float]
    kind: str

    def predict(self, tokens: np.ndarray) -> np.ndarray:
        return model.predict(self.net, self.template, self.gates, tokens, self.kind)

    def silver_label(self, tokens: np.ndarray):
        """Teacher output as hard labels only; logits never leave the model."""
        pred = self.predict(tokens)
        if self.kind == "sequence-classification":
            return int(pred[0])
        return pred.astype(np.int64)

    def accuracy(self, examples) -> float:
        return model.accuracy(self.net, self.template, self.gates, examples, self.kind)


@dataclass
class RunResult:
    algorithm: str
    history: list[MetricRecord]
    selected: dict[str, float]
    net: model.NetworkWeights
    template: space.SpaceTemplate
    costs: dict[str, float]
    dev_metric: float
    cost: float
    speedup: costmodel.SpeedupEstimate
    valid: bool
    policy: Optional[optim.Policy] = None
    supernet: Optional[model.NetworkWeights] = None

    def trained_model(self, kind: str) -> TrainedModel:
        return TrainedModel(template=self.template, net=self.net, gates=self.selected, kind=kind)


def _dev_examples(task: tasks.TaskData, cap: int | None = None):
    return task.dev if cap is None else task.dev[:cap]


def resolve_profile(profile: CostProfile | None) -> CostProfile:
    return profile if profile is not None else costmodel.synthetic_profile()


def train_search(
    cfg: SearchSpaceConfig,
    task: tasks.TaskData,
    algorithm: str,
    hp: Hyperparams,
    profile: CostProfile | None = None,
    eval_cap: int | None = 128,
) -> RunResult:
    """Run one-shot search and extract the selected architecture.

    DO extracts by pruning and folding; SDO extracts the maximum-likelihood
    architecture.  Extractions are repaired to structural validity (a head
    left without value slices is dropped); a run whose extraction is still
    invalid (everything dropped) is returned with ``valid=False`` rather
    than raised, so sweeps can report collapse points.
    """
    if algorithm not in ("do", "sdo"):
        raise ConfigError(f"unknown algorithm {algorithm!r}")
    template = space.build_space(cfg)
    prof = resolve_profile(profile)
    costs = costmodel.param_costs(template, prof)
    rng = Rng(hp.seed)
    net = model.build_network(cfg, task.config.vocab_size, task.num_classes, rng.child("init"))
    batch_rng = rng.child("batches")
    policy_rng = rng.child("policy")
    kind = task.kind

    do_state = sdo_state = None
    if algorithm == "do":
        do_state = optim.make_do_state(template, net, hp)
    else:
        sdo_state = optim.make_sdo_state(template, net, hp)

    history: list[MetricRecord] = []
    checkpoint = None
    for step in range(hp.steps):
        batch = tasks.sample_batch(task.train, hp.batch_size, batch_rng)
        try:
            if do_state is not None:
                metrics = optim.do_step(do_state, batch, costs, hp, kind)
            else:
                metrics = optim.sdo_step(sdo_state, batch, costs, hp, policy_rng, kind)
        except TrainingDiverged as exc:
            exc.checkpoint = checkpoint
            raise
        record = MetricRecord(step=step, metric=None, **metrics)
        if (step + 1) % hp.eval_every == 0 or step == hp.steps - 1:
            if hp.freeze_arch:
                gates = space.init_arch(template, "baseline")
            elif do_state is not None:
                gates = do_state.gate_values()
            else:
                gates = optim.extract_ml(sdo_state.policy)
            record.metric = model.accuracy(net, template, gates, _dev_examples(task, eval_cap), kind)
            checkpoint = (step, model.copy_network(net))
        history.append(record)

    if do_state is not None:
        pruned = optim.do_prune(do_state, hp.prune_threshold)
        selected = space.repair(template, pruned.values)
        final_net = pruned.net
        supernet = net
        policy = None
    else:
        selected = space.repair(template, optim.extract_ml(sdo_state.policy))
        final_net = net
        supernet = None
        policy = sdo_state.policy

    try:
        space.validate_arch(template, selected)
        valid = True
    except InvalidArchitectureError:
        # Fractional gates (DO survivors) or a collapsed extraction: count
        # it as valid only if it is runnable and keeps some component.
        nonempty = any(
            selected[pid] != 0.0
            for pid, e in template.entries.items()
            if e.kind == space.SELECTION and e.category != costmodel.LAYER_NORM_MEAN
        )
        valid = is_runnable(template, selected) and nonempty
    dev_metric = model.accuracy(final_net, template, selected, task.dev, kind)
    bin_cost = costmodel.cost_loss(_binary_for_cost(template, selected), costs, "binary")
    speedup = costmodel.estimate_speedup(
        _binary_for_cost(template, selected), costs, space.init_arch(template, "baseline")
    )
    return RunResult(
        algorithm=algorithm,
        history=history,
        selected=selected,
        net=final_net,
        template=template,
        costs=costs,
        dev_metric=dev_metric,
        cost=bin_cost,
        speedup=speedup,
        valid=valid,
        policy=policy,
        supernet=supernet,
    )


def is_runnable(template: space.SpaceTemplate, values: dict[str, float]) -> bool:
    """Weaker than validity: structure is consistent even if mostly empty."""
    for bp in template.blocks:
        heads_on = any(values[h] != 0.0 for h in bp.heads)
        values_on = any(values[v] != 0.0 for v in bp.values)
        if heads_on and not values_on:
            return False
    return True


def _binary_for_cost(template: space.SpaceTemplate, values: dict[str, float]) -> dict[str, float]:
    """Cost view of an extraction that may carry fractional gates (DO)."""
    out = {}
    for pid, v in values.items():
        if template.entries[pid].kind == space.SELECTION:
            out[pid] = 1.0 if v != 0.0 else 0.0
        else:
            out[pid] = 1.0 if v >= 0.5 else 0.0
    return space.canonicalize(template, out)


def retrain(
    selected: dict[str, float],
    cfg: SearchSpaceConfig,
    task: tasks.TaskData,
    hp: Hyperparams,
    eval_cap: int | None = 128,
) -> tuple[TrainedModel, list[MetricRecord]]:
    """Train the selected architecture from scratch with frozen gates.

    Uses the same optimizer settings, step budget, and seed derivation as
    the search run; only the architecture updates are absent.  Fresh
    weights carry no scale to preserve, so fractional structural gates
    left by direct optimization (scaled residual connections, layer-norm
    mean gates) are discretized at one half; component selection gates
    must already be binary.
    """
    template = space.build_space(cfg)
    selected = dict(selected)
    for pid, entry in template.entries.items():
        if pid not in selected:
            raise InvalidArchitectureError(f"selected architecture is missing gate {pid}")
        structural = (entry.kind == space.CONNECTION
                      or entry.category == costmodel.LAYER_NORM_MEAN)
        if structural:
            selected[pid] = 1.0 if selected[pid] >= 0.5 else 0.0
        elif selected[pid] not in (0.0, 1.0):
            raise InvalidArchitectureError(f"selection gate {pid} must be binary for retraining")
    if not any(
        selected[pid] == 1.0
        for pid, e in template.entries.items()
        if e.kind == space.SELECTION and e.category != costmodel.LAYER_NORM_MEAN
    ):
        raise InvalidArchitectureError("refusing to retrain an empty architecture")
    if not is_runnable(template, selected):
        raise InvalidArchitectureError("selected architecture has heads without value slices")

    rng = Rng(hp.seed)
    net = model.build_network(cfg, task.config.vocab_size, task.num_classes, rng.child("init"))
    net.head_scales = model.retained_sim_scales(template, selected)
    batch_rng = rng.child("batches")
    opt = optim.make_adam(hp, hp.learning_rate)
    kind = task.kind
    history: list[MetricRecord] = []
    for step in range(hp.steps):
        batch = tasks.sample_batch(task.train, hp.batch_size, batch_rng)
        loss = model.batch_loss(net, template, selected, batch, kind)
        value = float(loss.value[0, 0])
        if not np.isfinite(value):
            raise TrainingDiverged(step, "non-finite loss during retraining")
        grads = backward(loss)
        leaves = model.weight_leaves(net)
        opt.step(
            {name: node.value for name, node in leaves.items()},
            {name: grad_of(grads, node) for name, node in leaves.items()},
        )
        record = MetricRecord(step=step, L_orig=value, L_cost=0.0, L_total=value,
                              cost_binary=0.0, metric=None)
        if (step + 1) % hp.eval_every == 0 or step == hp.steps - 1:
            record.metric = model.accuracy(net, template, selected, _dev_examples(task, eval_cap), kind)
        history.append(record)
    return TrainedModel(template=template, net=net, gates=dict(selected), kind=kind), history


def train_baseline(cfg: SearchSpaceConfig, task: tasks.TaskData, hp: Hyperparams) -> tuple[TrainedModel, list[MetricRecord]]:
    """Plain training of the full network; the quality reference for sweeps."""
    template = space.build_space(cfg)
    return retrain(space.init_arch(template, "baseline"), cfg, task, hp)


# ---------------------------------------------------------------------------
# grid search
# ---------------------------------------------------------------------------

DEFAULT_DO_GRID = (1e-3,)
DEFAULT_SDO_GRID = (1e-5,)
DEFAULT_POLICY_LR_GRID = (0.01,)
FULL_COST_WEIGHT_GRID = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
FULL_POLICY_LR_GRID = (0.001, 0.01)


def grid_search(
    cfg: SearchSpaceConfig,
    task: tasks.TaskData,
    algorithm: str,
    hp: Hyperparams,
    profile: CostProfile | None = None,
    cost_weight_grid=None,
    policy_lr_grid=None,
    quality_floor: float | None = None,
) -> GridResult:
    """Sweep cost weights (and policy learning rates for SDO).

    Every run derives its own seed from the base seed and its grid
    coordinates, so sweeps are order-independent and parallelizable.  The
    selection rule takes the cheapest run whose dev-metric drop from the
    plain-training baseline stays within the quality floor.
    """
    if cost_weight_grid is None:
        cost_weight_grid = DEFAULT_DO_GRID if algorithm == "do" else DEFAULT_SDO_GRID
    if policy_lr_grid is None:
        policy_lr_grid = DEFAULT_POLICY_LR_GRID
    if not cost_weight_grid or (algorithm == "sdo" and not policy_lr_grid):
        raise ConfigError("grids must be non-empty")
    floor = hp.quality_floor if quality_floor is None else quality_floor

    baseline_model, _ = train_baseline(cfg, task, hp)
    baseline_metric = baseline_model.accuracy(task.dev)

    rows: list[GridPoint] = []
    combos = [
        (lam, nu if algorithm == "sdo" else None)
        for lam in cost_weight_grid
        for nu in (policy_lr_grid if algorithm == "sdo" else (None,))
    ]
    master = Rng(hp.seed)
    for lam, nu in combos:
        run_hp = hp.model_copy(update={
            "cost_weight": lam,
            "policy_lr": nu if nu is not None else hp.policy_lr,
            "seed": master.child(f"grid/{algorithm}/{lam}/{nu}").seed,
        })
        result = train_search(cfg, task, algorithm, run_hp, profile)
        rows.append(GridPoint(
            algorithm=algorithm,
            cost_weight=lam,
            policy_lr=nu,
            metric=result.dev_metric,
            cost=result.cost,
            speedup=None if result.speedup.infinite else result.speedup.predicted,
        ))

    best_index = None
    best_cost = float("inf")
    for i, row in enumerate(rows):
        if baseline_metric - row.metric <= floor and row.cost < best_cost and row.cost > 0:
            best_index = i
            best_cost = row.cost
    return GridResult(
        rows=rows,
        best_index=best_index,
        quality_floor=floor,
        baseline_metric=baseline_metric,
    )


def grid_csv(result: GridResult) -> str:
    lines = ["algorithm,lambda,nu,metric,cost,speedup"]
    for row in result.rows:
        nu = "" if row.policy_lr is None else f"{row.policy_lr:g}"
        speed = "inf" if row.speedup is None else f"{row.speedup:.6f}"
        lines.append(
            f"{row.algorithm},{row.cost_weight:g},{nu},{row.metric:.6f},{row.cost:.6f},{speed}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# distillation
# ---------------------------------------------------------------------------

def ramp_weight(progress_pct: float, start_pct: float = 80.0, end_pct: float = 100.0) -> float:
    """Gold-label weight: 0 until start, linear to 1 at end, 1 afterwards."""
    if start_pct >= end_pct:
        raise ConfigError("ramp start must be below ramp end")
    if not (0.0 <= progress_pct <= 100.0):
        raise ConfigError("progress must be a percentage in [0, 100]")
    if progress_pct <= start_pct:
        return 0.0
    if progress_pct >= end_pct:
        return 1.0
    return (progress_pct - start_pct) / (end_pct - start_pct)


@dataclass
class DistillRecord:
    step: int
    ramp: float
    silver_loss: float
    gold_loss: Optional[float]
    loss: float
    metric: Optional[float] = None


@dataclass
class DistillResult:
    student: TrainedModel
    history: list[DistillRecord]
    dev_metric: float
    selected: Optional[dict[str, float]] = None
    cost: Optional[float] = None


def distill(
    teacher: TrainedModel,
    task: tasks.TaskData,
    dcfg: DistillConfig,
    hp: Hyperparams,
    student_cfg: SearchSpaceConfig | None = None,
    student_gates: dict[str, float] | None = None,
    unlabeled_factor: int = 2,
    eval_cap: int | None = 128,
    algorithm: str | None = None,
    profile: CostProfile | None = None,
) -> DistillResult:
    """Train a student on teacher hard labels, ramping in gold labels.

    The teacher produces argmax labels only.  The loss at every step is
    ``(1 - r) * silver + r * gold`` with ``r`` the ramp weight; before the
    ramp starts the gold term is exactly absent.  Students have no dropout
    to remove, which keeps the full capacity available for matching the
    teacher.  Passing an ``algorithm`` runs architecture search during
    distillation: the search optimizes the distillation mixture instead of
    the gold loss, and the result carries the extracted architecture.
    """
    if teacher.kind != task.kind:
        raise ConfigError(f"teacher was trained for {teacher.kind!r}, task is {task.kind!r}")
    if teacher.net.num_classes != task.num_classes or teacher.net.vocab_size != task.config.vocab_size:
        raise ConfigError("teacher and task disagree on vocabulary or class count")
    if algorithm not in (None, "do", "sdo"):
        raise ConfigError(f"unknown algorithm {algorithm!r}")

    cfg = student_cfg if student_cfg is not None else teacher.net.config
    template = space.build_space(cfg)
    gates = dict(student_gates) if student_gates is not None else space.init_arch(template, "baseline")
    rng = Rng(hp.seed)
    net = model.build_network(cfg, task.config.vocab_size, task.num_classes, rng.child("init"))
    batch_rng = rng.child("batches")
    policy_rng = rng.child("policy")
    kind = task.kind

    do_state = sdo_state = None
    opt = None
    costs = None
    if algorithm == "do":
        do_state = optim.make_do_state(template, net, hp)
        costs = costmodel.param_costs(template, resolve_profile(profile))
    elif algorithm == "sdo":
        sdo_state = optim.make_sdo_state(template, net, hp)
        costs = costmodel.param_costs(template, resolve_profile(profile))
    else:
        opt = optim.make_adam(hp, hp.learning_rate)

    pool_inputs = tasks.generate_unlabeled(task.config, unlabeled_factor * len(task.train))
    silver_pool = [(toks, teacher.silver_label(toks)) for toks in pool_inputs]

    history: list[DistillRecord] = []
    for step in range(hp.steps):
        progress = 100.0 * step / max(hp.steps - 1, 1)
        r = ramp_weight(progress, dcfg.ramp_start_pct, dcfg.ramp_end_pct)
        silver_batch = tasks.sample_batch(silver_pool, hp.batch_size, batch_rng)
        gold_batch = tasks.sample_batch(task.train, hp.batch_size, batch_rng)
        parts: dict[str, float] = {}

        def mixture(step_gates):
            silver = model.batch_loss(net, template, step_gates, silver_batch, kind)
            parts["silver"] = float(silver.value[0, 0])
            if r > 0.0:
                gold = model.batch_loss(net, template, step_gates, gold_batch, kind)
                parts["gold"] = float(gold.value[0, 0])
                return grad.add(grad.scale(silver, 1.0 - r), grad.scale(gold, r))
            return silver

        if do_state is not None:
            metrics = optim.do_step(do_state, None, costs, hp, kind, loss_fn=mixture)
            total_value = metrics["L_orig"]
            gates = do_state.gate_values()
        elif sdo_state is not None:
            metrics = optim.sdo_step(sdo_state, None, costs, hp, policy_rng, kind,
                                     loss_fn=mixture)
            total_value = metrics["L_orig"]
            gates = optim.extract_ml(sdo_state.policy)
        else:
            total = mixture(gates)
            total_value = float(total.value[0, 0])
            if not np.isfinite(total_value):
                raise TrainingDiverged(step, "non-finite distillation loss")
            grads = backward(total)
            leaves = model.weight_leaves(net)
            opt.step(
                {name: node.value for name, node in leaves.items()},
                {name: grad_of(grads, node) for name, node in leaves.items()},
            )
        record = DistillRecord(step=step, ramp=r, silver_loss=parts["silver"],
                               gold_loss=parts.get("gold"), loss=total_value)
        if (step + 1) % hp.eval_every == 0 or step == hp.steps - 1:
            record.metric = model.accuracy(net, template, gates, _dev_examples(task, eval_cap), kind)
        history.append(record)

    selected = None
    cost = None
    if do_state is not None:
        pruned = optim.do_prune(do_state, hp.prune_threshold)
        selected = space.repair(template, pruned.values)
        net = pruned.net
        gates = selected
    elif sdo_state is not None:
        selected = space.repair(template, optim.extract_ml(sdo_state.policy))
        gates = selected
    if selected is not None:
        cost = costmodel.cost_loss(_binary_for_cost(template, selected), costs, "binary")

    student = TrainedModel(template=template, net=net, gates=gates, kind=kind)
    return DistillResult(student=student, history=history,
                         dev_metric=student.accuracy(task.dev),
                         selected=selected, cost=cost)
