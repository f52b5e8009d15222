"""The two one-shot search algorithms plus the shared Adam optimizer.

Direct optimization (DO) relaxes every gate to a real number that scales
its component's output, adds the L1-style cost ``cost_weight * sum(|w| *
c)`` to the loss, and trains gates jointly with the network weights.
Adaptive steps never push a coordinate below the prune threshold on their
own, so after each update any gate whose magnitude falls inside a small
dead zone is snapped to exactly zero (the subgradient of ``|w|`` at zero
is zero, so a snapped gate stays parked until the task loss pulls it
out).  After training, gates below the prune threshold are dropped and
surviving fractional selection gates are folded into the adjacent output
weights.

Sampling distribution optimization (SDO) keeps a Bernoulli logit per free
gate, samples one binary architecture per batch, and updates each logit
with the score-function gradient ``(w - sigmoid(logit)) * L_total``
through its own Adam instance whose learning rate is the policy learning
rate.  The policy stays at its initialization for a warmup fraction of
the run (pure random exploration while the weights adapt to sampling);
without the warmup, the early high-loss phase imprints a uniform
keep-everything bias on every logit.  The maximum-likelihood architecture
is the extraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import costmodel, model
from .errors import TrainingDiverged
from .grad import Node, Rng, backward, grad_of, leaf
from . import grad
from .schemas import Hyperparams
from .space import CONNECTION, SELECTION, SpaceTemplate, canonicalize, init_arch


class Adam:
    """Standard Adam over a dict of named arrays, updated in place."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            m = self._m.setdefault(name, np.zeros_like(p))
            v = self._v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def make_adam(hp: Hyperparams, lr: float) -> Adam:
    return Adam(lr=lr, beta1=hp.adam_beta1, beta2=hp.adam_beta2, eps=hp.adam_eps)


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


# ---------------------------------------------------------------------------
# direct optimization
# ---------------------------------------------------------------------------

@dataclass
class DOState:
    template: SpaceTemplate
    net: model.NetworkWeights
    gates: dict[str, Node]
    opt_theta: Adam
    opt_arch: Adam
    step_count: int = 0

    def gate_values(self) -> dict[str, float]:
        return {pid: float(g.value[0, 0]) for pid, g in self.gates.items()}


def make_do_state(template: SpaceTemplate, net: model.NetworkWeights, hp: Hyperparams) -> DOState:
    baseline = init_arch(template, "baseline")
    gates = {pid: leaf([[v]], pid) for pid, v in baseline.items()}
    return DOState(
        template=template,
        net=net,
        gates=gates,
        opt_theta=make_adam(hp, hp.learning_rate),
        opt_arch=make_adam(hp, hp.arch_learning_rate),
    )


def binary_view(template: SpaceTemplate, values: dict[str, float], threshold: float) -> dict[str, float]:
    """Binarize relaxed gates for cost reporting: selection survives the
    prune threshold, a connection counts as vertical past one half."""
    out = {}
    for pid, v in values.items():
        if template.entries[pid].kind == SELECTION:
            out[pid] = 1.0 if abs(v) >= threshold else 0.0
        else:
            out[pid] = 1.0 if v >= 0.5 else 0.0
    return canonicalize(template, out)


def do_step(state: DOState, batch, costs: dict[str, float], hp: Hyperparams, kind: str,
            loss_fn=None) -> dict:
    """One joint gradient step on L_orig + cost_weight * sum(|w| c).

    ``loss_fn(gates) -> Node`` overrides the default batch cross entropy;
    distillation passes its silver/gold mixture through here so the search
    can run during distillation.
    """
    gates = state.gates
    if loss_fn is None:
        loss_orig = model.batch_loss(state.net, state.template, gates, batch, kind)
    else:
        loss_orig = loss_fn(gates)
    if hp.cost_weight > 0.0 and not hp.freeze_arch:
        cost_node = costmodel.cost_loss_node(gates, costs)
        total = grad.add(loss_orig, grad.scale(cost_node, hp.cost_weight))
    else:
        total = loss_orig
    total_value = float(total.value[0, 0])
    if not np.isfinite(total_value):
        raise TrainingDiverged(state.step_count, "non-finite total loss")
    grads = backward(total)

    leaves = model.weight_leaves(state.net)
    theta_params = {name: node.value for name, node in leaves.items()}
    theta_grads = {name: grad_of(grads, node) for name, node in leaves.items()}
    state.opt_theta.step(theta_params, theta_grads)

    if not hp.freeze_arch:
        arch_params = {pid: g.value for pid, g in gates.items()}
        arch_grads = {pid: grad_of(grads, g) for pid, g in gates.items()}
        state.opt_arch.step(arch_params, arch_grads)
        if hp.cost_weight > 0.0:
            dz = hp.dead_zone
            for g in gates.values():
                if 0.0 < abs(g.value[0, 0]) < dz:
                    g.value[0, 0] = 0.0

    state.step_count += 1
    values = state.gate_values()
    relaxed_cost = costmodel.cost_loss(values, costs, "relaxed")
    bview = binary_view(state.template, values, hp.prune_threshold)
    return {
        "L_orig": float(loss_orig.value[0, 0]),
        "L_cost": relaxed_cost,
        "L_total": float(loss_orig.value[0, 0]) + hp.cost_weight * relaxed_cost,
        "cost_binary": costmodel.cost_loss(bview, costs, "binary"),
    }


@dataclass
class PruneResult:
    values: dict[str, float]
    net: model.NetworkWeights


def do_prune(state: DOState, threshold: float = 1e-6) -> PruneResult:
    """Drop gates below the threshold; fold fractional survivors into weights.

    Selection gates scale their component's output linearly, so a survivor
    ``w`` is equivalent to gate 1 with the component's output projection
    scaled by ``w`` (feedforward second layer, similarity query projection,
    value output rows).  Fractional connection gates survive as scaled
    residual connections; layer-norm mean gates have no adjacent weight to
    absorb them and keep their value.
    """
    folded = model.copy_network(state.net)
    values = state.gate_values()
    out: dict[str, float] = {}
    for pid, v in values.items():
        if abs(v) < threshold:
            out[pid] = 0.0
        elif state.template.entries[pid].kind == CONNECTION:
            out[pid] = v
        else:
            out[pid] = v  # selection: replaced by 1.0 below once folded

    for bp, block in zip(state.template.blocks, folded.blocks):
        for j, hid in enumerate(bp.heads):
            w = out[hid]
            if w not in (0.0, 1.0):
                for vs in block.heads[j].value_slices:
                    vs.wo.value *= w
                out[hid] = 1.0
            for sid, sim in zip(bp.sims[j], block.heads[j].sim_slices):
                ws = out[sid]
                if ws not in (0.0, 1.0):
                    sim.wq.value *= ws
                    out[sid] = 1.0
        for v_idx, vid in enumerate(bp.values):
            wv = out[vid]
            if wv not in (0.0, 1.0):
                for head in block.heads:
                    head.value_slices[v_idx].wo.value *= wv
                out[vid] = 1.0
        for fid, sl in zip(bp.ff, block.ff.slices):
            wf = out[fid]
            if wf not in (0.0, 1.0):
                sl.w2.value *= wf
                out[fid] = 1.0
        # layer-norm mean gates keep their trained value; nothing to fold.
    return PruneResult(values=out, net=folded)


# ---------------------------------------------------------------------------
# sampling distribution optimization
# ---------------------------------------------------------------------------

@dataclass
class Policy:
    """Independent Bernoulli distribution per free gate group."""

    keys: list[str]
    groups: dict[str, list[str]]
    logits: np.ndarray  # [len(keys)]

    @classmethod
    def create(cls, template: SpaceTemplate, init: float = 0.0) -> "Policy":
        groups = template.free_groups()
        keys = sorted(groups)
        return cls(keys=keys, groups=groups, logits=np.full(len(keys), float(init)))

    def probs(self) -> np.ndarray:
        return np.array([sigmoid(x) for x in self.logits])

    def expand(self, draws: np.ndarray) -> dict[str, float]:
        values: dict[str, float] = {}
        for key, bit in zip(self.keys, draws):
            for pid in self.groups[key]:
                values[pid] = float(bit)
        return values

    def sample(self, rng: Rng) -> tuple[dict[str, float], np.ndarray, float]:
        """Draw one architecture; tied gates share a single draw.

        Returns the expanded gate values, the per-group draws, and the
        log-probability of the sample under the current policy.
        """
        p = self.probs()
        draws = rng.bernoulli(p).astype(np.float64)
        logprob = float(np.sum(np.where(draws > 0.5, _log_sigmoid(self.logits), _log_sigmoid(-self.logits))))
        return self.expand(draws), draws, logprob

    def ml_values(self) -> dict[str, float]:
        """Maximum-likelihood architecture: gate on iff its logit is >= 0."""
        return self.expand((self.logits >= 0.0).astype(np.float64))

    def expected_cost(self, costs: dict[str, float]) -> float:
        total = 0.0
        for key, p in zip(self.keys, self.probs()):
            total += p * sum(costs.get(pid, 0.0) for pid in self.groups[key])
        return total


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


def score_gradient(draws: np.ndarray, probs: np.ndarray, payoff: float) -> np.ndarray:
    """Score-function gradient of E[payoff] w.r.t. the Bernoulli logits.

    d/d logit of log pi(w) is (w - p) for each independent coordinate, so
    the single-sample estimator is (w - p) * payoff.  Its expectation over
    w is the exact gradient, and it vanishes in expectation for constant
    payoffs.
    """
    return (draws - probs) * payoff


@dataclass
class SDOState:
    template: SpaceTemplate
    net: model.NetworkWeights
    policy: Policy
    opt_theta: Adam
    opt_phi: Adam
    step_count: int = 0
    last_sample: dict[str, float] = field(default_factory=dict)


def make_sdo_state(template: SpaceTemplate, net: model.NetworkWeights, hp: Hyperparams) -> SDOState:
    return SDOState(
        template=template,
        net=net,
        policy=Policy.create(template, init=hp.policy_init),
        opt_theta=make_adam(hp, hp.learning_rate),
        opt_phi=make_adam(hp, hp.policy_lr),
    )


def sdo_step(state: SDOState, batch, costs: dict[str, float], hp: Hyperparams,
             rng: Rng, kind: str, loss_fn=None) -> dict:
    """Sample one binary architecture for the batch, update weights and policy.

    ``loss_fn(values) -> Node`` overrides the default batch cross entropy
    (used when searching during distillation).
    """
    if hp.freeze_arch:
        values = init_arch(state.template, "baseline")
        draws = probs = None
    else:
        values, draws, _ = state.policy.sample(rng)
        probs = state.policy.probs()
    state.last_sample = values

    if loss_fn is None:
        loss_orig = model.batch_loss(state.net, state.template, values, batch, kind)
    else:
        loss_orig = loss_fn(values)
    l_orig = float(loss_orig.value[0, 0])
    cost_bin = costmodel.cost_loss(values, costs, "binary")
    l_total = l_orig + hp.cost_weight * cost_bin
    if not np.isfinite(l_total):
        raise TrainingDiverged(state.step_count, "non-finite total loss")

    grads = backward(loss_orig)
    leaves = model.weight_leaves(state.net)
    state.opt_theta.step(
        {name: node.value for name, node in leaves.items()},
        {name: grad_of(grads, node) for name, node in leaves.items()},
    )
    if draws is not None and state.step_count >= hp.policy_warmup_steps:
        phi_grad = score_gradient(draws, probs, l_total)
        state.opt_phi.step({"phi": state.policy.logits}, {"phi": phi_grad})

    state.step_count += 1
    return {
        "L_orig": l_orig,
        "L_cost": cost_bin,
        "L_total": l_total,
        "cost_binary": cost_bin,
    }


def extract_ml(policy: Policy) -> dict[str, float]:
    return policy.ml_values()
