"""Self-check suites: decomposition, connectors, gradients, estimator.

These are the runtime property checks behind the ``verify`` command and
endpoint.  Each check recomputes its expectation from an independent dense
formulation (plain numpy, no graph machinery) and compares the package's
gated/sliced implementations against it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import components as comp
from . import connectors as conn
from . import costmodel, grad, model, space
from .grad import Rng, evaluate, finite_difference_check, leaf
from .schemas import SearchSpaceConfig


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def _softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _gelu(x):
    c = np.sqrt(2.0 / np.pi)
    return 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x**3)))


def check_decomposition(tolerance: float = 1e-9) -> CheckResult:
    """Slice sums must match the undecomposed dense components."""
    worst = 0.0
    for m in (2, 4, 8):
        for rows in (1, 4, 16):
            h = max(8, m)
            rng = Rng(1000 * m + rows)
            x = rng.uniform(rows, h, -1, 1)
            xn = leaf(x)

            stack = comp.make_ff_stack(rng.child("ff"), h, 4 * h, m)
            w1 = np.hstack([s.w1.value for s in stack.slices])
            b1 = np.hstack([s.b1.value for s in stack.slices])
            w2 = np.vstack([s.w2.value for s in stack.slices])
            want = _gelu(x @ w1 + b1) @ w2 + stack.b2.value
            got = evaluate(comp.ff_stack_forward(stack, xn))
            worst = max(worst, float(np.abs(got - want).max()))

            head = comp.make_head(rng.child("head"), h, h, h, m, m)
            wq = np.hstack([s.wq.value for s in head.sim_slices])
            wk = np.hstack([s.wk.value for s in head.sim_slices])
            want = (x @ wq) @ (x @ wk).T
            got = evaluate(comp.sim_forward(head.sim_slices, xn))
            worst = max(worst, float(np.abs(got - want).max()))

            wv = np.hstack([s.wv.value for s in head.value_slices])
            wo = np.vstack([s.wo.value for s in head.value_slices])
            scale = 1.0 / np.sqrt(h)
            attn = _softmax(((x @ wq) @ (x @ wk).T) * scale)
            want = (attn @ (x @ wv)) @ wo
            got = evaluate(comp.head_forward(head, xn, sim_scale=scale))
            worst = max(worst, float(np.abs(got - want).max()))

    rng = Rng(999)
    h, dk, dv = 8, 4, 4
    heads = [comp.make_head(rng.child(f"h{i}"), h, dk, dv, 1, 1) for i in range(2)]
    x = rng.uniform(6, h, -1, 1)
    scale = 1.0 / np.sqrt(dk)
    pooled = []
    for hd in heads:
        attn = _softmax(((x @ hd.sim_slices[0].wq.value) @ (x @ hd.sim_slices[0].wk.value).T) * scale)
        pooled.append(attn @ (x @ hd.value_slices[0].wv.value))
    wo_full = np.vstack([hd.value_slices[0].wo.value for hd in heads])
    want = np.hstack(pooled) @ wo_full
    got = evaluate(comp.multihead_forward(heads, leaf(x), sim_scale=scale))
    worst = max(worst, float(np.abs(got - want).max()))

    return CheckResult("decomposition", worst < tolerance, f"max abs diff {worst:.3e}")


def check_connectors(tolerance: float = 1e-9) -> CheckResult:
    """Horizontal chains equal residual components; gate layouts stack layers."""
    worst = 0.0
    rng = Rng(7)
    h = 8
    x = rng.uniform(5, h, -1, 1)
    xn = leaf(x)

    stack = comp.make_ff_stack(rng.child("ff"), h, 4 * h, 4)
    units = [
        (lambda sl: (lambda s: comp.ff_slice_forward(sl, s, stack.activation)))(sl)
        for sl in stack.slices
    ]
    got = evaluate(conn.chain_forward(units, [0.0] * 3, xn))
    w1 = np.hstack([s.w1.value for s in stack.slices])
    b1 = np.hstack([s.b1.value for s in stack.slices])
    w2 = np.vstack([s.w2.value for s in stack.slices])
    want = x + _gelu(x @ w1 + b1) @ w2
    worst = max(worst, float(np.abs(got - want).max()))

    heads = [comp.make_head(rng.child(f"h{i}"), h, 4, 4, 1, 1) for i in range(2)]
    scale = 0.5
    units = [
        (lambda hd: (lambda s: comp.head_forward(hd, s, sim_scale=scale)))(hd)
        for hd in heads
    ]
    got = evaluate(conn.chain_forward(units, [0.0], xn))
    total = x.copy()
    for hd in heads:
        attn = _softmax(((x @ hd.sim_slices[0].wq.value) @ (x @ hd.sim_slices[0].wk.value).T) * scale)
        total = total + (attn @ (x @ hd.value_slices[0].wv.value)) @ hd.value_slices[0].wo.value
    worst = max(worst, float(np.abs(got - total).max()))

    # five units with gates (0, 0, 1, 0): two residual layers of 3 and 2
    mats = [rng.normal(h, h, 0.4) for _ in range(5)]
    fs = [(lambda m: (lambda s: grad.gelu(grad.matmul(s, leaf(m)))))(m) for m in mats]
    got = evaluate(conn.chain_forward(fs, [0.0, 0.0, 1.0, 0.0], xn))
    layer1 = x + sum(_gelu(x @ m) for m in mats[:3])
    layer2 = layer1 + sum(_gelu(layer1 @ m) for m in mats[3:])
    worst = max(worst, float(np.abs(got - layer2).max()))

    return CheckResult("connectors", worst < tolerance, f"max abs diff {worst:.3e}")


def check_gradients(tolerance: float = 1e-5) -> CheckResult:
    """Finite-difference agreement for network weights and relaxed gates."""
    cfg = SearchSpaceConfig(layers=1, hidden=8, heads=2, ff_dim=16, key_dim=8,
                            value_dim=8, m_ff=2, m_sim=2, m_value=2)
    template = space.build_space(cfg)
    rng = Rng(21)
    net = model.build_network(cfg, 8, 3, rng.child("init"))
    gates = {pid: leaf([[v if v > 0 else 0.4]], pid)
             for pid, v in space.init_arch(template, "baseline").items()}
    tokens = rng.integers(0, 8, size=6)

    def build():
        logits = model.task_logits(net, template, gates, tokens, "sequence-classification")
        return model.cross_entropy(logits, np.array([1]))

    leaves = model.weight_leaves(net)
    targets = [leaves["embed"], leaves["b0.att.h0.sim0.wq"], leaves["b0.att.h1.val1.wo"],
               leaves["b0.ff.s0.w1"], leaves["b0.ff.b2"], leaves["b0.ln_att.alpha"],
               leaves["out_w"]]
    targets += [gates[template.blocks[0].heads[0]], gates[template.blocks[0].ff[1]],
                gates[template.blocks[0].ff_conns[0]], gates[template.blocks[0].ln_ff]]
    worst = 0.0
    for t in targets:
        report = finite_difference_check(build, t, step=1e-5, tolerance=tolerance)
        worst = max(worst, report.max_rel_err)
        if not report.passed:
            return CheckResult("gradients", False, f"{t.name}: {report}")
    return CheckResult("gradients", True, f"max rel err {worst:.3e}")


def check_estimator(samples: int = 40_000) -> CheckResult:
    """Score-function gradient agrees with exact enumeration within noise."""
    k = 4
    entries = {
        f"p{i}": space.ParamEntry(f"p{i}", space.SELECTION, costmodel.FEEDFORWARD, 0)
        for i in range(k)
    }
    cfg = SearchSpaceConfig()
    template = space.SpaceTemplate(config=cfg, entries=entries, blocks=[])
    rng = Rng(33)
    phi = np.array([0.6, -0.9, 0.1, 1.3])
    coef = np.array([1.2, -0.7, 0.4, 0.9])
    p = 1.0 / (1.0 + np.exp(-phi))

    exact = np.zeros(k)
    for values in space.enumerate_architectures(template):
        bits = np.array([values[f"p{i}"] for i in range(k)])
        prob = float(np.prod(np.where(bits > 0.5, p, 1 - p)))
        payoff = 1.5 + float(coef @ bits)
        exact += prob * (bits - p) * payoff

    draws = rng.bernoulli(np.tile(p, (samples, 1))).astype(np.float64)
    payoffs = (1.5 + draws @ coef)[:, None]
    grads = (draws - p) * payoffs
    mean = grads.mean(axis=0)
    se = grads.std(axis=0, ddof=1) / np.sqrt(samples)
    deviations = np.abs(mean - exact) / se
    passed = bool(np.all(deviations <= 3.0))
    return CheckResult("estimator", passed, f"max deviation {deviations.max():.2f} standard errors")


def run_all() -> list[CheckResult]:
    return [
        check_decomposition(),
        check_connectors(),
        check_gradients(),
        check_estimator(),
    ]
