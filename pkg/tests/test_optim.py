"""Optimizer behavior: Adam, DO pruning/folding, SDO sampling and gradients."""

import numpy as np
import pytest

from archslim import costmodel, model, optim, space, tasks, training
from archslim.errors import NonFiniteError, TrainingDiverged
from archslim.grad import Rng, evaluate
from archslim.schemas import Hyperparams, SearchSpaceConfig, TaskConfig


def tiny_cfg(**overrides):
    base = dict(layers=1, hidden=8, heads=2, ff_dim=16, key_dim=8, value_dim=8,
                m_ff=2, m_sim=2, m_value=2)
    base.update(overrides)
    return SearchSpaceConfig(**base)


def tiny_task(seed=7, kind="sequence-classification"):
    return tasks.generate_task(TaskConfig(kind=kind, vocab_size=12, seq_len=8,
                                          num_classes=2, seed=seed,
                                          train_size=64, dev_size=32))


class TestAdam:
    def test_minimizes_quadratic(self):
        x = np.array([[5.0]])
        adam = optim.Adam(lr=0.1)
        for _ in range(200):
            adam.step({"x": x}, {"x": 2 * x})
        assert abs(x[0, 0]) < 1e-2

    def test_first_step_magnitude_is_lr(self):
        # With fresh moments the bias-corrected step is lr * sign(gradient).
        x = np.array([[1.0]])
        adam = optim.Adam(lr=0.01)
        adam.step({"x": x}, {"x": np.array([[1e-4]])})
        assert x[0, 0] == pytest.approx(1.0 - 0.01, rel=1e-4)


class TestPolicy:
    def test_saturated_logit_always_keeps(self):
        template = space.build_space(tiny_cfg())
        policy = optim.Policy.create(template, init=20.0)
        values, draws, _ = policy.sample(Rng(0))
        assert all(v == 1.0 for v in values.values())

    def test_fair_coin_at_zero_logit(self):
        template = space.build_space(tiny_cfg())
        policy = optim.Policy.create(template, init=0.0)
        rng = Rng(1)
        total = np.zeros(len(policy.keys))
        n = 4000
        for _ in range(n):
            _, draws, _ = policy.sample(rng)
            total += draws
        freq = total / n
        assert np.all(np.abs(freq - 0.5) < 0.5 * 3 / np.sqrt(n) + 0.02)

    def test_ties_share_draws(self):
        template = space.build_space(tiny_cfg())
        entry = next(iter(template.entries.values()))
        tied = {
            "a": space.ParamEntry("a", space.SELECTION, entry.category, 0, tie_group="g"),
            "b": space.ParamEntry("b", space.SELECTION, entry.category, 0, tie_group="g"),
        }
        tmpl = space.SpaceTemplate(config=template.config, entries=tied, blocks=[])
        policy = optim.Policy.create(tmpl)
        rng = Rng(2)
        for _ in range(20):
            values, _, _ = policy.sample(rng)
            assert values["a"] == values["b"]

    def test_logprob_matches_bernoulli(self):
        template = space.build_space(tiny_cfg(heads=1, m_sim=1, m_value=1, m_ff=1,
                                              search_ln_mean=False))
        policy = optim.Policy.create(template, init=0.3)
        _, draws, logprob = policy.sample(Rng(3))
        p = optim.sigmoid(0.3)
        expected = sum(np.log(p) if d == 1 else np.log(1 - p) for d in draws)
        assert logprob == pytest.approx(expected)

    def test_ml_extraction_tie_keeps(self):
        template = space.build_space(tiny_cfg())
        policy = optim.Policy.create(template, init=0.0)
        assert all(v == 1.0 for v in policy.ml_values().values())
        policy.logits[:] = -1.0
        assert all(v == 0.0 for v in policy.ml_values().values())

    def test_ml_invariant_to_positive_rescaling(self):
        template = space.build_space(tiny_cfg())
        policy = optim.Policy.create(template)
        rng = Rng(4)
        policy.logits[:] = rng.normal(1, len(policy.keys))[0]
        before = policy.ml_values()
        policy.logits[:] *= 7.3
        assert policy.ml_values() == before


class TestScoreFunction:
    def make_policy(self, k, phi):
        entries = {
            f"p{i}": space.ParamEntry(f"p{i}", space.SELECTION, costmodel.FEEDFORWARD, 0)
            for i in range(k)
        }
        template = space.SpaceTemplate(config=tiny_cfg(), entries=entries, blocks=[])
        policy = optim.Policy.create(template)
        policy.logits[:] = phi
        return template, policy

    def test_constant_payoff_null(self):
        # E[(w - p) * const] = 0: the mean estimated gradient over many
        # samples stays within three standard errors of zero.
        k = 4
        rng = Rng(11)
        _, policy = self.make_policy(k, phi=np.array([0.7, -0.4, 1.2, 0.0]))
        n = 100_000
        p = policy.probs()
        draws = rng.bernoulli(np.tile(p, (n, 1))).astype(np.float64)
        grads = (draws - p) * 3.7
        mean = grads.mean(axis=0)
        se = grads.std(axis=0, ddof=1) / np.sqrt(n)
        assert np.all(np.abs(mean) <= 3 * se)

    def test_estimator_matches_enumeration(self):
        # Exact gradient: sum over all w of pi(w) * (w - p) * payoff(w).
        k = 3
        rng = Rng(12)
        template, policy = self.make_policy(k, phi=np.array([0.5, -0.8, 0.2]))
        coef = np.array([0.9, -1.4, 0.6])

        def payoff(bits):
            return 2.0 + float(coef @ bits) + 0.5 * bits[0] * bits[1]

        p = policy.probs()
        exact = np.zeros(k)
        for values in space.enumerate_architectures(template):
            bits = np.array([values[f"p{i}"] for i in range(k)])
            prob = np.prod(np.where(bits > 0.5, p, 1 - p))
            exact += prob * (bits - p) * payoff(bits)

        n = 200_000
        draws = rng.bernoulli(np.tile(p, (n, 1))).astype(np.float64)
        payoffs = (2.0 + draws @ coef + 0.5 * draws[:, 0] * draws[:, 1])[:, None]
        samples = (draws - p) * payoffs
        mean = samples.mean(axis=0)
        se = samples.std(axis=0, ddof=1) / np.sqrt(n)
        assert np.all(np.abs(mean - exact) <= 3 * se)


class TestDOStep:
    def test_zero_cost_weight_trains_gates_from_task_only(self):
        cfg = tiny_cfg()
        task = tiny_task()
        template = space.build_space(cfg)
        costs = costmodel.param_costs(template, costmodel.synthetic_profile())
        hp = Hyperparams(steps=5, cost_weight=0.0, seed=0)
        net = model.build_network(cfg, 12, 2, Rng(0).child("init"))
        state = optim.make_do_state(template, net, hp)
        batch = task.train[:4]
        metrics = optim.do_step(state, batch, costs, hp, task.kind)
        assert metrics["L_total"] == pytest.approx(metrics["L_orig"])
        # gates moved (task gradient flows into them), none snapped
        moved = [pid for pid, g in state.gates.items() if g.value[0, 0] != 1.0 and
                 template.entries[pid].kind == space.SELECTION]
        assert moved

    def test_pure_cost_shrinkage_direction(self):
        # Frozen task loss contribution: with cost pressure only, every
        # selection gate moves toward zero on the first step (Adam makes the
        # first step lr-sized regardless of the gradient's magnitude).
        cfg = tiny_cfg()
        task = tiny_task()
        template = space.build_space(cfg)
        costs = {pid: 10.0 for pid in template.entries}
        hp = Hyperparams(steps=1, cost_weight=1.0, learning_rate=1e-9, seed=0)
        net = model.build_network(cfg, 12, 2, Rng(0).child("init"))
        state = optim.make_do_state(template, net, hp)
        before = state.gate_values()
        optim.do_step(state, task.train[:2], costs, hp, task.kind)
        after = state.gate_values()
        shrunk = sum(
            1 for pid in template.selection_ids() if after[pid] < before[pid]
        )
        assert shrunk >= len(template.selection_ids()) - 1

    def test_divergence_aborts(self):
        cfg = tiny_cfg()
        task = tiny_task()
        template = space.build_space(cfg)
        costs = costmodel.param_costs(template, costmodel.synthetic_profile())
        hp = Hyperparams(steps=1, cost_weight=0.0, seed=0)
        net = model.build_network(cfg, 12, 2, Rng(0).child("init"))
        state = optim.make_do_state(template, net, hp)
        net.out_w.value[:, 0] = 1e308  # force an overflowing logit gap
        net.out_w.value[:, 1] = -1e308
        with pytest.raises((TrainingDiverged, NonFiniteError)):
            optim.do_step(state, task.train[:2], costs, hp, task.kind)


class TestDOPrune:
    def build_state(self, seed=0):
        cfg = tiny_cfg()
        template = space.build_space(cfg)
        hp = Hyperparams(seed=seed)
        net = model.build_network(cfg, 12, 2, Rng(seed).child("init"))
        return optim.make_do_state(template, net, hp), template, net

    def test_threshold_and_rescaling(self):
        state, template, net = self.build_state()
        ff0, ff1 = template.blocks[0].ff
        state.gates[ff0].value[0, 0] = 1e-7
        state.gates[ff1].value[0, 0] = 0.5
        result = optim.do_prune(state, threshold=1e-6)
        assert result.values[ff0] == 0.0
        assert result.values[ff1] == 1.0
        idx = template.blocks[0].ff.index(ff1)
        np.testing.assert_allclose(
            result.net.blocks[0].ff.slices[idx].w2.value,
            0.5 * net.blocks[0].ff.slices[idx].w2.value,
        )

    def test_nothing_pruned_above_threshold(self):
        state, template, _ = self.build_state()
        result = optim.do_prune(state, threshold=1e-6)
        assert all(v != 0.0 for pid, v in result.values.items()
                   if template.entries[pid].kind == space.SELECTION)

    def test_exact_zero_prune_preserves_output_to_association(self):
        # Gates already at exactly zero contribute nothing; removing them
        # plus folding fractional survivors only reorders float products.
        state, template, net = self.build_state(seed=5)
        rng = Rng(19)
        for i, g in enumerate(state.gates.values()):
            if template.entries[g.name].kind == space.SELECTION:
                g.value[0, 0] = [1.0, 0.0, 0.6][i % 3]
            else:
                g.value[0, 0] = 0.0
        relaxed = state.gate_values()
        result = optim.do_prune(state, threshold=1e-6)
        for _ in range(5):
            tokens = rng.integers(0, 12, size=8)
            a = evaluate(model.network_forward(net, template, relaxed, tokens))
            b = evaluate(model.network_forward(result.net, template, result.values, tokens))
            assert np.abs(a - b).max() <= 1e-12

    def test_forward_equivalence_after_fold_in(self):
        # Relaxed gates vs pruned-and-folded network: same function.
        state, template, net = self.build_state(seed=3)
        rng = Rng(9)
        for i, g in enumerate(state.gates.values()):
            entry = template.entries[g.name]
            if entry.kind == space.SELECTION:
                g.value[0, 0] = [0.9, 0.6, 1.3, 1e-9][i % 4]
            else:
                g.value[0, 0] = [0.0, 0.4][i % 2]
        relaxed = {pid: float(g.value[0, 0]) for pid, g in state.gates.items()}
        result = optim.do_prune(state, threshold=1e-6)
        for trial in range(5):
            tokens = rng.integers(0, 12, size=8)
            a = evaluate(model.network_forward(net, template, relaxed, tokens))
            b = evaluate(model.network_forward(result.net, template, result.values, tokens))
            # dropped gates held 1e-9; their removed contribution bounds the gap
            assert np.abs(a - b).max() < 1e-7


class TestSDOStep:
    def test_policy_frozen_during_warmup(self):
        cfg = tiny_cfg()
        task = tiny_task()
        template = space.build_space(cfg)
        costs = costmodel.param_costs(template, costmodel.synthetic_profile())
        hp = Hyperparams(steps=10, policy_warmup_frac=1.0, seed=0)
        net = model.build_network(cfg, 12, 2, Rng(0).child("init"))
        state = optim.make_sdo_state(template, net, hp)
        rng = Rng(1)
        for _ in range(5):
            optim.sdo_step(state, task.train[:2], costs, hp, rng, task.kind)
        assert np.all(state.policy.logits == 0.0)

    def test_freeze_arch_runs_baseline(self):
        cfg = tiny_cfg()
        task = tiny_task()
        template = space.build_space(cfg)
        costs = costmodel.param_costs(template, costmodel.synthetic_profile())
        hp = Hyperparams(steps=1, freeze_arch=True, seed=0)
        net = model.build_network(cfg, 12, 2, Rng(0).child("init"))
        state = optim.make_sdo_state(template, net, hp)
        metrics = optim.sdo_step(state, task.train[:2], costs, hp, Rng(2), task.kind)
        assert metrics["cost_binary"] == pytest.approx(costmodel.BASELINE_COST)
        assert np.all(state.policy.logits == 0.0)

    def test_saturated_policy_with_frozen_lr_is_plain_training(self):
        # Logits saturated at the baseline architecture plus a zero policy
        # learning rate reproduce plain training of the baseline exactly.
        cfg = tiny_cfg()
        task = tiny_task()
        hp = Hyperparams(steps=25, batch_size=4, seed=6, eval_every=25,
                         cost_weight=0.0, policy_lr=0.0, policy_warmup_frac=0.0)
        template = space.build_space(cfg)
        costs = costmodel.param_costs(template, costmodel.synthetic_profile())
        rng = Rng(hp.seed)
        net = model.build_network(cfg, 12, 2, rng.child("init"))
        batch_rng = rng.child("batches")
        policy_rng = rng.child("policy")
        state = optim.make_sdo_state(template, net, hp)
        for key, pid_list in state.policy.groups.items():
            kind = template.entries[pid_list[0]].kind
            idx = state.policy.keys.index(key)
            state.policy.logits[idx] = 37.0 if kind == space.SELECTION else -37.0
        losses = []
        for _ in range(hp.steps):
            batch = tasks.sample_batch(task.train, hp.batch_size, batch_rng)
            metrics = optim.sdo_step(state, batch, costs, hp, policy_rng, task.kind)
            losses.append(metrics["L_orig"])

        baseline = space.init_arch(template, "baseline")
        _, history = training.retrain(baseline, cfg, task, hp)
        assert losses == [r.L_orig for r in history]

    def test_expected_cost_decreases_under_strong_cost_pressure(self):
        cfg = tiny_cfg()
        task = tiny_task()
        template = space.build_space(cfg)
        costs = costmodel.param_costs(template, costmodel.synthetic_profile())
        hp = Hyperparams(steps=150, batch_size=4, seed=8, cost_weight=1e-2,
                         policy_lr=0.01, policy_warmup_frac=0.0)
        rng = Rng(hp.seed)
        net = model.build_network(cfg, 12, 2, rng.child("init"))
        batch_rng, policy_rng = rng.child("batches"), rng.child("policy")
        state = optim.make_sdo_state(template, net, hp)
        start = state.policy.expected_cost(costs)
        for _ in range(hp.steps):
            batch = tasks.sample_batch(task.train, hp.batch_size, batch_rng)
            optim.sdo_step(state, batch, costs, hp, policy_rng, task.kind)
        end = state.policy.expected_cost(costs)
        assert end < start

    def test_sampled_cost_reported(self):
        cfg = tiny_cfg()
        task = tiny_task()
        template = space.build_space(cfg)
        costs = costmodel.param_costs(template, costmodel.synthetic_profile())
        hp = Hyperparams(steps=1, policy_warmup_frac=0.0, seed=0)
        net = model.build_network(cfg, 12, 2, Rng(0).child("init"))
        state = optim.make_sdo_state(template, net, hp)
        metrics = optim.sdo_step(state, task.train[:2], costs, hp, Rng(3), task.kind)
        expected = costmodel.cost_loss(state.last_sample, costs, "binary")
        assert metrics["cost_binary"] == pytest.approx(expected)
        assert metrics["L_total"] == pytest.approx(
            metrics["L_orig"] + hp.cost_weight * expected
        )
