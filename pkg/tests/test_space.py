"""Search-space construction, parameter counts, enumeration, validation."""

import pytest

from archslim import costmodel, space
from archslim.errors import ConfigError, InvalidArchitectureError
from archslim.schemas import SearchSpaceConfig
from archslim.space import ParamEntry, SpaceTemplate


def small_cfg(**overrides):
    base = dict(layers=1, hidden=8, heads=2, ff_dim=16, key_dim=8, value_dim=8,
                m_ff=2, m_sim=2, m_value=2)
    base.update(overrides)
    return SearchSpaceConfig(**base)


class TestBuildSpace:
    def test_single_block_parameter_count(self):
        # 2 heads + 2x2 sim + 2 value groups + 2 ff + 1 ff connection
        # + 1 head connection + 2 layer-norm switches = 14 gates.
        template = space.build_space(small_cfg())
        assert len(template.entries) == 14
        kinds = [e.kind for e in template.entries.values()]
        assert kinds.count(space.SELECTION) == 12
        assert kinds.count(space.CONNECTION) == 2

    def test_gate_roles_per_block(self):
        template = space.build_space(small_cfg(layers=3))
        assert len(template.entries) == 3 * 14
        for bp in template.blocks:
            assert len(bp.heads) == 2
            assert [len(s) for s in bp.sims] == [2, 2]
            assert len(bp.values) == 2
            assert len(bp.ff) == 2
            assert len(bp.ff_conns) == 1
            assert len(bp.att_conns) == 1
            assert bp.ln_att and bp.ln_ff

    def test_atomic_ff_is_one_gate_without_connections(self):
        template = space.build_space(small_cfg(m_ff=1))
        ff_ids = [pid for pid, e in template.entries.items()
                  if e.category == costmodel.FEEDFORWARD]
        conn_ids = [pid for pid, e in template.entries.items()
                    if e.category == costmodel.VERTICAL_FEEDFORWARD]
        assert len(ff_ids) == 1 and not conn_ids

    def test_untied_value_slices_rejected(self):
        with pytest.raises(ConfigError):
            space.build_space(small_cfg(tie_value_slices=False))

    def test_indivisible_dims_rejected(self):
        with pytest.raises(Exception):
            SearchSpaceConfig(layers=1, hidden=8, heads=2, ff_dim=15, key_dim=8,
                              value_dim=8, m_ff=2, m_sim=2, m_value=2)

    def test_vertical_attention_flag(self):
        template = space.build_space(small_cfg(allow_vertical_attention=False))
        assert all(e.category != costmodel.VERTICAL_ATTENTION for e in template.entries.values())

    def test_ln_search_flag(self):
        template = space.build_space(small_cfg(search_ln_mean=False))
        assert all(e.category != costmodel.LAYER_NORM_MEAN for e in template.entries.values())
        assert len(template.entries) == 12


class TestInitArch:
    def test_baseline_everything_on_chains_horizontal(self):
        template = space.build_space(small_cfg())
        values = space.init_arch(template, "baseline")
        for pid, entry in template.entries.items():
            expected = 1.0 if entry.kind == space.SELECTION else 0.0
            assert values[pid] == expected

    def test_uniform_is_half_everywhere(self):
        template = space.build_space(small_cfg())
        values = space.init_arch(template, "uniform")
        assert set(values.values()) == {0.5}

    def test_unknown_mode(self):
        template = space.build_space(small_cfg())
        with pytest.raises(ConfigError):
            space.init_arch(template, "zeros")


class TestEnumerate:
    def test_counts(self):
        cfg = small_cfg(heads=1, m_sim=1, m_value=1, search_ln_mean=False, m_ff=1)
        template = space.build_space(cfg)
        archs = list(space.enumerate_architectures(template))
        # gates: head, sim, value, ff -> 2^4 assignments
        assert len(archs) == 16

    def test_tied_pair_counts_once(self):
        entries = {
            "a": ParamEntry("a", space.SELECTION, costmodel.FEEDFORWARD, 0, tie_group="g"),
            "b": ParamEntry("b", space.SELECTION, costmodel.FEEDFORWARD, 0, tie_group="g"),
            "c": ParamEntry("c", space.SELECTION, costmodel.FEEDFORWARD, 0),
        }
        template = SpaceTemplate(config=small_cfg(), entries=entries, blocks=[])
        archs = list(space.enumerate_architectures(template))
        assert len(archs) == 4
        assert all(a["a"] == a["b"] for a in archs)

    def test_cap_enforced(self):
        template = space.build_space(small_cfg(layers=2))
        with pytest.raises(ConfigError):
            list(space.enumerate_architectures(template, max_params=20))


class TestValidate:
    def test_baseline_is_valid(self):
        template = space.build_space(small_cfg())
        space.validate_arch(template, space.init_arch(template, "baseline"))

    def test_head_without_values_invalid(self):
        template = space.build_space(small_cfg())
        values = space.init_arch(template, "baseline")
        for vid in template.blocks[0].values:
            values[vid] = 0.0
        with pytest.raises(InvalidArchitectureError, match="value slices"):
            space.validate_arch(template, values)

    def test_non_binary_rejected(self):
        template = space.build_space(small_cfg())
        values = space.init_arch(template, "baseline")
        values[template.blocks[0].ff[0]] = 0.5
        with pytest.raises(InvalidArchitectureError, match="non-binary"):
            space.validate_arch(template, values)

    def test_empty_architecture_invalid(self):
        template = space.build_space(small_cfg())
        values = {pid: 0.0 for pid in template.entries}
        with pytest.raises(InvalidArchitectureError, match="empty"):
            space.validate_arch(template, values)

    def test_repair_drops_stranded_heads(self):
        template = space.build_space(small_cfg())
        values = space.init_arch(template, "baseline")
        for vid in template.blocks[0].values:
            values[vid] = 0.0
        repaired = space.repair(template, values)
        assert all(repaired[h] == 0.0 for h in template.blocks[0].heads)
        space.validate_arch(template, repaired)


class TestCanonicalize:
    def test_sims_of_dropped_head_zeroed(self):
        template = space.build_space(small_cfg())
        values = space.init_arch(template, "baseline")
        head0 = template.blocks[0].heads[0]
        values[head0] = 0.0
        canon = space.canonicalize(template, values)
        assert all(canon[sid] == 0.0 for sid in template.blocks[0].sims[0])
        assert all(canon[sid] == 1.0 for sid in template.blocks[0].sims[1])

    def test_value_gates_zeroed_when_attention_empty(self):
        template = space.build_space(small_cfg())
        values = space.init_arch(template, "baseline")
        for hid in template.blocks[0].heads:
            values[hid] = 0.0
        canon = space.canonicalize(template, values)
        assert all(canon[vid] == 0.0 for vid in template.blocks[0].values)
        assert all(canon[cid] == 0.0 for cid in template.blocks[0].att_conns)
