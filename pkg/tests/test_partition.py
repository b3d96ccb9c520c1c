import pytest
from hypothesis import given, strategies as st

from gpuiso.devices import ArchClass
from gpuiso.errors import ConfigError, InvalidSize, UnsupportedRegime
from gpuiso.partition import (
    Partition,
    PartitionPlan,
    Regime,
    enumerate_gc_layouts,
    enumerate_gc_plans,
    enumerate_mig_plans,
    gc_layout_plan,
    gc_plan,
    gc_step_rule,
    gc_valid_sizes,
    make_plan,
    mig_instance_counts,
    mig_plan,
    partition_sm_count,
    validate_gc_plan,
    validate_mig_plan,
    validate_plan,
)


@pytest.mark.parametrize(
    "arch, rule",
    [(ArchClass.A6x, (2, 2)), (ArchClass.A7x, (2, 2)), (ArchClass.A8x, (4, 2)), (ArchClass.A90plus, (8, 8))],
)
def test_gc_rules_per_arch(arch, rule):
    r = gc_step_rule(arch)
    assert (r.min_sms, r.step_sms) == rule


def test_nano_gc_sizes(nano):
    assert gc_valid_sizes(nano) == [4, 6, 8]
    assert enumerate_gc_layouts(nano, 4) == 2
    assert enumerate_gc_layouts(nano, 6) == 1
    assert enumerate_gc_layouts(nano, 8) == 1


def test_agx_hosts_four_small_contexts(agx):
    assert enumerate_gc_layouts(agx, 4) == 4
    assert validate_gc_plan(gc_plan(agx, [4, 4, 4, 4]), agx) == []


def test_invalid_gc_size(nano):
    with pytest.raises(InvalidSize):
        enumerate_gc_layouts(nano, 5)
    with pytest.raises(InvalidSize):
        enumerate_gc_layouts(nano, 2)


def test_mig_unsupported_on_orin(nano):
    with pytest.raises(UnsupportedRegime):
        mig_instance_counts(nano)
    assert validate_mig_plan(mig_plan(nano, [1]), nano)


def test_a100_mig_counts(a100):
    assert mig_instance_counts(a100) == {1: 7, 2: 3, 3: 2, 4: 1, 7: 1}


def test_a100_mig_two_by_three_ok_two_by_four_rejected(a100):
    assert validate_mig_plan(mig_plan(a100, [3, 3]), a100) == []
    problems = validate_mig_plan(mig_plan(a100, [4, 4]), a100)
    assert any("oversubscribed" in p for p in problems)


def test_mig_illegal_instance_size(a100):
    assert any("illegal" in p for p in validate_mig_plan(mig_plan(a100, [5]), a100))


def test_mig_memory_share(a100):
    plan = mig_plan(a100, [3, 4])
    assert [p.mem_share for p in plan.partitions] == [3 / 7, 4 / 7]
    assert [p.sms for p in plan.partitions] == [48, 64]
    assert partition_sm_count(plan.partitions[0], a100) == 48


def test_heterogeneous_mig_mix_is_legal(a100):
    assert validate_mig_plan(mig_plan(a100, [4, 2, 1]), a100) == []


def test_gc_oversubscription(nano):
    assert any("oversubscribed" in p for p in validate_gc_plan(gc_plan(nano, [4, 6]), nano))


def test_gc_rule_violation(nano):
    assert any("violates" in p for p in validate_gc_plan(gc_plan(nano, [5]), nano))


def test_gc_layout_plan_limits(nano):
    assert len(gc_layout_plan(nano, 4).partitions) == 2
    with pytest.raises(ConfigError):
        gc_layout_plan(nano, 4, 3)


def test_duplicate_partition_ids(nano):
    plan = PartitionPlan(Regime.GC, (Partition("x", 0, 4, 1.0), Partition("x", 0, 4, 1.0)))
    assert any("duplicate" in p for p in validate_plan(plan, nano))


def test_unpartitioned_plans_span_device(a100):
    assert validate_plan(make_plan(a100, "standalone"), a100) == []
    assert validate_plan(make_plan(a100, "mps"), a100) == []
    bad = PartitionPlan(Regime.MPS, (Partition("gpu", 0, 64, 1.0),))
    assert validate_plan(bad, a100)


def test_make_plan_needs_sizes(a100):
    with pytest.raises(ConfigError):
        make_plan(a100, "mig")


@pytest.mark.parametrize("text, regime", [("MIG", Regime.MIG), ("green", None), ("stand-alone", Regime.StandAlone)])
def test_regime_parse(text, regime):
    if regime is None:
        with pytest.raises(ConfigError):
            Regime.parse(text)
    else:
        assert Regime.parse(text) is regime


def test_every_enumerated_plan_validates(a100, nano, agx):
    plans = list(enumerate_mig_plans(a100))
    assert plans
    for plan in plans:
        assert validate_mig_plan(plan, a100) == []
    for gpu in (a100, nano, agx):
        for plan in enumerate_gc_plans(gpu):
            assert validate_gc_plan(plan, gpu) == []


@given(st.lists(st.sampled_from([1, 2, 3, 4, 7]), min_size=1, max_size=8))
def test_mig_validity_matches_gpc_budget(sizes):
    from gpuiso.devices import get_device

    a100 = get_device("a100")
    ok = validate_mig_plan(mig_plan(a100, sizes), a100) == []
    assert ok == (sum(sizes) <= 7)


@given(st.lists(st.integers(1, 16), min_size=1, max_size=5))
def test_gc_validity_matches_rule_and_budget(sizes):
    from gpuiso.devices import get_device

    agx = get_device("orin-agx")
    ok = validate_gc_plan(gc_plan(agx, sizes), agx) == []
    rule_ok = all(s >= 4 and s % 2 == 0 for s in sizes)
    assert ok == (rule_ok and sum(sizes) <= 16)
