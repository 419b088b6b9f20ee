import pytest
from hypothesis import given
from hypothesis import strategies as st

from servesim.hw import nvlink_system
from servesim.model import DEEPSEEK_R1, GPT3, kv_bytes_per_token
from servesim.parallel import (DeploymentPlan, ckv_replication_bytes, default_plan,
                               device_weight_bytes, effective_batch, experts_per_device,
                               heads_per_device, validate_plan)


def test_effective_batch_attention(ds_plan):
    assert effective_batch("attention", 9000, ds_plan, DEEPSEEK_R1) == 282
    one = ds_plan.with_(system=nvlink_system(1), deg_dp=1, deg_ep=1)
    assert effective_batch("attention", 777, one, DEEPSEEK_R1) == 777


def test_effective_batch_expert(ds_plan):
    assert effective_batch("moe_expert", 256, ds_plan, DEEPSEEK_R1) == 8
    assert effective_batch("moe_expert", 256, ds_plan.with_(skew=1.5), DEEPSEEK_R1) == 12


def test_effective_batch_bad_block(ds_plan):
    with pytest.raises(ValueError):
        effective_batch("router", 1, ds_plan, DEEPSEEK_R1)


@given(st.integers(1, 100_000), st.sampled_from([1, 2, 4, 8, 16, 32]))
def test_effective_batch_covers_all(B, dp):
    plan = DeploymentPlan(nvlink_system(32), deg_tp=32 // dp, deg_dp=dp, deg_ep=32)
    r = effective_batch("attention", B, plan, DEEPSEEK_R1)
    assert r * dp >= B
    if B % dp == 0:
        assert r * dp == B


@pytest.mark.parametrize("tp,expected", [(2, 64), (1, 128), (128, 1)])
def test_heads_per_device(tp, expected):
    plan = DeploymentPlan(nvlink_system(128), deg_tp=tp, deg_dp=128 // tp, deg_ep=128)
    assert heads_per_device(plan, DEEPSEEK_R1) == expected


def test_heads_fig_example():
    from servesim.model import MLA, ModelSpec, MoeFfn
    m = ModelSpec("four", 2, 64, 4, 16, MLA(16, 16, 4), MoeFfn(4, 2, 0, 16))
    plan = DeploymentPlan(nvlink_system(2), deg_tp=2, deg_dp=1, deg_ep=2)
    assert heads_per_device(plan, m) == 2


def test_ckv_replicated_under_tp():
    s = nvlink_system(8)
    tp1 = DeploymentPlan(s, 1, 8, 8)
    tp4 = DeploymentPlan(s, 4, 2, 8)
    # same requests per device: 16 requests over 8 DP groups vs 4 requests over 2 groups
    assert ckv_replication_bytes(tp4, DEEPSEEK_R1, 4, 1000) == ckv_replication_bytes(tp1, DEEPSEEK_R1, 16, 1000)
    assert ckv_replication_bytes(tp4, DEEPSEEK_R1, 4, 1000) == 2 * kv_bytes_per_token(DEEPSEEK_R1) * 1000


def test_mha_cache_split_under_tp():
    s = nvlink_system(8)
    tp1 = DeploymentPlan(s, 1, 8, 1)
    tp4 = DeploymentPlan(s, 4, 2, 1)
    full = ckv_replication_bytes(tp1, GPT3, 8, 100)
    assert ckv_replication_bytes(tp4, GPT3, 2, 100) == full / 4


def test_validate_examples(sys32):
    assert validate_plan(DeploymentPlan(sys32, 1, 32, 32), DEEPSEEK_R1) == []
    errs = validate_plan(DeploymentPlan(sys32, 3, 32, 32), DEEPSEEK_R1)
    assert any("n_hd" in e for e in errs) and any("n_acc" in e for e in errs)
    assert validate_plan(DeploymentPlan(sys32, 2, 8, 32), DEEPSEEK_R1)
    assert validate_plan(DeploymentPlan(sys32, 1, 32, 16), DEEPSEEK_R1)


def test_validate_reports_every_violation(sys32):
    errs = validate_plan(DeploymentPlan(sys32, 3, 5, 7, stage="train", skew=0.5, overlap=2),
                         DEEPSEEK_R1)
    assert len(errs) >= 6


def test_tp_must_fit_group():
    s = nvlink_system(16, group_size=8, inter_bw=100e9)
    errs = validate_plan(DeploymentPlan(s, 16, 1, 16), DEEPSEEK_R1)
    assert any("group" in e for e in errs)


def test_default_plans(sys32):
    p = default_plan(DEEPSEEK_R1, sys32)
    assert (p.deg_tp, p.deg_dp, p.deg_ep, p.reorder) == (1, 32, 32, True)
    assert default_plan(DEEPSEEK_R1, sys32, "prefill").reorder is False
    g = default_plan(GPT3, sys32)
    assert (g.deg_tp, g.deg_dp) == (8, 4)


def test_device_weights(ds_plan):
    assert experts_per_device(ds_plan, DEEPSEEK_R1) == 8
    single = default_plan(DEEPSEEK_R1, nvlink_system(1))
    from servesim.model import total_weight_bytes
    assert device_weight_bytes(single, DEEPSEEK_R1) == total_weight_bytes(DEEPSEEK_R1)
    assert device_weight_bytes(ds_plan, DEEPSEEK_R1) < total_weight_bytes(DEEPSEEK_R1) / 10
