import dataclasses
import itertools

import pytest
from hypothesis import given, strategies as st

from gpuiso.errors import CalibrationError, ConfigError, DomainError
from gpuiso.workload import (
    LARGE_MODELS,
    MODELS,
    AnchorConfig,
    ImsAnchor,
    ModelProfile,
    anchor_allocation,
    anchor_table,
    anchors_for,
    calibrate_profile,
    default_switch_cost,
    design_rate,
    dump_profiles,
    latency_from_ims,
    load_profiles,
    predict_latency,
    profiles_for,
)


def _ims(model, platform, config):
    (a,) = [a for a in anchor_table() if (a.model, a.platform, a.config) == (model, platform, config)]
    return a.ims


def test_anchor_table_size():
    rows = anchor_table()
    assert len(rows) == 36
    assert len({(a.model, a.platform, a.config) for a in rows}) == 36


@pytest.mark.parametrize(
    "model, platform, config, ims",
    [
        ("ConvNeXt-Large", "A100", AnchorConfig.Mig3g, 52),
        ("ResNet18", "Nano", AnchorConfig.Gc4sm, 70),
        ("MobileNetV2", "A100", AnchorConfig.FullGpu, 147),
        ("ViT-B-16", "A100", AnchorConfig.Mig3g, 76),
        ("MobileNetV2", "Nano", AnchorConfig.Gc4sm, 79),
        ("ConvNeXt-Base", "A100", AnchorConfig.Mps, 61),
    ],
)
def test_anchor_values(model, platform, config, ims):
    assert _ims(model, platform, config) == ims


@pytest.mark.parametrize("ims, latency", [(52, 0.019230769), (1, 1.0), (147, 0.006802721)])
def test_latency_from_ims(ims, latency):
    assert latency_from_ims(ims) == pytest.approx(latency, rel=1e-7)


@pytest.mark.parametrize("ims", [0, -3])
def test_latency_from_ims_domain(ims):
    with pytest.raises(DomainError):
        latency_from_ims(ims)


def test_anchor_allocations(a100, nano):
    assert anchor_allocation(AnchorConfig.FullGpu, a100) == (112, 1.0)
    assert anchor_allocation(AnchorConfig.Mig3g, a100) == (48, 3 / 7)
    assert anchor_allocation(AnchorConfig.Gc4sm, nano) == (4, 1.0)


def test_design_rate_sits_inside_the_integer_interval():
    for ims in range(1, 300):
        r = design_rate(ims)
        assert ims < r < ims + 1
        assert abs(r / ims - 1) <= 0.02


@pytest.mark.parametrize("device, platform", [("a100", "A100"), ("orin-nano", "Nano")])
def test_round_trip_every_anchor(device, platform):
    from gpuiso.devices import get_device

    gpu = get_device(device)
    profiles = profiles_for(gpu)
    for a in anchor_table():
        if a.platform != platform:
            continue
        sms, bw = anchor_allocation(a.config, gpu)
        rate = 1.0 / predict_latency(profiles[a.model], sms, None, bw)
        assert 0.98 * a.ims <= rate <= 1.02 * a.ims, a
        # the predicted worst case must still admit the measured integer rate
        assert rate >= a.ims


def test_convnext_large_a100_saturates_by_48_sms(a100):
    p = profiles_for(a100)["ConvNeXt-Large"]
    assert p.sm_saturation <= 48


def test_convnext_large_nano_uses_every_sm(nano):
    assert profiles_for(nano)["ConvNeXt-Large"].sm_saturation == 8


@pytest.mark.parametrize("model", ["ConvNeXt-Large", "ViT-L-32"])
def test_compute_bound_signature(a100, model):
    p = profiles_for(a100)[model]
    at48 = 1 / predict_latency(p, 48)
    at112 = 1 / predict_latency(p, 112)
    assert at48 == pytest.approx(at112, rel=0.02)


@pytest.mark.parametrize("model", MODELS)
def test_nano_drop_at_four_sms(nano, model):
    p = profiles_for(nano)[model]
    assert 1 / predict_latency(p, 4) < 1 / predict_latency(p, 8)


def test_saturation_clamp(a100):
    p = profiles_for(a100)["ResNet18"]
    s = p.sm_saturation
    assert predict_latency(p, s) == predict_latency(p, 2 * s)


@pytest.mark.parametrize("device", ["a100", "orin-nano", "orin-agx"])
def test_monotone_over_grid(device):
    from gpuiso.devices import get_device

    gpu = get_device(device)
    freqs = [gpu.f_min_hz + (gpu.f_max_hz - gpu.f_min_hz) * i / 6 for i in range(7)]
    sms = range(1, gpu.total_sms + 1)
    bws = [0.1, 0.25, 3 / 7, 0.5, 0.75, 1.0]
    for p in profiles_for(gpu).values():
        for f, b in itertools.product(freqs, bws):
            lat = [predict_latency(p, s, f, b) for s in sms]
            assert all(x >= y for x, y in zip(lat, lat[1:]))
        for s, b in itertools.product([1, 4, gpu.total_sms], bws):
            lat = [predict_latency(p, s, f, b) for f in freqs]
            assert all(x >= y for x, y in zip(lat, lat[1:]))
        for s, f in itertools.product([1, 4, gpu.total_sms], freqs):
            lat = [predict_latency(p, s, f, b) for b in bws]
            assert all(x >= y for x, y in zip(lat, lat[1:]))


@pytest.mark.parametrize(
    "kwargs",
    [dict(sms=0), dict(sms=4, bw_share=0.0), dict(sms=4, bw_share=1.5), dict(sms=4, freq_hz=1e12), dict(sms=4, freq_hz=1.0)],
)
def test_predict_latency_domain(nano, kwargs):
    p = profiles_for(nano)["ResNet18"]
    with pytest.raises(DomainError):
        predict_latency(p, **kwargs)


def test_frequency_scales_compute_only(nano):
    p = profiles_for(nano)["ConvNeXt-Large"]
    half = predict_latency(p, 4, nano.f_max_hz / 2)
    assert half == pytest.approx(2 * p.compute_work / 4)


def test_single_anchor_is_rejected(a100):
    with pytest.raises(CalibrationError):
        calibrate_profile([ImsAnchor("ResNet18", "A100", AnchorConfig.FullGpu, 129)], a100)


def test_unfittable_anchors_report_residual(nano):
    # more SMs and a much lower rate: no non-increasing roofline fits
    anchors = [
        ImsAnchor("ResNet18", "Nano", AnchorConfig.FullGpu, 10),
        ImsAnchor("ResNet18", "Nano", AnchorConfig.Gc4sm, 100),
    ]
    with pytest.raises(CalibrationError) as err:
        calibrate_profile(anchors, nano)
    assert err.value.residual > 0.02


def test_calibration_is_deterministic(nano):
    anchors = anchors_for("ViT-B-16", "Nano")
    assert calibrate_profile(anchors, nano) == calibrate_profile(anchors, nano)


def test_agx_profiles_match_nano_at_pinned_clock(nano, agx):
    # same absolute clock, same 4 SMs: compute time carries over unchanged
    for model in MODELS:
        pn = profiles_for(nano)[model]
        pa = profiles_for(agx)[model]
        assert pa.compute_work / (4 * 1.02e9 / agx.f_max_hz) == pytest.approx(pn.compute_work / 4)
        assert pa.mem_work == pytest.approx(pn.mem_work / 3)


def test_switch_cost_defaults():
    for m in MODELS:
        assert default_switch_cost(m) == (0.5e-3 if m in LARGE_MODELS else 0.1e-3)


def test_profile_invariants():
    with pytest.raises(ConfigError):
        ModelProfile("x", "A100", 0.0, 0.0, 4, 0.0, 1e9, 1e8)
    with pytest.raises(ConfigError):
        ModelProfile("x", "A100", 1.0, -1.0, 4, 0.0, 1e9, 1e8)


def test_profile_file_round_trip(tmp_path, a100):
    profiles = profiles_for(a100)
    path = tmp_path / "p.yaml"
    dump_profiles(profiles.values(), path)
    assert load_profiles(path) == profiles


def test_profile_file_unknown_key(tmp_path, a100):
    rec = dataclasses.asdict(profiles_for(a100)["ResNet18"])
    rec["flops"] = 1
    import yaml

    path = tmp_path / "p.yaml"
    path.write_text(yaml.safe_dump({"ResNet18": rec}))
    with pytest.raises(ConfigError, match="flops"):
        load_profiles(path)


@given(st.integers(1, 112), st.integers(1, 112), st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_latency_non_increasing_in_resources(s1, s2, b1, b2):
    from gpuiso.devices import get_device

    p = profiles_for(get_device("a100"))["ViT-B-16"]
    lo_s, hi_s = sorted((s1, s2))
    lo_b, hi_b = sorted((b1, b2))
    assert predict_latency(p, hi_s, None, hi_b) <= predict_latency(p, lo_s, None, lo_b)
