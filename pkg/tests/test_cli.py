import json
import subprocess
import sys

import pytest
import yaml

from gpuiso.cli import main
from gpuiso.errors import ConfigError
from gpuiso.scenario import load_scenario, scenario_from_mapping
from gpuiso.partition import Regime


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def write_yaml(path, doc):
    path.write_text(yaml.safe_dump(doc))
    return str(path)


def test_partitions_nano(capsys):
    code, out, _ = run(capsys, "partitions", "--device", "orin-nano", "--regime", "gc")
    assert code == 0
    assert "GC sizes (SMs): 4, 6, 8" in out
    assert "4 SMs: up to 2 concurrent" in out


def test_partitions_a100_mig(capsys):
    code, out, _ = run(capsys, "partitions", "--device", "a100", "--regime", "mig")
    assert code == 0
    assert "3g (48 SMs): up to 2 concurrent" in out


@pytest.mark.parametrize("plan, code", [("3,3", 0), ("4,4", 2)])
def test_partitions_plan_check(capsys, plan, code):
    assert run(capsys, "partitions", "--device", "a100", "--regime", "mig", "--plan", plan)[0] == code


def test_partitions_agx_four(capsys):
    code, out, _ = run(capsys, "partitions", "--device", "orin-agx", "--regime", "gc", "--plan", "4,4,4,4")
    assert code == 0 and "accepted" in out


def test_unknown_device_exit_2(capsys):
    code, _, err = run(capsys, "partitions", "--device", "tpu")
    assert code == 2 and "unknown device" in err


def test_calibrate_writes_profiles(capsys, tmp_path):
    code, out, _ = run(capsys, "calibrate", "--device", "orin-nano", "--out", str(tmp_path))
    assert code == 0 and "ConvNeXt-Large" in out
    assert (tmp_path / "profiles_orin-nano.yaml").exists()


def test_search_nano_gc(capsys, tmp_path):
    code, out, _ = run(capsys, "search", "--device", "orin-nano", "--regime", "gc", "--out", str(tmp_path))
    assert code == 0
    got = {line.split("\t")[0]: int(line.split("\t")[3]) for line in out.splitlines() if "\t" in line}
    expect = {"ConvNeXt-Base": 35, "ConvNeXt-Large": 18, "MobileNetV2": 79, "ResNet18": 70, "ViT-B-16": 36, "ViT-L-32": 24}
    for model, ims in expect.items():
        assert abs(got[model] - ims) <= 1
    assert (tmp_path / "trace_orin-nano_gc_ResNet18.csv").exists()


def test_search_cap_reached_exits_zero(capsys, tmp_path):
    sc = write_yaml(tmp_path / "s.yaml", {"device": "a100", "models": ["ResNet18"], "out": str(tmp_path / "o"),
                                          "executor": {"latency_ms": 10}, "search": {"cap_multiplier": 1}})
    code, out, _ = run(capsys, "search", "--scenario", sc)
    assert code == 0
    assert "CapReached" in out


def test_search_failed_exit_3(capsys, tmp_path):
    sc = write_yaml(tmp_path / "s.yaml", {"device": "a100", "models": ["ResNet18"], "out": str(tmp_path / "o"),
                                          "executor": {"latency_ms": 2000}})
    assert run(capsys, "search", "--scenario", sc)[0] == 3


def test_bench_then_report(capsys, tmp_path):
    out_dir = tmp_path / "res"
    sc = write_yaml(tmp_path / "s.yaml", {
        "device": "a100", "regime": "mig", "models": ["ViT-B-16"], "out": str(out_dir),
        "adjusted_sweep": {"start": 1, "stop": 76, "step": 15},
        "expect": [{"column": "fixed_timeout_pct", "op": "<=", "value": 0.5}],
    })
    code, out, _ = run(capsys, "bench", "--scenario", sc)
    assert code == 0 and "fixed_ims=76" in out
    stem = "sweep_a100_mig_ViT-B-16_n2"
    for suffix in (".csv", ".meta.json", ".telemetry.csv"):
        assert (out_dir / f"{stem}{suffix}").exists()
    code, out, _ = run(capsys, "report", str(out_dir))
    assert code == 0
    assert "expectations: PASS" in out


def test_bench_is_idempotent(capsys, tmp_path):
    args = ["bench", "--device", "orin-nano", "--regime", "gc", "--model", "ResNet18", "--inferences", "200"]
    run(capsys, *args, "--out", str(tmp_path / "a"))
    run(capsys, *args, "--out", str(tmp_path / "b"))
    for name in ("sweep_orin-nano_gc_ResNet18_n2.csv", "sweep_orin-nano_gc_ResNet18_n2.telemetry.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_report_expectation_violation_exit_5(capsys, tmp_path):
    out_dir = tmp_path / "res"
    run(capsys, "bench", "--device", "orin-nano", "--regime", "gc", "--model", "ConvNeXt-Large",
        "--inferences", "200", "--out", str(out_dir))
    exp = write_yaml(tmp_path / "e.yaml", {"device": "orin-nano", "expect": [
        {"column": "fixed_timeout_pct", "op": "<=", "value": 1.0, "where": {"adjusted_ims": 18}}]})
    code, out, _ = run(capsys, "report", str(out_dir), "--scenario", exp)
    assert code == 5
    assert "fixed_timeout_pct <= 1 violated" in out and "expectations: FAIL" in out


def test_report_malformed_exit_4(capsys, tmp_path):
    (tmp_path / "x.meta.json").write_text(json.dumps({"kind": "sweep", "results": "x.csv"}))
    (tmp_path / "x.csv").write_text("nonsense,header\n1,2\n")
    assert run(capsys, "report", str(tmp_path))[0] == 4
    (tmp_path / "x.meta.json").write_text("{not json")
    assert run(capsys, "report", str(tmp_path))[0] == 4


def test_report_empty_dir_exit_4(capsys, tmp_path):
    assert run(capsys, "report", str(tmp_path))[0] == 4


def test_impact_command(capsys, tmp_path):
    code, out, _ = run(capsys, "impact", "--device", "orin-nano", "--regime", "gc", "--model", "ResNet18",
                       "--sizes", "4,6,8", "--out", str(tmp_path))
    assert code == 0 and out.count("size=") == 3
    assert run(capsys, "report", str(tmp_path))[0] == 0


def test_impact_invalid_size_exit_2(capsys, tmp_path):
    code, _, _ = run(capsys, "impact", "--device", "orin-nano", "--regime", "gc", "--model", "ResNet18",
                     "--sizes", "5", "--out", str(tmp_path))
    assert code == 2


def test_scenario_unknown_key_has_location(tmp_path):
    path = write_yaml(tmp_path / "s.yaml", {"device": "a100", "colour": "red"})
    with pytest.raises(ConfigError, match=r"s.yaml.*colour"):
        load_scenario(path)


def test_scenario_nested_unknown_key(tmp_path):
    path = write_yaml(tmp_path / "s.yaml", {"device": "a100", "search": {"batches": 3}})
    with pytest.raises(ConfigError, match=r"s.yaml.search.*batches"):
        load_scenario(path)


@pytest.mark.parametrize("doc", [{"regime": "mig"}, {"device": "tpu"}, {"device": "a100", "models": ["AlexNet"]},
                                 {"device": "a100", "regime": "green"}, {"device": "a100", "agx_equivalence": "yes"},
                                 {"device": "a100", "expect": [{"column": "x", "op": "~", "value": 1}]}])
def test_scenario_rejects(doc):
    with pytest.raises(ConfigError):
        scenario_from_mapping(doc)


def test_scenario_defaults():
    sc = scenario_from_mapping({"device": "orin-nano", "regime": ["gc", "mps"]})
    assert sc.regimes == (Regime.GC, Regime.MPS)
    assert len(sc.models) == 6 and sc.seed == 0


def test_bad_scenario_file_exit_2(capsys, tmp_path):
    bad = tmp_path / "s.yaml"
    bad.write_text("device: [unclosed")
    assert run(capsys, "search", "--scenario", str(bad))[0] == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "gpuiso", "partitions", "--device", "orin-agx"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "4 SMs: up to 4 concurrent" in proc.stdout
