import json

import numpy as np
import pytest

from pcaldp.cli import main
from pcaldp.io import (ConfigError, config_hash, dumps, kernel_from_dict, kernel_to_dict, load_kernel,
                       measure_csv, measure_from_dict, measure_to_dict)
from pcaldp.lattice import Topology, noisy_and, single_site
from pcaldp.measures import product_measure

HALFLINE4 = {"alphabet": 2, "topology": {"kind": "halfline", "L": 4},
             "kernel": {"builtin": "noisy_and", "params": {"base": 0.1, "gain": 0.8}}}


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_kernel_round_trip(tmp_path):
    for k in (noisy_and(Topology.halfline(5)), noisy_and(Topology.torus(2, 3)),
              single_site(Topology.halfline(2), 0.2, 0.9)):
        back = load_kernel(_write(tmp_path / "k.json", kernel_to_dict(k)))
        assert back.neighborhoods == k.neighborhoods
        assert back.shift_invariant_radius == k.shift_invariant_radius
        assert all(np.array_equal(a, b) for a, b in zip(back.tables, k.tables))
        assert back.kernel_id() == k.kernel_id()


def test_builtin_spec_matches_constructor():
    assert kernel_from_dict(HALFLINE4).kernel_id() == noisy_and(Topology.halfline(4)).kernel_id()


def test_non_stochastic_kernel_is_rejected():
    spec = kernel_to_dict(noisy_and(Topology.halfline(3)))
    spec["kernel"]["tables"][1]["rows"]["3"] = [0.1, 0.8]
    with pytest.raises(ConfigError, match="A2 at site 1"):
        kernel_from_dict(spec)
    with pytest.raises(ConfigError):
        kernel_from_dict({**HALFLINE4, "kernel": {"builtin": "nope"}})
    with pytest.raises(ConfigError):
        kernel_from_dict({**HALFLINE4, "alphabet": 3})


def test_measure_round_trip_and_csv():
    mu = product_measure((0, 2), [0.25, 0.75])
    back = measure_from_dict(measure_to_dict(mu))
    assert back.window == mu.window and np.array_equal(back.probs, mu.probs)
    assert measure_csv(mu).splitlines() == ["config,prob", "00,0.0625", "01,0.1875", "10,0.1875", "11,0.5625"]
    with pytest.raises(ConfigError):
        measure_from_dict({"window": [0], "probs": [0.5, 0.6]})


def test_dumps_and_hash_are_canonical():
    assert dumps({"b": 1, "a": np.float64(0.5)}) == '{\n  "a": 0.5,\n  "b": 1\n}\n'
    assert config_hash({"x": 1, "y": [1, 2]}) == config_hash({"y": [1, 2], "x": 1})
    assert config_hash({"x": 1}) != config_hash({"x": 2})


def test_validate_bundled_noisy_and(capsys):
    code, out, _ = _run(capsys, "validate", "--config", "bundled:noisy_and_halfline8")
    report = json.loads(out)
    assert code == 0 and report["violations"] == [] and report["passed"]
    assert report["seed"] == 20240601 and len(report["config_hash"]) == 64


def test_validate_failure_exits_one(tmp_path, capsys):
    cfg = _write(tmp_path / "c.json", {
        "kernel": {"alphabet": 2, "topology": {"kind": "halfline", "L": 2}, "kernel": {"builtin": "identity"}},
        "experiment": {"require_positivity": True}})
    code, out, err = _run(capsys, "validate", "--config", cfg)
    assert code == 1 and "checks failed" in err
    assert {v["assumption"] for v in json.loads(out)["violations"]} == {"A3"}


def test_config_errors_exit_two(tmp_path, capsys):
    assert _run(capsys, "validate", "--config", str(tmp_path / "missing.json"))[0] == 2
    assert _run(capsys, "frobnicate", "--config", "x")[0] == 2
    (tmp_path / "bad.json").write_text("{not json")
    assert _run(capsys, "rate", "--config", str(tmp_path / "bad.json"))[0] == 2
    spec = kernel_to_dict(noisy_and(Topology.halfline(3)))
    spec["kernel"]["tables"][0]["rows"]["0"] = [0.5, 0.4]
    _write(tmp_path / "kernel.json", spec)
    cfg = _write(tmp_path / "c.json", {"kernel": "kernel.json"})
    code, _, err = _run(capsys, "validate", "--config", cfg)
    assert code == 2 and "A2" in err
    big = _write(tmp_path / "big.json", {"kernel": {**HALFLINE4, "topology": {"kind": "halfline", "L": 6}}})
    code, _, err = _run(capsys, "rate", "--config", big, "--cap", "16")
    assert code == 2 and "64" in err


def test_rate_at_stationary(tmp_path, capsys):
    cfg = _write(tmp_path / "c.json", {"kernel": HALFLINE4, "experiment": {"nu": "stationary"}})
    code, out, _ = _run(capsys, "rate", "--config", cfg)
    report = json.loads(out)
    assert code == 0 and report["value"] <= 1e-8 and report["certificate"]["passed"]
    assert report["label"] == "finite truncation"


def test_bounds_noisy_and_halfline8(capsys):
    code, out, _ = _run(capsys, "bounds", "--config", "bundled:noisy_and_halfline8")
    report = json.loads(out)
    assert code == 0 and report["failures"] == []
    alpha = [r["alpha_n"] for r in report["window_table"] if not r["edge_affected"]]
    assert all(b <= a + 1e-12 for a, b in zip(alpha, alpha[1:]))


def test_push_shift_simulate_oracle(capsys):
    code, out, _ = _run(capsys, "push", "--config", "bundled:noisy_and_torus2")
    assert code == 0
    np.testing.assert_allclose(json.loads(out)["measure"]["probs"], [0.01, 0.09, 0.09, 0.81], atol=1e-15)
    code, out, _ = _run(capsys, "shift", "--config", "bundled:noisy_and_halfline12_shift")
    assert code == 0 and json.loads(out)["decay_check"]["passed"]
    code, out, _ = _run(capsys, "simulate", "--config", "bundled:two_state", "--samples", "200")
    assert code == 0 and json.loads(out)["samples"] == 200
    code, out, _ = _run(capsys, "oracle", "stationary", "--config", "bundled:two_state")
    np.testing.assert_allclose(json.loads(out)["probs"], [4 / 7, 3 / 7], atol=1e-15)
    code, out, _ = _run(capsys, "oracle", "occupation", "--config", "bundled:two_state", "--T", "3")
    np.testing.assert_allclose(json.loads(out)["law"], [0.49, 0.33, 0.18, 0.0], atol=1e-15)


def test_csv_output_carries_hash_and_seed(tmp_path, capsys):
    out = tmp_path / "occ.csv"
    code, _, _ = _run(capsys, "simulate", "--config", "bundled:noisy_and_torus2", "--format", "csv",
                      "--seed", "3", "--out", str(out))
    lines = out.read_text().splitlines()
    assert code == 0
    assert lines[0].startswith("# config_hash=") and "seed=3" in lines[0]
    assert lines[1] == "config,count,frequency"
    assert sum(int(line.split(",")[1]) for line in lines[2:]) == 1000


def test_seed_changes_hash_and_output(capsys):
    a = json.loads(_run(capsys, "simulate", "--config", "bundled:noisy_and_torus2", "--seed", "1")[1])
    b = json.loads(_run(capsys, "simulate", "--config", "bundled:noisy_and_torus2", "--seed", "2")[1])
    assert a["config_hash"] != b["config_hash"] and a["counts"] != b["counts"]
