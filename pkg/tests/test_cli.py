"""
Tests for the command-line interface
"""
import json

import numpy as np
import pytest

import main
from app.services.error_handler import ConfigError
from app.storage import read_manifest


def run_cli(capsys, tmp_path, *argv):
    code = main.main([*argv, "--out", str(tmp_path)])
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else None)


def test_classify_complete_sharing(capsys, tmp_path):
    code, payload = run_cli(capsys, tmp_path, "classify", "--preset", "complete_sharing", "--g", "0.4,0.4")
    assert code == 0
    assert payload["verdict"] == "stable"
    assert read_manifest(tmp_path / "complete_sharing" / "classify.json")["subcommand"] == "classify"


def test_classify_scalar_with_direction(capsys, tmp_path):
    code, payload = run_cli(
        capsys, tmp_path, "classify", "--preset", "reservation", "--g", "1", "--direction", "0.45,0.40"
    )
    assert code == 0
    assert payload["G"] == pytest.approx([0.45, 0.40])


def test_ambiguous_load_is_rejected():
    with pytest.raises(ConfigError):
        main.resolve_load("0.4", None, 2)
    with pytest.raises(ConfigError):
        main.resolve_load("0.4,0.4", "1,1", 2)
    np.testing.assert_allclose(main.resolve_load("0.5", None, 1), [0.5])


def test_weak_threshold_rayleigh(capsys, tmp_path):
    code, payload = run_cli(
        capsys,
        tmp_path,
        "threshold",
        "--preset",
        "rayleigh_5db",
        "--direction",
        "1",
        "--criterion",
        "weak",
        "--bracket",
        "0.5,1.0",
    )
    assert code == 0
    assert payload["threshold"] == pytest.approx(0.756, abs=0.01)


def test_region_writes_csv_and_boundary(capsys, tmp_path):
    code, summary = run_cli(
        capsys, tmp_path, "region", "--preset", "complete_sharing", "--hi", "0.8", "--step", "0.1", "--workers", "1"
    )
    assert code == 0
    assert summary["cells"] == 81
    run_dir = tmp_path / "complete_sharing"
    lines = (run_dir / "region.csv").read_text().splitlines()
    assert lines[0].startswith("# manifest: ")
    assert len(lines) == 2 + 81
    assert (run_dir / "boundary.csv").exists()


def test_de_trace_csv(capsys, tmp_path):
    code, payload = run_cli(capsys, tmp_path, "de-trace", "--preset", "irsa_mixture", "--g", "0.5", "--start", "zeros")
    assert code == 0
    assert payload["start"] == "zeros"
    header = (tmp_path / "irsa_mixture" / "de_trace.csv").read_text().splitlines()[1]
    assert header == "iteration,q1,P1"


def test_sweep_multipliers(capsys, tmp_path):
    code, payload = run_cli(capsys, tmp_path, "sweep", "--preset", "irsa_mixture", "--multipliers", "0.5:1.0:0.1")
    assert code == 0
    assert payload["points"] == 6


def test_simulate_point(capsys, tmp_path):
    code, payload = run_cli(
        capsys, tmp_path, "simulate", "--preset", "irsa_mixture", "--g", "0.5", "--T", "500", "--trials", "2"
    )
    assert code == 0
    assert payload["trials"] == 2
    assert payload["success"][0] > 0.9


def test_missing_config_exits_2(capsys, tmp_path):
    code, _ = run_cli(capsys, tmp_path, "classify", "--config", str(tmp_path / "absent.json"), "--g", "0.1")
    assert code == 2


def test_bad_config_exits_2(capsys, tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"classes": [{"degrees": {"2": 1.0}}], "receivers": [], "routing": [[1.0]]}))
    code, _ = run_cli(capsys, tmp_path, "classify", "--config", str(path), "--g", "0.1")
    assert code == 2


def test_strict_indeterminate_exits_3(capsys, tmp_path):
    code, _ = run_cli(
        capsys, tmp_path, "classify", "--preset", "irsa_mixture", "--g", "0.88", "--max-iter", "2", "--strict"
    )
    assert code == 3


def test_strict_region_with_indeterminate_cells_exits_3(capsys, tmp_path):
    code, _ = run_cli(
        capsys,
        tmp_path,
        "region",
        "--preset",
        "irsa_mixture",
        "--lo",
        "0.86",
        "--hi",
        "0.9",
        "--step",
        "0.02",
        "--max-iter",
        "2",
        "--workers",
        "1",
        "--strict",
    )
    assert code == 3


def test_indeterminate_without_strict_succeeds(capsys, tmp_path):
    code, payload = run_cli(capsys, tmp_path, "classify", "--preset", "irsa_mixture", "--g", "0.88", "--max-iter", "2")
    assert code == 0
    assert payload["verdict"] == "indeterminate"


def test_domain_error_exits_1(capsys, tmp_path):
    code, _ = run_cli(
        capsys, tmp_path, "threshold", "--preset", "irsa_mixture", "--direction", "1", "--bracket", "0,0.5"
    )
    assert code == 1


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
