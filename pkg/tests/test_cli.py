import json

import pytest

from stokes_source.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_VALIDATION,
    ConfigError,
    build_parser,
    main,
    parse_config_file,
    resolve_settings,
)


def run_cli(args):
    return main(args)


def test_config_file_parsing(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "# benchmark overrides\n"
        "nu = 0.5\n"
        "lambda = 1e-4\n"
        "seed = 7\n"
        "h = 0.3   # coarse\n"
        "out = artifacts\n"
    )
    values = parse_config_file(cfg)
    assert values["nu"] == 0.5
    assert values["lam"] == 1e-4
    assert values["seed"] == 7
    assert values["out"] == "artifacts"


def test_config_file_rejects_unknown_key(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("viscosity = 1.0\n")
    with pytest.raises(ConfigError):
        parse_config_file(cfg)
    cfg.write_text("nu = fast\n")
    with pytest.raises(ConfigError):
        parse_config_file(cfg)


def test_flag_overrides_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("nu = 0.5\ndt = 0.2\n")
    parser = build_parser()
    args = parser.parse_args(["forward", "--config", str(cfg), "--nu", "0.9"])
    solver, extras = resolve_settings(args)
    assert solver.nu == 0.9  # flag wins
    assert solver.dt == 0.2  # file wins over default


def test_invalid_config_exit_code(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("dt = -1\n")
    assert run_cli(["forward", "--config", str(cfg)]) == EXIT_CONFIG


def test_forward_artifacts(tmp_path):
    out = tmp_path / "fresh" / "fwd"  # exercises directory creation
    code = run_cli(
        ["forward", "--example", "1", "--h", "0.3", "--dt", "0.1", "--T", "0.5",
         "--out", str(out)]
    )
    assert code == EXIT_OK
    snapshots = sorted(out.glob("snapshot_*.vtk"))
    assert len(snapshots) == 6  # round(0.5/0.1) steps + initial state
    assert (out / "norm_trace.csv").exists()
    assert (out / "resolved_config.txt").exists()
    assert (out / "final_speed.png").exists()
    header = snapshots[0].read_text().splitlines()
    assert header[0].startswith("# vtk DataFile")
    assert "ASCII" in header[2]
    assert any(line.startswith("CELL_TYPES") for line in header)


def test_forward_default_step_count(tmp_path):
    # the default horizon/step pair rounds to 14 steps: 15 snapshot files
    out = tmp_path / "fwd"
    code = run_cli(["forward", "--example", "1", "--h", "0.3", "--out", str(out)])
    assert code == EXIT_OK
    assert len(list(out.glob("snapshot_*.vtk"))) == 15


def test_reconstruct_contraction_and_roundtrip(tmp_path):
    out1 = tmp_path / "rec1"
    code = run_cli(
        ["reconstruct", "--example", "1", "--h", "0.3", "--dt", "0.1", "--T", "0.5",
         "--delta", "0", "--f0-true", "--k-max", "1", "--out", str(out1)]
    )
    assert code == EXIT_OK
    summary = json.loads((out1 / "summary.json").read_text())
    lam, c = 1e-5, 0.01
    assert abs(summary["final_rel_change"] - lam / (c + lam)) <= 1e-12
    assert (out1 / "err_history.csv").exists()
    assert (out1 / "final_f.vtk").exists()
    assert (out1 / "reconstruction.png").exists()

    # observations written by the first run reproduce the reconstruction
    out2 = tmp_path / "rec2"
    code = run_cli(
        ["reconstruct", "--example", "1", "--h", "0.3", "--dt", "0.1", "--T", "0.5",
         "--delta", "0", "--f0-true", "--k-max", "1",
         "--observations", str(out1 / "observations.bin"), "--out", str(out2)]
    )
    assert code == EXIT_OK
    s1 = json.loads((out1 / "summary.json").read_text())
    s2 = json.loads((out2 / "summary.json").read_text())
    assert s1["final_err"] == s2["final_err"]
    assert s1["J_lambda"] == s2["J_lambda"]
    assert (out1 / "final_f.vtk").read_text() == (out2 / "final_f.vtk").read_text()


def test_reconstruct_tau_infinite_stops_after_one(tmp_path):
    out = tmp_path / "rec"
    code = run_cli(
        ["reconstruct", "--example", "2", "--h", "0.3", "--dt", "0.1", "--T", "0.5",
         "--tau", "inf", "--out", str(out)]
    )
    assert code == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["k"] == 1 and summary["stopped_by"] == "tau"


def test_reconstruct_rejects_mismatched_observations(tmp_path):
    out1 = tmp_path / "a"
    run_cli(["reconstruct", "--example", "1", "--h", "0.3", "--dt", "0.1", "--T", "0.5",
             "--k-max", "1", "--out", str(out1)])
    code = run_cli(
        ["reconstruct", "--example", "1", "--h", "0.5", "--dt", "0.1", "--T", "0.5",
         "--observations", str(out1 / "observations.bin"), "--out", str(tmp_path / "b")]
    )
    assert code == EXIT_CONFIG


def test_sweep_ordering_and_errors(tmp_path):
    out = tmp_path / "sw"
    code = run_cli(
        ["sweep", "--example", "1", "--h", "0.3", "--dt", "0.1", "--T", "0.5",
         "--k-max", "2", "--c-values", "0.002,0.01,0.05", "--out", str(out)]
    )
    assert code == EXIT_OK
    rows = json.loads((out / "sweep.json").read_text())["rows"]
    norms = [r["first_update_norm"] for r in rows]
    # larger c damps the first correction
    assert norms[0] > norms[1] > norms[2]
    assert (out / "sweep.csv").exists()
    assert (out / "sweep.png").exists()

    assert run_cli(["sweep", "--example", "1", "--out", str(out)]) == EXIT_CONFIG
    assert run_cli(["sweep", "--c-values", ",", "--out", str(out)]) == EXIT_CONFIG


def test_sweep_single_value_matches_reconstruct(tmp_path):
    out_r = tmp_path / "rec"
    run_cli(["reconstruct", "--example", "1", "--h", "0.3", "--dt", "0.1", "--T", "0.5",
             "--k-max", "3", "--out", str(out_r)])
    out_s = tmp_path / "sw"
    run_cli(["sweep", "--example", "1", "--h", "0.3", "--dt", "0.1", "--T", "0.5",
             "--k-max", "3", "--c-values", "0.01", "--out", str(out_s)])
    summary = json.loads((out_r / "summary.json").read_text())
    row = json.loads((out_s / "sweep.json").read_text())["rows"][0]
    assert row["final_err"] == summary["final_err"]


def test_counterexample_artifacts(tmp_path):
    out = tmp_path / "ce"
    code = run_cli(
        ["counterexample", "--which", "separated", "--h", "0.15", "--dt", "0.02",
         "--out", str(out)]
    )
    assert code == EXIT_OK
    rep = json.loads((out / "counterexample_separated.json").read_text())
    assert rep["boundary_interior_ratio"] < 0.1
    assert not any(k.startswith("_") for k in rep)
    assert (out / "counterexample_separated.txt").exists()
    assert (out / "counterexample_separated.png").exists()


def test_validate_passes(tmp_path):
    import time

    start = time.time()
    code = run_cli(["validate", "--out", str(tmp_path / "v")])
    elapsed = time.time() - start
    assert code == EXIT_OK
    assert elapsed < 120.0
    assert (tmp_path / "v" / "resolved_config.txt").exists()
    report = json.loads((tmp_path / "v" / "validation.json").read_text())
    assert report["all_ok"]
    assert all(c["ok"] for c in report["checks"])


def test_validate_negative_control(tmp_path):
    code = run_cli(["validate", "--corrupt-gradient", "--out", str(tmp_path / "v")])
    assert code == EXIT_VALIDATION
    report = json.loads((tmp_path / "v" / "validation.json").read_text())
    bad = [c for c in report["checks"] if not c["ok"]]
    assert [c["name"] for c in bad] == ["gradient_vs_fd_rel"]
