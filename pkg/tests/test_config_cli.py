import numpy as np
import pytest

from etsync.cli import (EXIT_OK, EXIT_PARSE, EXIT_VALIDATION, EXIT_VERIFY,
                        main)
from etsync.config import load_config, parse_config
from etsync.errors import (LambdaOutOfRange, NotStronglyConnected, ParseError,
                           ValidationError)

PAIR_TEMPLATE = """\
format = 1

[graph]
weights = [[0.0, 1.0], [1.0, 0.0]]

[reference_model]
A = [[0.0, -1.0], [1.0, 0.0]]
B = [0.0, 1.0]
c = [1.0, 0.0]

[consensus]
lambda = 0.5
g = [1.0, 1.0]
eta_i = [0.05, 0.05]
eta = 0.05
phi = 0.05
unchecked = false

[sim]
horizon = 0.5
step = 0.0009765625

[agents.1]
model = "benchmark"
w = 0.5
z0 = [0.1, -0.05]
x0 = [0.2]
kappa = "cubic"
gamma0 = 40.0
c_frac = 0.99

[agents.2]
model = "benchmark"
w = -0.3
z0 = [-0.1, 0.1]
x0 = [-0.2]
kappa = "cubic"
gamma0 = 40.0
c_frac = 0.99
"""


# --- parsing and validation ---------------------------------------------------

def test_bundled_scenarios_parse(scenario_dir):
    for name in ("ring4.toml", "ring4_consensus.toml", "ring4_checked.toml"):
        scn = load_config(scenario_dir / name)
        assert scn.graph.n == 4
    full = load_config(scenario_dir / "ring4.toml")
    assert full.design.unchecked and full.design.beta == 2.5
    assert len(full.plants) == 4
    checked = load_config(scenario_dir / "ring4_checked.toml")
    assert not checked.design.unchecked and checked.design.varphi < 1.0


def test_pair_template_parses():
    scn = parse_config(PAIR_TEMPLATE)
    assert scn.graph.n == 2 and len(scn.plants) == 2


def test_malformed_toml_is_parse_error():
    with pytest.raises(ParseError):
        parse_config("format = 1\n[graph\nweights = 3")


def test_missing_field_names_section_and_key():
    broken = PAIR_TEMPLATE.replace("phi = 0.05\n", "")
    with pytest.raises(ParseError, match=r"phi.*\[consensus\]|\[consensus\].*phi"):
        parse_config(broken)


def test_format_version_guard():
    with pytest.raises(ValidationError, match="format"):
        parse_config(PAIR_TEMPLATE.replace("format = 1", "format = 2"))


def test_nonzero_diagonal_rejected():
    bad = PAIR_TEMPLATE.replace("[[0.0, 1.0], [1.0, 0.0]]",
                                "[[0.5, 1.0], [1.0, 0.0]]")
    with pytest.raises(ValidationError, match="self-loop"):
        parse_config(bad)


def test_disconnected_graph_rejected():
    bad = PAIR_TEMPLATE.replace("[[0.0, 1.0], [1.0, 0.0]]",
                                "[[0.0, 1.0], [0.0, 0.0]]")
    with pytest.raises(NotStronglyConnected):
        parse_config(bad)


def test_lambda_gate_in_checked_mode(scenario_dir):
    # lambda2_hat/n = 0.125 on the ring; 0.3 must be refused with both sides
    text = (scenario_dir / "ring4_checked.toml").read_text()
    bad = text.replace("lambda = 0.1", "lambda = 0.3")
    with pytest.raises(LambdaOutOfRange, match="0.125"):
        parse_config(bad)


def test_unchecked_override_allows_large_lambda(scenario_dir):
    text = (scenario_dir / "ring4_checked.toml").read_text()
    bad = text.replace("lambda = 0.1", "lambda = 0.3")
    scn = parse_config(bad, overrides={"unchecked": True})
    assert scn.design.rho is None and not scn.design.lambda_in_range


def test_partial_agent_coverage_rejected():
    bad = PAIR_TEMPLATE[:PAIR_TEMPLATE.index("[agents.2]")]
    with pytest.raises(ValidationError, match="agents"):
        parse_config(bad)


def test_unknown_model_rejected():
    with pytest.raises(ValidationError, match="unknown model"):
        parse_config(PAIR_TEMPLATE.replace('model = "benchmark"',
                                           'model = "nope"'))


def test_uncertainty_outside_bounds_rejected():
    with pytest.raises(ValidationError, match="bounds"):
        parse_config(PAIR_TEMPLATE.replace("w = 0.5", "w = 1.5"))


def test_step_must_resolve_timer_floor():
    with pytest.raises(ValidationError, match="b/4"):
        parse_config(PAIR_TEMPLATE.replace("step = 0.0009765625",
                                           "step = 0.01"))


def test_overrides_recorded():
    scn = parse_config(PAIR_TEMPLATE, overrides={"horizon": 0.25})
    assert scn.horizon == 0.25
    assert scn.overrides == {"horizon": 0.25}


def test_random_initial_conditions_seeded():
    no_v0 = PAIR_TEMPLATE.replace(
        "[sim]\nhorizon = 0.5\nstep = 0.0009765625",
        "[sim]\nhorizon = 0.5\nstep = 0.0009765625\nseed = 42")
    a = parse_config(no_v0)
    b = parse_config(no_v0)
    assert np.array_equal(a.v0, b.v0)
    assert a.v0.shape == (2, 2)


# --- CLI ------------------------------------------------------------------------

def test_cli_design_report(scenario_dir, capsys):
    code = main(["design", str(scenario_dir / "ring4.toml")])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    b1 = float(next(l for l in out.splitlines() if l.startswith("b1 = ")).split("=")[1])
    b2 = float(next(l for l in out.splitlines() if l.startswith("b2 = ")).split("=")[1])
    assert abs(b1 - 11.25) <= 0.01
    assert abs(b2 - 10.25) <= 0.01
    assert "check_varphi_lt_1 = UNDEFINED" in out
    assert "check_lambda_in_range = FAIL" in out


def test_cli_design_checked_failure_shows_both_sides(scenario_dir, tmp_path,
                                                     capsys):
    text = (scenario_dir / "ring4_checked.toml").read_text()
    cfg = tmp_path / "bad.toml"
    cfg.write_text(text.replace("lambda = 0.1", "lambda = 0.3"))
    code = main(["design", str(cfg)])
    err = capsys.readouterr().err
    assert code == EXIT_VALIDATION
    assert "0.3" in err and "0.125" in err


def test_cli_parse_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "broken.toml"
    cfg.write_text("format = [unclosed")
    assert main(["design", str(cfg)]) == EXIT_PARSE


def test_cli_run_emits_documented_file_set(tmp_path, capsys):
    cfg = tmp_path / "pair.toml"
    cfg.write_text(PAIR_TEMPLATE)
    out = tmp_path / "out"
    assert main(["run", str(cfg), "-o", str(out)]) == EXIT_OK
    names = sorted(p.name for p in out.iterdir())
    assert names == ["config.toml", "design.txt", "events.csv", "metrics.txt",
                     "overrides.txt", "plots", "trajectory.csv"]
    plot_names = sorted(p.name for p in (out / "plots").iterdir())
    assert "y_inf.csv" in plot_names and "v1_1.csv" in plot_names
    assert "events_consensus_agent1.csv" in plot_names
    metrics = (out / "metrics.txt").read_text()
    assert "consensus_agent1_min_interval" in metrics
    assert "regulation_agent2_min_interval" in metrics
    header = (out / "trajectory.csv").open().readline().strip().split(",")
    assert header[0] == "t" and "varpi1" in header and "sync_err" in header


def test_cli_verify_passes_on_clean_run(tmp_path, capsys):
    cfg = tmp_path / "pair.toml"
    cfg.write_text(PAIR_TEMPLATE)
    out = tmp_path / "out"
    main(["run", str(cfg), "-o", str(out)])
    code = main(["verify", str(out)])
    printed = capsys.readouterr().out
    assert code == EXIT_OK, printed
    assert "FAIL" not in printed


def test_cli_verify_config_mode_runs_internally(tmp_path, capsys):
    cfg = tmp_path / "pair.toml"
    cfg.write_text(PAIR_TEMPLATE)
    assert main(["verify", str(cfg)]) == EXIT_OK


def test_cli_verify_flags_corrupted_hold_value(tmp_path, capsys):
    cfg = tmp_path / "pair.toml"
    cfg.write_text(PAIR_TEMPLATE)
    out = tmp_path / "out"
    main(["run", str(cfg), "-o", str(out)])
    capsys.readouterr()
    traj = out / "trajectory.csv"
    lines = traj.read_text().splitlines()
    header = lines[0].split(",")
    col = header.index("varpi1")
    mid = len(lines) // 2
    fields = lines[mid].split(",")
    fields[col] = "5.0"                      # held-value deviation off the charts
    lines[mid] = ",".join(fields)
    traj.write_text("\n".join(lines) + "\n")
    code = main(["verify", str(out)])
    printed = capsys.readouterr().out
    assert code == EXIT_VERIFY
    assert any("regulation_trigger_safety" in l and l.startswith("FAIL")
               for l in printed.splitlines())


def test_cli_verify_flags_dwell_violation(tmp_path, capsys):
    cfg = tmp_path / "pair.toml"
    cfg.write_text(PAIR_TEMPLATE)
    out = tmp_path / "out"
    main(["run", str(cfg), "-o", str(out)])
    capsys.readouterr()
    ev = out / "events.csv"
    lines = ev.read_text().splitlines()
    # shrink the first completed consensus interval below the floor
    for idx, line in enumerate(lines[1:], start=1):
        agent, family, k, t, dt = line.split(",")
        if family == "consensus" and int(k) > 0:
            lines[idx] = ",".join([agent, family, k, t, "1e-9"])
            break
    ev.write_text("\n".join(lines) + "\n")
    code = main(["verify", str(out)])
    printed = capsys.readouterr().out
    assert code == EXIT_VERIFY
    assert any("consensus_dwell" in l and l.startswith("FAIL")
               for l in printed.splitlines())


def test_cli_run_multiple_configs_with_jobs(tmp_path):
    cfg1 = tmp_path / "a.toml"
    cfg2 = tmp_path / "b.toml"
    cfg1.write_text(PAIR_TEMPLATE)
    cfg2.write_text(PAIR_TEMPLATE.replace("horizon = 0.5", "horizon = 0.25"))
    out = tmp_path / "multi"
    assert main(["run", str(cfg1), str(cfg2), "-o", str(out), "--jobs", "2"]) \
        == EXIT_OK
    assert (out / "a" / "trajectory.csv").exists()
    assert (out / "b" / "trajectory.csv").exists()


def test_cli_run_then_verify_with_overrides(tmp_path, capsys):
    cfg = tmp_path / "pair.toml"
    cfg.write_text(PAIR_TEMPLATE)
    out = tmp_path / "out"
    main(["run", str(cfg), "-o", str(out), "--horizon", "0.25"])
    assert (out / "overrides.txt").read_text().strip() == "horizon = 0.25"
    capsys.readouterr()
    assert main(["verify", str(out)]) == EXIT_OK
