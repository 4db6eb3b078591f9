import dataclasses
import math
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pkwc import cli, io
from pkwc.config import (ForcingSpec, GridSpec, ModelSpec, OutputSpec, ProfileSpec, RunConfig,
                         RunSpec, SchemeSpec, build_problem, config_to_mapping, override,
                         parse_config, parse_config_text, serialize_config)
from pkwc.errors import ConfigurationError
from pkwc.grid import ScalarField, make_grid
from pkwc.profiles import LCG64, make_forcing, make_profile
from pkwc.stepper import max_stable_tau


# -- seeded profiles ----------------------------------------------------------------


def test_lcg_reference_values():
    state, expected = 42, []
    for _ in range(3):
        state = (6364136223846793005 * state + 1442695040888963407) % 2**64
        expected.append((state >> 11) / 2.0**53)
    gen = LCG64(42)
    assert [gen.uniform() for _ in range(3)] == expected


def test_lcg_frozen_first_draw():
    assert LCG64(0).next_u64() == 1442695040888963407


def test_random_profile_row_major_and_seeded():
    g = make_grid(2, [3, 2], [1.0, 1.0])
    a = make_profile(g, "random", low=-2, high=3, seed=7)
    ref = LCG64(7).uniform(-2, 3, 6).reshape(3, 2)
    assert np.array_equal(a.values, ref)
    assert np.all((a.values >= -2) & (a.values < 3))
    assert not np.array_equal(a.values, make_profile(g, "random", seed=8).values)


def test_cosine_profile_is_neumann_smooth():
    g = make_grid(1, [64], [1.0])
    z = make_profile(g, "cosine", offset=0.5, amplitude=0.4)
    assert z.values[0] == pytest.approx(0.5 + 0.4 * math.cos(math.pi / 128))
    assert z.values[0] + z.values[-1] == pytest.approx(1.0)


def test_forcing_profiles():
    g = make_grid(1, [4], [1.0])
    assert make_forcing(g, "zero") is None
    assert np.all(make_forcing(g, "constant", value=2.0)(0.3).values == 2.0)
    assert make_forcing(g, "ramp", amplitude=2.0)(0.25).values[0] == 0.5
    assert make_forcing(g, "sine", amplitude=1.0, frequency=1.0)(0.25).values[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        make_forcing(g, "square")


# -- configuration ------------------------------------------------------------------


def test_empty_config_fills_defaults():
    cfg = parse_config_text("")
    assert cfg.scheme.tol_newton == 1e-9 and cfg.scheme.tol_fixed_point == 1e-10
    assert cfg.output.snapshot_every == 10 and cfg.output.ledger is True
    assert cfg.grid == GridSpec(1, (64,), (1.0,))
    problem, info = build_problem(cfg)
    assert info.tau == pytest.approx(info.tau0 / 2)
    assert problem.params.tau == info.tau


def test_parse_config_reads_file(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[grid]\ndim = 2\ncells = 8, 6\nlengths = 1.0, 0.5\n\n[scheme]\nT = 0.5  # short\n",
                    encoding="utf-8")
    cfg = parse_config(path)
    assert cfg.grid.cells == (8, 6) and cfg.grid.lengths == (1.0, 0.5)
    assert cfg.scheme.T == 0.5


def test_tau_guard_violation_named():
    with pytest.raises(ConfigurationError, match="tau0") as exc:
        parse_config_text("[scheme]\ntau = 0.5\n")
    assert any("tau1" in v for v in exc.value.violations)


def test_mu_zero_cites_assumption():
    with pytest.raises(ConfigurationError, match=r"\(A1\)"):
        parse_config_text("[scheme]\nmu = 0\n")


def test_all_violations_reported():
    with pytest.raises(ConfigurationError) as exc:
        parse_config_text("[scheme]\nmu = 0\nnu = -1\neps = 2\n[output]\nsnapshot_every = 0\n")
    assert len(exc.value.violations) == 4


def test_conversion_errors_carry_line_numbers():
    text = "[grid]\ncells = 8\n\n[scheme]\nmu = abc\nbogus = 1\n"
    with pytest.raises(ConfigurationError) as exc:
        parse_config_text(text)
    v = exc.value.violations
    assert any(s.startswith("line 5:") and "scheme.mu" in s for s in v)
    assert any(s.startswith("line 6:") and "bogus" in s for s in v)


def test_syntax_error_carries_line_number():
    with pytest.raises(ConfigurationError, match="line 3"):
        parse_config_text("[grid]\ncells = 8\nthis line has no separator\n")


def test_unknown_section_and_choice():
    with pytest.raises(ConfigurationError, match="unknown section"):
        parse_config_text("[solver]\nx = 1\n")
    with pytest.raises(ConfigurationError, match="one of"):
        parse_config_text("[initial.eta]\nprofile = gaussian\n")


def test_explicit_M_checked():
    with pytest.raises(ConfigurationError, match="truncation rule"):
        parse_config_text("[model]\nM = 0.5\n")  # eta0 reaches 0.9
    with pytest.raises(ConfigurationError, match="truncation rule"):
        parse_config_text("[model]\nM = 1.0\n[forcing.u]\nprofile = constant\nvalue = 0.5\n")


def test_auto_M_covers_forcing():
    cfg = parse_config_text("[forcing.u]\nprofile = constant\nvalue = 2.0\n")
    _, info = build_problem(cfg)
    # lattice 0.8999.., 1.3999.., ...: g(2.8999..) < 2, so 3.3999.. rounds up to 3.4
    assert info.M == 3.4
    assert info.u_sup == pytest.approx(2.0)


def test_polynomial_model_section():
    cfg = parse_config_text("[model]\nname = polynomial\ng = -0.5, 2\nalpha = 0.1, 0, 1\n"
                            "alpha0 = 2, 0, 0\n")
    problem, info = build_problem(cfg)
    assert problem.fns.lip_g_M == 2.0
    assert info.tau1 == pytest.approx(0.05) and info.tau0 == pytest.approx(0.05)
    with pytest.raises(ConfigurationError):
        parse_config_text("[model]\nname = polynomial\nalpha = 0.1, 0.2, 1\n")


_floats = st.floats(allow_nan=False, allow_infinity=False, width=64)
_names = st.text("abcdefghijklmnopqrstuvwxyz0123456789_-/", min_size=1, max_size=12)


@st.composite
def run_configs(draw):
    dim = draw(st.sampled_from([1, 2]))
    cells = tuple(draw(st.integers(2, 500)) for _ in range(dim))
    lengths = tuple(draw(_floats) for _ in range(dim))
    prof = lambda: ProfileSpec(draw(st.sampled_from(["constant", "cosine", "random"])), draw(_floats),
                               draw(_floats), draw(_floats), draw(st.integers(0, 9)), draw(_floats),
                               draw(_floats))
    force = lambda: ForcingSpec(draw(st.sampled_from(["zero", "constant", "sine", "ramp"])), draw(_floats),
                                draw(_floats), draw(_floats), draw(st.sampled_from(["uniform", "cosine"])))
    return RunConfig(
        grid=GridSpec(dim, cells, lengths),
        model=ModelSpec(draw(st.sampled_from(["default", "polynomial"])), (draw(_floats), draw(_floats)),
                        (draw(_floats), 0.0, draw(_floats)), (draw(_floats), draw(_floats), draw(_floats)),
                        draw(st.none() | _floats)),
        scheme=SchemeSpec(draw(_floats), draw(_floats), draw(_floats), draw(st.none() | _floats),
                          draw(_floats), draw(_floats), draw(_floats), draw(st.integers(0, 10**6)),
                          draw(st.integers(0, 10**6))),
        eta=prof(), theta=prof(), u=force(), v=force(),
        output=OutputSpec(draw(_names), draw(st.integers(-5, 1000)), draw(st.booleans())),
        run=RunSpec(draw(st.integers(0, 2**64 - 1))),
    )


@given(run_configs())
def test_serialize_round_trip(cfg):
    assert parse_config_text(serialize_config(cfg), validate_model=False) == cfg


def test_serialize_uses_repr_floats():
    cfg = dataclasses.replace(RunConfig(), scheme=dataclasses.replace(SchemeSpec(), mu=0.1 + 0.2))
    assert "mu = 0.30000000000000004" in serialize_config(cfg)
    assert "tau = auto" in serialize_config(RunConfig())


def test_override_and_mapping():
    cfg = override(RunConfig(), "scheme.mu", "0.2")
    assert cfg.scheme.mu == 0.2
    assert config_to_mapping(cfg)["scheme.mu"] == "0.2"
    with pytest.raises(ConfigurationError):
        override(cfg, "scheme.rho", "1")


# -- file formats -------------------------------------------------------------------


def test_snapshot_round_trip(tmp_path):
    g = make_grid(2, [3, 4], [1.0, 0.1 + 0.2])
    z = ScalarField(g, np.random.default_rng(0).normal(size=g.shape) * 1e-7)
    path = tmp_path / "s.txt"
    io.write_snapshot(path, z, 0.1 * 3)
    lines = path.read_text().splitlines()
    assert lines[:4] == ["dim 2", "cells 3 4", "lengths 1 0.30000000000000004", "time 0.30000000000000004"]
    assert len(lines) == 4 + 12
    back, t = io.read_snapshot(path)
    assert back == z and t == 0.1 * 3


def test_fmt_seventeen_digits():
    assert io.fmt(0.1) == "0.10000000000000001"
    assert io.fmt(3) == "3" and io.fmt(True) == "true"


# -- commands -----------------------------------------------------------------------


STATIONARY = """\
[grid]
cells = 16
[initial.eta]
profile = constant
value = 0.5
[initial.theta]
profile = constant
value = 0.2
[forcing.u]
profile = constant
value = -0.475
[scheme]
T = 0.5
[output]
dir = stationary
snapshot_every = 4
"""


def _write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


@pytest.fixture
def out_root(tmp_path, monkeypatch):
    root = tmp_path / "out"
    monkeypatch.setenv("PKWC_OUTPUT_ROOT", str(root))
    return root


def _read_csv(path):
    lines = path.read_text().splitlines()
    head = lines[0].split(",")
    return head, [dict(zip(head, line.split(","))) for line in lines[1:]]


def test_run_stationary(tmp_path, out_root, capsys):
    assert cli.cmd_run(_write(tmp_path, STATIONARY)) == 0
    assert capsys.readouterr().out.startswith("PASS")
    out = out_root / "stationary"
    head, rows = _read_csv(out / "ledger.csv")
    assert tuple(head) == io.LEDGER_COLUMNS
    assert len(rows) == 10
    for r in rows:
        for k in ("d_eta_h2", "d_eta_grad2", "d_theta_h2", "d_theta_grad2"):
            assert abs(float(r[k])) <= 1e-25
    head, rows = _read_csv(out / "solves.csv")
    assert tuple(head) == io.SOLVE_COLUMNS and len(rows) == 20
    snaps = sorted(p.name for p in (out / "snapshots").iterdir())
    assert snaps == [f"{k}_{i:06d}.txt" for k in ("eta", "theta") for i in (0, 4, 8, 10)]
    eta, t = io.read_snapshot(out / "snapshots" / "eta_000010.txt")
    assert t == pytest.approx(0.5) and np.allclose(eta.values, 0.5, atol=1e-14)
    assert (out / "report.csv").exists()


def test_run_output_is_byte_identical(tmp_path, monkeypatch):
    cfg = _write(tmp_path, "[grid]\ncells = 12\n[initial.theta]\nprofile = random\n[scheme]\nT = 0.3\n"
                           "[run]\nseed = 5\n")
    trees = []
    for name in ("a", "b"):
        monkeypatch.setenv("PKWC_OUTPUT_ROOT", str(tmp_path / name))
        assert cli.cmd_run(cfg) == 0
        root = tmp_path / name / "output"
        trees.append({p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()})
    assert trees[0] == trees[1] and len(trees[0]) > 4


def test_exit_codes(tmp_path, out_root, capsys):
    assert cli.cmd_run(_write(tmp_path, "[scheme]\nmu = 0\n")) == 1
    assert "(A1)" in capsys.readouterr().err
    failing = "[grid]\ncells = 8\n[scheme]\nmax_fp_iters = 1\n"
    assert cli.cmd_run(_write(tmp_path, failing, "f.ini")) == 2
    assert "solver failure" in capsys.readouterr().err


def test_verify_energy_prints_slack(tmp_path, out_root, capsys):
    cfg = _write(tmp_path, "[grid]\ncells = 16\n[scheme]\nT = 0.3\n[output]\ndir = e\n")
    assert cli.cmd_verify(cfg, "energy") == 0
    out = capsys.readouterr().out
    assert out.startswith("PASS energy: worst slack")
    assert (out_root / "e" / "verify-energy" / "report.csv").exists()


def test_verify_linfty_and_unknown(tmp_path, out_root, capsys):
    cfg = _write(tmp_path, "[grid]\ncells = 8\n[scheme]\nT = 0.2\n")
    assert cli.cmd_verify(cfg, "linfty") == 0
    assert cli.cmd_verify(cfg, "nonsense") == 1


def test_oracle_test_command(capsys):
    assert cli.cmd_oracle_test(8, 42, 50) == 0
    assert "50/50 matches within 1e-07" in capsys.readouterr().out


def test_sweep(tmp_path, out_root, capsys):
    cfg = _write(tmp_path, "[grid]\ncells = 8\n[scheme]\nT = 0.2\ntau = 0.02\n[output]\ndir = sw\n")
    assert cli.cmd_sweep(cfg, "scheme.mu", "0.2,0.3", jobs=2) == 0
    assert (out_root / "sw" / "scheme.mu=0.2" / "ledger.csv").exists()
    assert (out_root / "sw" / "scheme.mu=0.3" / "ledger.csv").exists()
    head, rows = _read_csv(out_root / "sw" / "sweep.csv")
    assert [r["exit_code"] for r in rows] == ["0", "0"]
    # one invalid point rejects the whole sweep before anything runs
    assert cli.cmd_sweep(cfg, "scheme.mu", "0.2,0", jobs=2) == 1


def test_main_dispatch(tmp_path, out_root, capsys):
    cfg = _write(tmp_path, "[grid]\ncells = 8\n[scheme]\nT = 0.1\n")
    assert cli.main(["run", str(cfg)]) == 0
    assert cli.main(["oracle-test", "--size", "4", "--seed", "1", "--cases", "2"]) == 0
    with pytest.raises(SystemExit):
        cli.main(["verify", str(cfg), "bogus"])


def test_output_root_default(tmp_path, monkeypatch):
    monkeypatch.delenv("PKWC_OUTPUT_ROOT", raising=False)
    monkeypatch.chdir(tmp_path)
    cfg = dataclasses.replace(RunConfig(), output=OutputSpec(dir="here"))
    assert cli.output_dir(cfg) == type(tmp_path)("here")
    assert (tmp_path / "here").is_dir()
