import json
import math

import numpy as np
import pytest

from crsim.cr_dynamics import integrate_cr
from crsim.experiments import (
    RESONANT_CLOCK,
    REPORT_COLUMNS,
    ComparisonReport,
    ConfigError,
    ExperimentConfig,
    emit_report,
    load_report,
    profile_values,
    resonant_clock,
    run_scaling_study,
    run_theorem1,
    write_scaling_csv,
)
from crsim.lattice_core import LatticeField, LatticeSpec, zn
from crsim.vnls_sim import Mode, SimState, integrate_lattice


def small(**kw):
    base = dict(L=[4, 6], horizon=0.5, outputs=2, dt=0.5, modes=["resonant", "full"])
    base.update(kw)
    return ExperimentConfig.from_dict(base)


def test_defaults_validate():
    cfg = ExperimentConfig()
    cfg.validate()
    cfg.check_theorem1()
    assert cfg.eps_power == cfg.gamma


def test_unknown_key_and_bad_type():
    with pytest.raises(ConfigError, match="bogus"):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError, match="gamma"):
        ExperimentConfig.from_dict({"gamma": "half"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"n": 2.5})


@pytest.mark.parametrize(
    "kw",
    [
        {"n": 5},
        {"gamma": 1.2},
        {"eps_exponent": 0.1},
        {"profile": "box"},
        {"modes": ["fast"]},
        {"reference": "magic"},
        {"L": [1]},
        {"dt": 0.0},
    ],
)
def test_invalid_values(kw):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(kw).validate()


def test_overrides_and_digest():
    cfg = ExperimentConfig().with_overrides(["L=[4, 8]", "gamma=0.25", "profile_params.sigma=0.5", "kind=coupled"])
    assert cfg.L == [4, 8] and cfg.gamma == 0.25 and cfg.profile_params["sigma"] == 0.5
    again = ExperimentConfig.from_dict(json.loads(cfg.canonical_json()))
    assert again.digest() == cfg.digest()
    assert ExperimentConfig().digest() != cfg.digest()
    with pytest.raises(ConfigError):
        ExperimentConfig().with_overrides(["no_equals_sign"])
    with pytest.raises(ConfigError):
        ExperimentConfig().with_overrides(["nope=1"])


@pytest.mark.parametrize(
    "kw",
    [
        {"l": 4.0},
        {"c": 3.0},
        {"kind": "vector", "d": 2},
        {"profile": "hermite", "profile_params": {"l": 1, "m": 1}},
        {"n": 3, "reference": "hermite", "profile_params": {"sigma": 0.35}},
    ],
)
def test_refusals(kw):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(kw).check_theorem1()


def test_smallness_is_exact_at_threshold():
    cfg = ExperimentConfig.from_dict({"c": 1.0, "gamma": 0.5, "L": [7, 64, 1000]})
    cfg.check_theorem1()
    assert cfg.smallness_value(64) == 1.0


def test_profiles():
    K = LatticeSpec(2, 2, 4).momenta()
    g = profile_values("gaussian", {"sigma": 0.5, "amplitude": 2.0}, K, 1)
    assert g[0, 4, 4] == 2.0
    assert g[0, 5, 4] == pytest.approx(2.0 * math.exp(-0.25 / 0.5))
    v = profile_values("gaussian_k", {}, K, 2)
    assert np.all(v[:, 4, 4] == 0)
    with pytest.raises(ConfigError):
        profile_values("gaussian", {"width": 1.0}, K, 1)
    with pytest.raises(ConfigError):
        profile_values("hermite", {"l": 1, "m": 0}, K, 1)
    with pytest.raises(ConfigError):
        profile_values("gaussian_k", {}, K, 1)


def test_resonant_clock_values():
    cfg = ExperimentConfig()
    c = resonant_clock(cfg, 16)
    eps2 = 16**-0.5
    assert c["eps"] == pytest.approx(math.sqrt(eps2))
    assert c["T_R"] == pytest.approx(16**4 / (eps2 * zn(2, 16)))
    assert c["delta"] == pytest.approx(1 / math.log(16))
    assert c["eps2_Lgamma"] == pytest.approx(1.0)


def test_unresolved_data_refused():
    with pytest.raises(ConfigError, match="tail"):
        run_theorem1(small(kbox=0.75, modes=["resonant"]))


def test_zero_data_has_zero_error():
    rep = run_theorem1(small(profile_params={"sigma": 0.35, "amplitude": 0.0}))
    assert len(rep.rows) == 2 * 2 * 2
    assert all(r["error"] == 0.0 for r in rep.rows)


def test_resonant_flow_is_the_lattice_operator_on_a_doubled_clock():
    spec = LatticeSpec(2, 4, 8)
    cfg = ExperimentConfig()
    g0 = profile_values("gaussian", cfg.profile_params, spec.momenta(), 1)
    clock = resonant_clock(cfg, 4)
    steps = 400
    st, _ = integrate_lattice(
        SimState(LatticeField(spec, g0), eps=clock["eps"], mode=Mode.RESONANT), dt=clock["T_R"] / steps, steps=steps
    )
    tr = integrate_cr(LatticeField(spec, g0), dt=RESONANT_CLOCK / steps, steps=steps, stride=steps, monitor=False)
    assert np.max(np.abs(st.a.values - tr.states[-1].values)) <= 1e-8


def test_run_is_deterministic_and_reports_roundtrip(tmp_path):
    cfg = small()
    a = run_theorem1(cfg)
    b = run_theorem1(cfg)
    assert [r["error"] for r in a.rows] == [r["error"] for r in b.rows]
    assert set(a.trend) == {"resonant", "full"}
    assert a.errors("resonant") == [(4, a.rows[1]["error"]), (6, a.rows[5]["error"])]
    paths = emit_report(a, tmp_path)
    assert [p.name for p in paths] == ["report.csv", "report.json"]
    back = load_report(tmp_path)
    assert back.rows == a.rows and back.config == a.config and back.trend == a.trend
    text = (tmp_path / "report.csv").read_text()
    blocks = text.strip().split("\n\n")
    assert len(blocks) == 2
    assert text.splitlines()[0] == ",".join(REPORT_COLUMNS)


def test_three_blocks_and_empty_report(tmp_path):
    rep = ComparisonReport(config={}, rows=[])
    emit_report(rep, tmp_path / "e", fmt="csv")
    assert (tmp_path / "e" / "report.csv").read_text() == ",".join(REPORT_COLUMNS) + "\n"
    rows = [dict(zip(REPORT_COLUMNS, (L, "resonant", 1.0, 1.0, 0.1, 1.0, 0.5, 1.0, 0.5, 8))) for L in (8, 16, 32)]
    emit_report(ComparisonReport(config={}, rows=rows), tmp_path / "f", fmt="csv")
    assert len((tmp_path / "f" / "report.csv").read_text().strip().split("\n\n")) == 3
    with pytest.raises(ValueError):
        emit_report(rep, tmp_path, fmt="xml")
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        emit_report(rep, blocker / "sub")


def test_parallel_matches_serial():
    cfg = small(modes=["resonant"])
    assert run_theorem1(cfg, jobs=2).rows == run_theorem1(cfg).rows


def test_scaling_study(tmp_path):
    cfg = ExperimentConfig.from_dict({"scaling_L": [2, 4]})
    rows = run_scaling_study(cfg)
    assert [r["L"] for r in rows] == [2, 4]
    assert all(r["seconds"] >= 0 and r["ratio"] > 0 for r in rows)
    lines = write_scaling_csv(rows, tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "L,kmax,Z_n,S,ratio,seconds" and len(lines) == 3
    with pytest.raises(ConfigError):
        run_scaling_study(ExperimentConfig.from_dict({"scaling_l": 8.0}))
