import numpy as np
import pytest

from gpsmpc.config import (
    ConfigError,
    config_from_dict,
    config_hash,
    dump_config,
    load_config,
    shipped_scenario,
)


def test_shipped_scenario_values():
    cfg = load_config(shipped_scenario())
    assert cfg.T == 0.2 and cfg.N == 10
    assert cfg["ev"]["initial"] == [0.0, 0.0, 0.0, 60.0]
    assert cfg["tv"]["initial"] == [80.0, 50.0, -2.5, 0.0]
    assert cfg["mpc"]["Q"] == [0.0, 0.25, 0.2, 10.0]
    road = cfg.road()
    assert (road.d_min, road.d_max) == (-6.0, 6.0)
    assert len(cfg["seeds"]) == 20


def test_beta_validation():
    with pytest.raises(ConfigError, match=r"beta out of \(0,1\)"):
        config_from_dict({"constraints": {"beta": 1.5}})


def test_defaults_filled():
    cfg = config_from_dict({"constraints": {"beta": 0.9}})
    assert cfg["constraints"]["t_headway"] == 1.0
    assert cfg.smpc_config().thresholds.margin_switch == pytest.approx(1.5)


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown key 'mpc.horizon'"):
        config_from_dict({"mpc": {"horizon": 3}})


@pytest.mark.parametrize("tree, fragment", [
    ({"sim": {"T": 0}}, "sim.T"),
    ({"mpc": {"N": 0}}, "mpc.N"),
    ({"gp": {"M": 1}}, "gp.M"),
    ({"mpc": {"u_min": [20, 0], "u_max": [10, 0.2]}}, "bounds out of order"),
    ({"vehicle": {"l_f": 4, "l_r": 4}}, r"l_f \+ l_r"),
    ({"mpc": {"Q": [1, 2, 3]}}, "mpc.Q"),
    ({"mpc": {"discretization": "rk"}}, "discretization"),
])
def test_invariant_violations(tree, fragment):
    with pytest.raises(ConfigError, match=fragment):
        config_from_dict(tree)


def test_parse_error_reports_location(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("sim:\n  T: [0.2\n")
    with pytest.raises(ConfigError, match="line"):
        load_config(bad)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.yaml")


def test_round_trip(tmp_path):
    cfg = load_config(shipped_scenario())
    path = tmp_path / "again.yaml"
    path.write_text(dump_config(cfg))
    again = load_config(path)
    assert again == cfg
    assert dump_config(again) == dump_config(cfg)
    assert config_hash(again) == config_hash(cfg)


def test_with_value_and_lengthscale_scale():
    cfg = load_config(shipped_scenario())
    scaled = cfg.with_value("lengthscale_scale", 2.0)
    base = cfg.kernel_params()[2].lengthscales
    np.testing.assert_allclose(scaled.kernel_params()[2].lengthscales, 2.0 * np.asarray(base))
    assert cfg.with_value("beta", 0.95).smpc_config().risk.beta == 0.95
    with pytest.raises(ConfigError):
        cfg.with_value("beta", 0.0)
