import json

import numpy as np
import pytest

from opo_estim import ExperimentConfig, SweepSpec, load_config
from opo_estim.errors import ConfigurationError


def test_defaults():
    cfg = ExperimentConfig()
    assert cfg.dt == 1e-3 and cfg.t_final == 100.0
    assert cfg.grid().n_steps == 100_000
    assert cfg.n_trials == 1000 and cfg.fast_n_trials == 200
    assert cfg.physical.transmittance == 1.0
    assert cfg.pump.mu == -0.01 and cfg.pump.c == 0.5 and cfg.pump.g == 0.028
    np.testing.assert_allclose(cfg.initial_covariance, 0.5 * np.eye(2))
    assert cfg.b_normalization == "consistent"


def test_default_sweep_grids():
    assert SweepSpec("T").grid == pytest.approx([0.1 * i for i in range(11)])
    assert SweepSpec("g").grid == pytest.approx([0.005 * i for i in range(1, 8)])
    assert SweepSpec("c").grid == pytest.approx([0.3, 0.4, 0.5, 0.6, 0.7])
    assert SweepSpec("c").fixed == {"g": 0.025}
    assert SweepSpec("T").fixed == {}


@pytest.mark.parametrize(
    "kwargs",
    [
        {"n_trials": 0},
        {"b_normalization": "other"},
        {"x0": (0.0,)},
        {"initial_cov": ((1.0, 0.5), (0.0, 1.0))},
        {"initial_cov": ((1.0, 0.0), (0.0, -1.0))},
        {"pump_prior_var": -1.0},
        {"burn_in": 100.0},
        {"workers": 0},
        {"dt": 0.0},
    ],
)
def test_invalid_configs(kwargs):
    with pytest.raises(ConfigurationError):
        ExperimentConfig(**kwargs)


def test_invalid_sweeps():
    with pytest.raises(ConfigurationError):
        SweepSpec("mu")
    with pytest.raises(ConfigurationError):
        SweepSpec("T", values=())


def test_with_param():
    cfg = ExperimentConfig()
    assert cfg.with_param("T", 0.3).physical.transmittance == 0.3
    assert cfg.with_param("g", 0.01).pump.g == 0.01
    assert cfg.with_param("c", 0.7).pump.c == 0.7
    with pytest.raises(ConfigurationError):
        cfg.with_param("x", 1.0)


def test_dict_round_trip():
    cfg = ExperimentConfig(t_final=5.0, x0=(1.4, 0.0), initial_cov=((0.6, 0.0), (0.0, 0.6)),
                           sweep=SweepSpec("g", values=(0.01, 0.02)))
    data = json.loads(json.dumps(cfg.to_dict()))
    assert data["grid"] == {"dt": 1e-3, "t_final": 5.0}
    assert ExperimentConfig.from_dict(data) == cfg


def test_load_config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({
        "physical": {"transmittance": 0.5},
        "pump": {"g": 0.0},
        "grid": {"t_final": 2.0},
        "n_trials": 3,
        "master_seed": 9,
    }))
    cfg = load_config(path)
    assert cfg.physical.transmittance == 0.5 and cfg.pump.g == 0.0
    assert cfg.t_final == 2.0 and cfg.n_trials == 3 and cfg.master_seed == 9
    assert load_config(None) == ExperimentConfig()


@pytest.mark.parametrize(
    "text",
    ["not json", "[1, 2]", '{"unknown_key": 1}', '{"physical": {"gamma1": -1}}',
     '{"grid": {"t_final": Infinity}}'],
)
def test_load_config_errors(tmp_path, text):
    path = tmp_path / "c.json"
    path.write_text(text)
    with pytest.raises(ConfigurationError):
        load_config(path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "missing.json")
