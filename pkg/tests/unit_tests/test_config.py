import pytest

from motioncrf.config import (
    environment_overrides,
    load_pipeline_config,
    read_key_values,
    write_key_values,
)
from motioncrf.errors import ConfigError, InvalidParameter, NonPositiveBandwidth

INPUTS = ("unary.tnsr", "image.tnsr", "flow_01.tnsr", "flow_12.tnsr", "disp_0.tnsr", "disp_1.tnsr")
RIG = {"fx": 100.0, "fy": 100.0, "cx": 64.0, "cy": 48.0, "baseline": 0.5}


@pytest.fixture
def config_dir(tmp_path):
    for name in INPUTS:
        (tmp_path / name).write_bytes(b"")
    write_key_values(tmp_path / "rig.cfg", RIG)
    write_key_values(
        tmp_path / "run.cfg",
        {
            "object_unary": "unary.tnsr",
            "image": "image.tnsr",
            "flow_01": "flow_01.tnsr",
            "flow_12": "flow_12.tnsr",
            "disparity_0": "disp_0.tnsr",
            "disparity_1": "disp_1.tnsr",
            "rig": "rig.cfg",
            "object_labels": "road,building,car",
            "fx": 50.0,
            "w_corr": 2.0,
            "output_dir": "out",
        },
    )
    return tmp_path


def test_defaults_and_relative_paths(config_dir) -> None:
    config = load_pipeline_config(config_dir / "run.cfg", environ={})
    assert config.path("object_unary") == config_dir / "unary.tnsr"
    assert config.path("disparity_2") is None
    assert config.output_dir == config_dir / "out"
    assert config.object_labels.names == ("road", "building", "car")
    assert config.kernel.theta_beta == 3.0 and config.kernel.theta_v == 10.0
    assert config.inference.max_iterations == 30
    assert config.inference.damping == 0.5
    assert config.layers == "joint"
    assert config.w_corr == 2.0


def test_precedence_file_rig_environment_overrides(config_dir) -> None:
    path = config_dir / "run.cfg"
    assert load_pipeline_config(path, environ={}).rig.fx == 100.0
    environ = {"MOTIONCRF_FX": "200", "MOTIONCRF_W_CORR": "0"}
    config = load_pipeline_config(path, environ=environ)
    assert config.rig.fx == 200.0
    assert config.w_corr == 0.0
    config = load_pipeline_config(path, {"fx": "300", "w_corr": "4"}, environ=environ)
    assert config.rig.fx == 300.0
    assert config.w_corr == 4.0


def test_environment_is_read_by_default(config_dir, monkeypatch) -> None:
    monkeypatch.setenv("MOTIONCRF_DAMPING", "0.25")
    assert load_pipeline_config(config_dir / "run.cfg").inference.damping == 0.25
    assert environment_overrides({"MOTIONCRF_UNKNOWN": "1", "MOTIONCRF_SEED": "7"}) == {"seed": "7"}


def test_missing_inputs_name_the_path(config_dir) -> None:
    (config_dir / "flow_12.tnsr").unlink()
    with pytest.raises(ConfigError, match="flow_12.tnsr"):
        load_pipeline_config(config_dir / "run.cfg", environ={})
    with pytest.raises(ConfigError, match="missing.cfg"):
        load_pipeline_config(config_dir / "missing.cfg", environ={})


def test_object_only_runs_need_fewer_keys(config_dir) -> None:
    write_key_values(
        config_dir / "object.cfg",
        {"object_unary": "unary.tnsr", "image": "image.tnsr", "object_labels": "road,car", "layers": "object"},
    )
    config = load_pipeline_config(config_dir / "object.cfg", environ={})
    assert config.rig is None
    assert config.uses_object and not config.uses_motion
    with pytest.raises(ConfigError, match="flow_01"):
        load_pipeline_config(config_dir / "object.cfg", {"layers": "joint"}, environ={})


def test_required_keys_and_invalid_values(config_dir) -> None:
    path = config_dir / "run.cfg"
    with pytest.raises(InvalidParameter):
        load_pipeline_config(path, {"max_iterations": "0"}, environ={})
    with pytest.raises(InvalidParameter):
        load_pipeline_config(path, {"damping": "lots"}, environ={})
    with pytest.raises(InvalidParameter):
        load_pipeline_config(path, {"layers": "depth"}, environ={})
    with pytest.raises(NonPositiveBandwidth):
        load_pipeline_config(path, {"theta_p": "0"}, environ={})
    write_key_values(config_dir / "bare.cfg", {"object_unary": "unary.tnsr", "image": "image.tnsr", "layers": "object"})
    with pytest.raises(ConfigError, match="object_labels"):
        load_pipeline_config(config_dir / "bare.cfg", environ={})


def test_manifest_records_parameters(config_dir) -> None:
    manifest = load_pipeline_config(config_dir / "run.cfg", environ={}).manifest()
    assert manifest["w_corr"] == 2.0
    assert manifest["rig"]["baseline"] == 0.5
    assert manifest["inputs"]["image"] == str(config_dir / "image.tnsr")
    assert manifest["inference"]["mode"] == "fast"


def test_key_value_round_trip(tmp_path) -> None:
    path = tmp_path / "values.cfg"
    write_key_values(path, {"Alpha": 1, "beta": "two", "empty": ""})
    assert read_key_values(path) == {"alpha": "1", "beta": "two"}
