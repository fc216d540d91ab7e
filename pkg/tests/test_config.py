from __future__ import annotations

import json

import pytest

from mask_beamforming.config import (
    CONDITIONS,
    EstimatorConfig,
    EvaluationSettings,
    ExperimentSettings,
    SceneConfig,
    SceneSetConfig,
    StftConfig,
    TrainConfig,
    normalize_choice,
)
from mask_beamforming.errors import ConfigError


def test_defaults_follow_experiment_protocol():
    s = ExperimentSettings()
    assert s.stft.window_length == 256 and s.stft.hop == 64
    assert s.stft.n_freq == 129
    assert s.scenes.scene.sample_rate == 8000
    assert s.scenes.scene.distance == 1.0
    assert s.train.learning_rate == 1e-3 and s.train.chunk == 100
    assert s.model.context == 3 and s.model.hidden == (64, 64)
    assert s.evaluation.loading == 1e-6
    assert s.evaluation.filter_len == 512


def test_stft_for_sample_rate():
    cfg = StftConfig.for_sample_rate(8000)
    assert (cfg.window_length, cfg.hop, cfg.fft_size) == (256, 64, 256)
    cfg16 = StftConfig.for_sample_rate(16000)
    assert (cfg16.window_length, cfg16.hop) == (512, 128)


def test_dict_round_trip():
    s = ExperimentSettings(
        name="trial",
        seed=3,
        scenes=SceneSetConfig(
            count=4,
            condition="condition2",
            scene=SceneConfig(azimuths_deg=(30.0, 100.0)),
        ),
        model=EstimatorConfig(context=2, hidden=(32,)),
    )
    data = json.loads(json.dumps(s.to_dict()))
    assert ExperimentSettings.from_dict(data) == s


@pytest.mark.parametrize(
    "build",
    [
        lambda: StftConfig(window_length=256, fft_size=128),
        lambda: StftConfig(window="blackman"),
        lambda: SceneConfig(n_sources=0),
        lambda: SceneConfig(rt60=-0.1),
        lambda: SceneConfig(n_mics=9),
        lambda: SceneConfig(azimuths_deg=(10.0,)),
        lambda: SceneSetConfig(condition="condition9"),
        lambda: TrainConfig(learning_rate=0.0),
        lambda: TrainConfig(chunk=1),
        lambda: TrainConfig(loss="mse"),
        lambda: EvaluationSettings(loading=-1.0),
        lambda: EstimatorConfig(hidden=()),
    ],
)
def test_invalid_values_raise(build):
    with pytest.raises(ValueError):
        build()


def test_normalize_choice_and_loss_spelling():
    assert normalize_choice("MWF-TV") == "mwf_tv"
    assert normalize_choice("oracle-psm") == "oracle_psm"
    assert TrainConfig(loss="L2").loss == "l2"


def test_condition_presets():
    assert CONDITIONS["condition3"]["rt60"] == 0.36
    assert CONDITIONS["condition2"]["arrangements"] == ((4, 4, 4, 8, 4, 4, 4),)
    assert len(CONDITIONS["condition1"]["arrangements"]) == 2


def test_from_json_reports_unknown_key_line(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(
        '{\n  "name": "x",\n  "train": {\n    "steps": 5,\n'
        '    "momentum": 0.9\n  }\n}\n',
        encoding="utf-8",
    )
    with pytest.raises(ConfigError) as info:
        ExperimentSettings.from_json(path)
    assert info.value.line == 5
    assert str(info.value).startswith(f"{path}:5:")
    assert "momentum" in str(info.value)


def test_from_json_reports_wrong_type(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(
        '{\n  "seed": "seven"\n}\n',
        encoding="utf-8",
    )
    with pytest.raises(ConfigError) as info:
        ExperimentSettings.from_json(path)
    assert info.value.line == 2


def test_from_json_reports_bad_value_at_section(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(
        '{\n  "name": "x",\n  "stft": {"hop": 0}\n}\n', encoding="utf-8"
    )
    with pytest.raises(ConfigError) as info:
        ExperimentSettings.from_json(path)
    assert info.value.line == 3


def test_from_json_syntax_error_line(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text('{\n  "name": "x",\n  "seed": ,\n}\n', encoding="utf-8")
    with pytest.raises(ConfigError) as info:
        ExperimentSettings.from_json(path)
    assert info.value.line == 3


def test_from_json_valid(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(
        json.dumps(
            {
                "name": "small",
                "seed": 11,
                "scenes": {"count": 2, "scene": {"duration": 1.5}},
                "train": {"loss": "psa", "steps": 10},
            },
            indent=2,
        ),
        encoding="utf-8",
    )
    s = ExperimentSettings.from_json(path)
    assert s.name == "small" and s.seed == 11
    assert s.scenes.count == 2 and s.scenes.scene.duration == 1.5
    assert s.train.loss == "psa" and s.train.steps == 10


def test_replace_keeps_other_fields():
    s = ExperimentSettings(name="a", seed=1)
    t = s.replace(seed=2)
    assert t.seed == 2 and t.name == "a" and t.stft == s.stft
