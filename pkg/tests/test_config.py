from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctgage.config import (ConfigFileError, RunConfig, apply_pairs, dump_run_config, dump_synth_spec,
                           load_run_config, load_synth_spec, parse_lines, parse_value)
from ctgage.model import Net1DConfig
from ctgage.synth import SynthSpec

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_parse_values():
    assert parse_value("1e-3") == 1e-3 and parse_value(" 7 ") == 7
    assert parse_value("(1, 2)") == (1, 2) and parse_value("{'gdm': 25}") == {"gdm": 25}
    assert parse_value("true") is True and parse_value("compact") == "compact"


def test_comments_and_blank_lines():
    assert parse_lines(["# header", "", "train.lr0 = 2e-3  # inline", "  "]) == [("train.lr0", 2e-3)]


@pytest.mark.parametrize("line", ["train.lr0", "= 3"])
def test_malformed_lines(line):
    with pytest.raises(ConfigFileError):
        parse_lines([line])


def test_file_then_overrides(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("train.lr0 = 2e-3\ntrain.max_epochs = 4\ntrain.max_epochs = 6\n")
    cfg = load_run_config(p, ["train.lr0=5e-4"])
    assert cfg.train.lr0 == 5e-4 and cfg.train.max_epochs == 6


def test_preset_applies_before_field_overrides():
    cfg = apply_pairs(RunConfig(), [("model.stem_channels", 8), ("model.preset", "compact")])
    compact = Net1DConfig.compact()
    assert cfg.model.stem_channels == 8 and cfg.model.stages == compact.stages
    assert cfg.model_preset == "compact"


@pytest.mark.parametrize("pairs", [[("train.nope", 1)], [("nosection.x", 1)], [("train", 1)],
                                   [("train.max_epochs", 2.5)], [("train.lr0", "fast")],
                                   [("model.preset", "huge")], [("model.stages", 3)],
                                   [("loss.weights.x", 1)]])
def test_bad_keys_and_types(pairs):
    with pytest.raises(ConfigFileError):
        apply_pairs(RunConfig(), pairs)


def test_missing_file():
    with pytest.raises(ConfigFileError):
        load_run_config("/nonexistent/run.cfg")


def test_window_must_match_model_input():
    cfg = load_run_config(overrides=["augment.window_len=1200"])
    with pytest.raises(ValueError):
        cfg.validate()


def test_dump_round_trip(tmp_path):
    cfg = load_run_config(CONFIGS / "smoke.cfg", ["synth.planted_gap_days.anaemia=10.0"])
    text = dump_run_config(cfg)
    (tmp_path / "echo.cfg").write_text(text)
    again = load_run_config(tmp_path / "echo.cfg")
    assert again == cfg and dump_run_config(again) == text


def test_synth_spec_files():
    spec = load_synth_spec(CONFIGS / "synth_default.spec")
    assert spec == SynthSpec(n_subjects=2000, seed=0)
    smoke = load_synth_spec(CONFIGS / "smoke.spec", ["synth.dense_ratio=2.0"])
    assert smoke.n_subjects == 200 and smoke.seed == 1 and smoke.dense_ratio == 2.0
    assert load_synth_spec(None, [dump_synth_spec(smoke).splitlines()[0]]).n_subjects == 200


def test_synth_spec_unknown_key():
    with pytest.raises(ConfigFileError):
        load_synth_spec(None, ["n_subject=3"])


@pytest.mark.parametrize("name", ["smoke.cfg", "compact.cfg"])
def test_shipped_configs_validate(name):
    load_run_config(CONFIGS / name).validate()


@settings(max_examples=50, deadline=None)
@given(lr=st.floats(0, 1, allow_nan=False), epochs=st.integers(1, 500), seed=st.integers(0, 2**31))
def test_override_round_trip(lr, epochs, seed):
    cfg = load_run_config(overrides=[f"train.lr0={lr!r}", f"train.max_epochs={epochs}",
                                     f"train.seed={seed}"])
    assert (cfg.train.lr0, cfg.train.max_epochs, cfg.train.seed) == (lr, epochs, seed)
