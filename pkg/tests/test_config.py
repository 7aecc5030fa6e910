"""Config loading: strict keys, derived fields, fingerprints."""

import json
from pathlib import Path

import jsonschema
import pytest

from dynafuse.config import (DEFAULTS, ENCODER_COMBOS, ExperimentConfig,
                             fingerprint, load_config, parse_config,
                             validate_config)
from dynafuse.errors import ConfigurationError


def test_defaults_parse_clean():
    cfg = parse_config({})
    assert cfg["encoders"] == "text_svd"
    assert cfg["semantic.variant"] == "text_aligned"
    assert cfg["fusion.dynamic_source"] == "denoiser"
    assert cfg["fusion.projector"] == "dynamic_mlp"
    assert cfg["frames"] == 8
    assert cfg["freeze"] == "frozen_both"


def test_unknown_key_reports_full_path():
    with pytest.raises(ConfigurationError) as err:
        parse_config({"train": {"learning_rate": 1e-3}})
    assert err.value.key_path == "train.learning_rate"
    with pytest.raises(ConfigurationError) as err:
        parse_config({"banana": 1})
    assert err.value.key_path == "banana"
    with pytest.raises(ConfigurationError) as err:
        parse_config({"semantic": {"tower": {"width": 4}}})
    assert err.value.key_path == "semantic.tower"


def test_type_errors_carry_paths():
    with pytest.raises(ConfigurationError) as err:
        parse_config({"frames": "eight"})
    assert err.value.key_path == "frames"
    with pytest.raises(ConfigurationError) as err:
        parse_config({"train": {"align_stage": 1}})
    assert err.value.key_path == "train.align_stage"
    with pytest.raises(ConfigurationError) as err:
        parse_config({"train": "fast"})
    assert err.value.key_path == "train"


def test_range_checks():
    with pytest.raises(ConfigurationError):
        parse_config({"frames": 0})
    with pytest.raises(ConfigurationError):
        parse_config({"frames": 99})
    with pytest.raises(ConfigurationError):
        parse_config({"train": {"peak_lr": -1.0}})
    with pytest.raises(ConfigurationError):
        parse_config({"train": {"warmup_ratio": 1.0}})
    with pytest.raises(ConfigurationError):
        parse_config({"schedule": {"sigma0": 1.0, "dsigma": -2.0}})


def test_encoder_combo_derivations():
    for combo, (variant, source, _off) in ENCODER_COMBOS.items():
        cfg = parse_config({"encoders": combo})
        assert cfg["semantic.variant"] == variant
        assert cfg["fusion.dynamic_source"] == source
    with pytest.raises(ConfigurationError):
        parse_config({"encoders": "resnet"})


def test_text2_offsets_semantic_pretrain_seed():
    base = parse_config({"encoders": "text_svd"})
    alt = parse_config({"encoders": "text2_svd"})
    assert alt["semantic.pretrain_seed"] == base["semantic.pretrain_seed"] + 1
    assert alt["semantic.variant"] == base["semantic.variant"] == "text_aligned"


def test_invalid_projector_source_combo_rejected_at_load():
    with pytest.raises(ConfigurationError) as err:
        parse_config({"encoders": "svd_only", "fusion": {"projector": "vae_conv_mlp"}})
    assert err.value.key_path == "fusion.projector"
    with pytest.raises(ConfigurationError):
        parse_config({"encoders": "vae_only", "fusion": {"projector": "dynamic_mlp"}})
    # explicit-but-consistent passes
    cfg = parse_config({"encoders": "vae_only", "fusion": {"projector": "vae_conv_mlp"}})
    assert cfg["fusion.projector"] == "vae_conv_mlp"


def test_view_rejected_as_training_task():
    with pytest.raises(ConfigurationError) as err:
        parse_config({"data": {"train_tasks": ["relation", "view"]}})
    assert "claim" in str(err.value)
    # claim is the single-image substitute and passes
    parse_config({"data": {"train_tasks": ["claim"]}})


def test_bad_task_names_rejected():
    with pytest.raises(ConfigurationError):
        parse_config({"data": {"train_tasks": ["sorting"]}})
    with pytest.raises(ConfigurationError):
        parse_config({"data": {"eval_tasks": []}})


def test_denoiser_spec_validated_at_load():
    with pytest.raises(ConfigurationError):
        parse_config({"denoiser": {"tap": "late"}})
    with pytest.raises(ConfigurationError):
        parse_config({"denoiser": {"depth": 2, "channel_multipliers": [1, 2, 4]}})


def test_seed_override_wins():
    cfg = parse_config({"seed": 3}, seed=7)
    assert cfg["seed"] == 7
    cfg = parse_config({"seed": 3})
    assert cfg["seed"] == 3


def test_fingerprint_stability_and_sensitivity():
    a = parse_config({})
    b = parse_config({})
    assert a.fingerprint == b.fingerprint
    assert len(a.fingerprint) == 64
    c = parse_config({"train": {"total_steps": 1501}})
    assert c.fingerprint != a.fingerprint
    d = parse_config({}, seed=1)
    assert d.fingerprint != a.fingerprint


def test_fingerprint_ignores_key_order():
    resolved = parse_config({}).raw
    shuffled = json.loads(json.dumps(resolved, sort_keys=True))
    assert fingerprint(resolved) == fingerprint(shuffled)


def test_defaults_not_mutated_by_parse():
    snapshot = json.dumps(DEFAULTS, sort_keys=True)
    parse_config({"encoders": "vae_only", "train": {"total_steps": 2}})
    assert json.dumps(DEFAULTS, sort_keys=True) == snapshot


def test_pretrain_subconfig_excludes_training_fields():
    a = parse_config({})
    b = parse_config({"train": {"total_steps": 99}, "seed": 5})
    assert a.pretrain_subconfig() == b.pretrain_subconfig()
    c = parse_config({"denoiser": {"pretrain_steps": 7}})
    assert c.pretrain_subconfig() != a.pretrain_subconfig()


def test_top_seed_does_not_touch_pretrain_subconfig():
    # seed sweeps must reuse pretraining caches
    assert (parse_config({}, seed=0).pretrain_subconfig()
            == parse_config({}, seed=4).pretrain_subconfig())


def test_config_helpers_round_trip():
    cfg = parse_config({"encoders": "vae_only"})
    mc = cfg.model_config()
    assert mc.variant == "none"
    assert mc.dynamic_source == "vae"
    tc = cfg.train_config()
    assert tc.total_steps == cfg["train.total_steps"]
    assert cfg.freeze_policy().policy == "frozen_both"
    sched = cfg.schedule()
    assert sched.sigma0 == 1.0 and sched.dsigma == -1.0
    spec = cfg.denoiser_spec()
    assert spec.base_width == cfg["denoiser.base_width"]


def test_load_config_from_file(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps({"encoders": "selfsup_svd", "frames": 4}))
    cfg = load_config(path)
    assert cfg["encoders"] == "selfsup_svd"
    assert cfg["frames"] == 4
    assert cfg["semantic.variant"] == "self_supervised"


def test_load_config_rejects_bad_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ConfigurationError):
        load_config(path)


def test_validate_config_is_idempotent():
    cfg = parse_config({})
    again = validate_config(json.loads(json.dumps(cfg.raw)))
    assert again == cfg.raw


def test_ablation_axis_validation():
    with pytest.raises(ConfigurationError):
        parse_config({"ablation": {"encoders": ["cnn_only"]}})
    with pytest.raises(ConfigurationError):
        parse_config({"ablation": {"align": [1, 0]}})
    cfg = parse_config({"ablation": {"encoders": ["vae_only"], "align": [False]}})
    assert cfg["ablation.encoders"] == ["vae_only"]


# --- published schema stays in sync with the parser -------------------------------


def _schema() -> dict:
    path = Path(__file__).resolve().parents[1] / "docs" / "config.schema.json"
    return json.loads(path.read_text())


def test_schema_mirrors_default_keys():
    schema = _schema()
    assert set(schema["properties"]) == set(DEFAULTS)
    for section, value in DEFAULTS.items():
        if isinstance(value, dict):
            node = schema["properties"][section]
            assert node.get("additionalProperties") is False, section
            assert set(node["properties"]) == set(value), section


def test_schema_defaults_match_package_defaults():
    def walk(props, defaults, path):
        for key, sub in props.items():
            value = defaults[key]
            if isinstance(value, dict):
                walk(sub["properties"], value, f"{path}{key}.")
            else:
                assert sub["default"] == value, f"{path}{key}"

    walk(_schema()["properties"], DEFAULTS, "")


def test_defaults_validate_against_schema():
    jsonschema.validate(json.loads(json.dumps(DEFAULTS)), _schema())


def test_schema_and_parser_agree_on_unknown_keys():
    bad = {"train": {"learning_rate": 0.1}}
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate(bad, _schema())
    with pytest.raises(ConfigurationError):
        parse_config(bad)


def test_schema_and_parser_agree_on_view_training_rule():
    overrides = {"data": {"train_tasks": ["view"]}}
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate(overrides, _schema())
    with pytest.raises(ConfigurationError):
        parse_config(overrides)
