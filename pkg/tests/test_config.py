from pathlib import Path

import pytest

from config.experiment import SCHEMA_VERSION, TrainingMode, dump_experiment, load_experiment
from src.errors import ConfigValidationError
from src.transformers.ssl_tasks import SSLTaskKind

CONFIG_DIR = Path(__file__).resolve().parent.parent / "config"


def _fields(excinfo):
    return dict(excinfo.value.errors)


@pytest.mark.parametrize("name,mode", [("pretrain.yaml", TrainingMode.PRETRAIN), ("train.yaml", TrainingMode.FINETUNE),
                                       ("multitask.yaml", TrainingMode.MULTITASK)])
def test_shipped_configs_load(name, mode):
    config = load_experiment(CONFIG_DIR / name)
    assert config.mode is mode
    assert config.data.image_size % config.model.backbone.downsampling_factor == 0


def test_defaults_are_valid():
    config = load_experiment()
    assert config.schema_version == SCHEMA_VERSION
    assert config.mode is TrainingMode.FINETUNE
    assert config.ssl_config() is None
    assert config.loss_weights().w_l1 == 5.0


def test_overrides_replace_file_values():
    config = load_experiment(CONFIG_DIR / "pretrain.yaml",
                             {"ssl.task": "jigsaw_discrete", "ssl.ratio": 0.25, "seed": 7, "optim.epochs": None})
    assert config.ssl_config().kind is SSLTaskKind.JIGSAW_DISCRETE
    assert config.ssl.ratio == 0.25
    assert config.seed == 7
    assert config.optim.epochs == 10


def test_unknown_keys_are_reported_with_their_path():
    with pytest.raises(ConfigValidationError) as excinfo:
        load_experiment(None, {"optim.lr": 0.1, "model.detector.layers": 3})
    assert _fields(excinfo) == {"optim.lr": "unknown key", "model.detector.layers": "unknown key"}


def test_type_errors_name_the_field():
    with pytest.raises(ConfigValidationError) as excinfo:
        load_experiment(None, {"optim.batch_size": "eight", "data.synthetic.size_range": [8]})
    fields = _fields(excinfo)
    assert fields["optim.batch_size"] == "expected int, got str"
    assert any(path.startswith("data.synthetic.size_range") for path in fields)


def test_field_errors_are_collected_together():
    with pytest.raises(ConfigValidationError) as excinfo:
        load_experiment(None, {"optim.grad_clip_norm": 0.0, "optim.optimizer": "sgd", "ssl.ratio": 1.5,
                               "model.detector.dropout": 1.0, "seed": -1})
    assert set(_fields(excinfo)) == {"optim.grad_clip_norm", "optim.optimizer", "ssl.ratio",
                                     "model.detector.dropout", "seed"}
    assert excinfo.value.details()["fields"][0]["path"]


def test_cross_section_errors_are_collected_together():
    with pytest.raises(ConfigValidationError) as excinfo:
        load_experiment(None, {"data.image_size": 100, "data.kind": "coco", "model.detector.hidden_dim": 30})
    fields = _fields(excinfo)
    assert "not divisible" in fields["data.image_size"]
    assert {"data.train_annotations", "model.detector"} <= set(fields)


def test_optimizer_name_is_case_insensitive():
    assert load_experiment(None, {"optim.optimizer": "AdamW"}).optim.optimizer == "adamw"


def test_empty_sections_take_defaults(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("data:\nssl:\n  schedule:\n")
    config = load_experiment(path)
    assert config.data.image_size == 128
    assert config.ssl.schedule.mode == "constant"


def test_section_must_be_a_mapping():
    with pytest.raises(ConfigValidationError) as excinfo:
        load_experiment(None, {"optim": 3})
    assert _fields(excinfo) == {"optim": "must be a mapping"}


def test_newer_schema_is_rejected():
    with pytest.raises(ConfigValidationError) as excinfo:
        load_experiment(None, {"schema_version": SCHEMA_VERSION + 1})
    assert "schema_version" in _fields(excinfo)


def test_pretrain_needs_a_task_and_a_nonzero_ratio():
    with pytest.raises(ConfigValidationError) as excinfo:
        load_experiment(None, {"training.mode": "pretrain"})
    assert "ssl.task" in _fields(excinfo)
    with pytest.raises(ConfigValidationError) as excinfo:
        load_experiment(None, {"training.mode": "pretrain", "ssl.task": "mim_continuous", "ssl.ratio": 0.0})
    assert "ssl.ratio" in _fields(excinfo)
    # reconstruction has no ratio to speak of
    load_experiment(None, {"training.mode": "pretrain", "ssl.task": "reconstruction", "ssl.ratio": 0.0})


def test_bad_task_and_mode_names():
    with pytest.raises(ConfigValidationError) as excinfo:
        load_experiment(None, {"training.mode": "multitask", "ssl.task": "rotation"})
    assert "ssl.task" in _fields(excinfo)
    with pytest.raises(ConfigValidationError) as excinfo:
        load_experiment(None, {"training.mode": "distill"})
    assert "training.mode" in _fields(excinfo)
    assert load_experiment(None, {"training.mode": "plain"}).mode is TrainingMode.FINETUNE


def test_folder_data_is_pretrain_only():
    with pytest.raises(ConfigValidationError) as excinfo:
        load_experiment(None, {"data.kind": "folder", "data.image_folder": "images"})
    assert "data.kind" in _fields(excinfo)
    config = load_experiment(None, {"data.kind": "folder", "data.image_folder": "images",
                                    "training.mode": "pretrain", "ssl.task": "mim_continuous"})
    assert config.mode is TrainingMode.PRETRAIN


def test_coco_data_needs_annotations():
    with pytest.raises(ConfigValidationError) as excinfo:
        load_experiment(None, {"data.kind": "coco"})
    assert "data.train_annotations" in _fields(excinfo)


def test_invalid_yaml_and_missing_file(tmp_path):
    broken = tmp_path / "broken.yaml"
    broken.write_text("optim: [unclosed\n")
    with pytest.raises(ConfigValidationError):
        load_experiment(broken)
    with pytest.raises(ConfigValidationError):
        load_experiment(tmp_path / "absent.yaml")
    listing = tmp_path / "list.yaml"
    listing.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigValidationError):
        load_experiment(listing)


def test_dump_then_load_round_trips(tmp_path):
    config = load_experiment(CONFIG_DIR / "multitask.yaml", {"seed": 3})
    assert load_experiment(dump_experiment(config, tmp_path / "out.yaml")) == config
