import copy
import json

import pytest
import torch

from config.experiment import TrainingMode, load_experiment
from src.errors import ConfigurationError, DatasetError, RangeError
from src.evaluation.predictor import evaluate_model
from src.extractors.file_extractor import load_image_folder
from src.extractors.synthetic_extractor import SyntheticConfig, generate_synthetic, write_images
from src.loaders.batch_loader import build_data_loader
from src.loaders.checkpoint_loader import load_checkpoint
from src.models.detector import TRANSFER_PREFIXES, build_detector
from src.pipelines.comparison import compare_pretraining
from src.pipelines.scheduler import ScheduleMode, SSLWeightSchedule, ssl_weight
from src.pipelines.steps import (
    OptimConfig,
    build_optimizer,
    compute_detection_loss,
    compute_ssl_loss,
    detection_step,
    multitask_step,
    pretrain_step,
)
from src.pipelines.training_pipeline import CHECKPOINT_NAME, METRICS_NAME, read_metrics, run_training
from src.transformers.ssl_tasks import SSLTaskConfig, SSLTaskKind

TINY = {
    "data.image_size": 32,
    "data.synthetic.num_images": 8,
    "data.synthetic.num_val": 4,
    "data.synthetic.size_range": [6, 14],
    "model.backbone.downsampling_factor": 8,
    "model.backbone.feature_dim": 16,
    "model.detector.num_queries": 5,
    "model.detector.hidden_dim": 16,
    "model.detector.attention_heads": 2,
    "model.detector.encoder_layers": 1,
    "model.detector.decoder_layers": 1,
    "model.detector.feedforward_dim": 32,
    "optim.batch_size": 4,
    "optim.learning_rate": 1e-3,
    "optim.epochs": 2,
}


def tiny_experiment(**overrides):
    values = dict(TINY)
    values.update(overrides)
    return load_experiment(None, values)


def tiny_data(num_images=8, seed=0):
    return generate_synthetic(SyntheticConfig(num_images=num_images, image_size=32, size_range=(6, 14), seed=seed))


def first_batch(dataset, batch_size=4):
    return next(iter(build_data_loader(dataset, 32, 8, batch_size, num_workers=0)))


def test_constant_schedule():
    schedule = SSLWeightSchedule(0.7, ScheduleMode.CONSTANT, total_steps=10)
    assert [ssl_weight(schedule, step) for step in (0, 5, 10)] == [0.7, 0.7, 0.7]


def test_linear_schedule():
    schedule = SSLWeightSchedule(1.0, ScheduleMode.LINEAR, 0.0, total_steps=100)
    assert ssl_weight(schedule, 0) == 1.0
    assert ssl_weight(schedule, 50) == pytest.approx(0.5)
    assert ssl_weight(schedule, 100) == 0.0


def test_schedule_validation():
    with pytest.raises(RangeError):
        ssl_weight(SSLWeightSchedule(total_steps=3), 4)
    with pytest.raises(RangeError):
        SSLWeightSchedule(initial_weight=-1.0)
    with pytest.raises(ConfigurationError):
        SSLWeightSchedule(mode="cosine")
    assert SSLWeightSchedule(mode="linear").mode is ScheduleMode.LINEAR


def test_optim_config_validation():
    with pytest.raises(ConfigurationError):
        OptimConfig(optimizer="sgd")
    with pytest.raises(RangeError):
        OptimConfig(grad_clip_norm=0.0)


def test_pretrain_step_leaves_detection_heads_unchanged(tiny_configs):
    detector, backbone = tiny_configs
    task = SSLTaskConfig(SSLTaskKind.MIM_CONTINUOUS, 0.5)
    torch.manual_seed(0)
    model = build_detector(detector, backbone, task)
    before = copy.deepcopy(model.state_dict())
    optimizer = build_optimizer(model.ssl_parameters(), OptimConfig(learning_rate=1e-2))
    batch = first_batch(tiny_data())
    metrics = pretrain_step(model, batch.images, task, optimizer, 0.1, torch.Generator().manual_seed(0))

    assert metrics["loss"] == metrics["ssl_loss"] > 0
    after = model.state_dict()
    changed = {name for name in after if not torch.equal(after[name], before[name])}
    assert changed and all(name.startswith(TRANSFER_PREFIXES + ("ssl_head.",)) for name in changed)
    assert torch.equal(after["class_embed.weight"], before["class_embed.weight"])


def test_zero_learning_rate_leaves_parameters_unchanged(tiny_configs):
    detector, backbone = tiny_configs
    model = build_detector(detector, backbone)
    before = copy.deepcopy(model.state_dict())
    optimizer = build_optimizer(model.parameters(), OptimConfig(learning_rate=0.0))
    detection_step(model, first_batch(tiny_data()), optimizer)
    assert all(torch.equal(tensor, before[name]) for name, tensor in model.state_dict().items())


def test_gradient_norm_is_clipped(tiny_configs):
    detector, backbone = tiny_configs
    model = build_detector(detector, backbone)
    optimizer = build_optimizer(model.parameters(), OptimConfig(learning_rate=1e-3))
    metrics = detection_step(model, first_batch(tiny_data()), optimizer, grad_clip_norm=0.1)
    grads = [p.grad.detach().flatten() for p in model.parameters() if p.grad is not None]
    assert float(torch.cat(grads).norm()) <= 0.1 + 1e-6
    assert metrics["grad_norm"] > 0


def test_multitask_loss_is_detection_plus_weighted_ssl(tiny_configs):
    detector, backbone = tiny_configs
    task = SSLTaskConfig(SSLTaskKind.JIGSAW_DISCRETE, 0.5)
    torch.manual_seed(0)
    model = build_detector(detector, backbone, task)
    reference = copy.deepcopy(model)
    batch = first_batch(tiny_data())
    schedule = SSLWeightSchedule(0.5, ScheduleMode.CONSTANT, total_steps=0)

    with torch.no_grad():
        expected_det = float(compute_detection_loss(reference, batch).total)
        expected_ssl = float(compute_ssl_loss(reference, batch.images, task, torch.Generator().manual_seed(3)))
    optimizer = build_optimizer(model.parameters(), OptimConfig())
    metrics = multitask_step(model, batch, task, schedule, optimizer, 0, generator=torch.Generator().manual_seed(3))

    assert metrics["detection_loss"] == pytest.approx(expected_det, abs=1e-6)
    assert metrics["ssl_loss"] == pytest.approx(expected_ssl, abs=1e-6)
    assert metrics["ssl_weight"] == 0.5
    assert metrics["loss"] == pytest.approx(expected_det + 0.5 * expected_ssl, abs=1e-6)
    assert metrics["loss_ce"] + metrics["loss_bbox"] + metrics["loss_giou"] == pytest.approx(
        metrics["detection_loss"], abs=1e-6)


def test_zero_ssl_weight_matches_plain_detection_exactly(tiny_configs):
    detector, backbone = tiny_configs
    task = SSLTaskConfig(SSLTaskKind.MIM_CONTINUOUS, 0.5)
    torch.manual_seed(0)
    plain = build_detector(detector, backbone, task)
    multitask = copy.deepcopy(plain)
    plain_optimizer = build_optimizer(plain.parameters(), OptimConfig(learning_rate=1e-3))
    multitask_optimizer = build_optimizer(multitask.parameters(), OptimConfig(learning_rate=1e-3))
    schedule = SSLWeightSchedule(0.0, total_steps=9)
    batch = first_batch(tiny_data())

    for step in range(10):
        plain_metrics = detection_step(plain, batch, plain_optimizer)
        multitask_metrics = multitask_step(multitask, batch, task, schedule, multitask_optimizer, step)
        assert plain_metrics["loss"] == multitask_metrics["loss"]
    for name, tensor in plain.state_dict().items():
        assert torch.equal(tensor, multitask.state_dict()[name]), name


def test_detection_step_needs_annotations(tiny_configs):
    detector, backbone = tiny_configs
    model = build_detector(detector, backbone)
    batch = first_batch(tiny_data())
    batch.targets = batch.targets[:2]
    with pytest.raises(DatasetError):
        detection_step(model, batch, build_optimizer(model.parameters(), OptimConfig()))


def test_run_training_writes_one_row_per_epoch(tmp_path):
    config = tiny_experiment()
    result = run_training(config, tiny_data(), tmp_path, val=tiny_data(4, seed=9))
    rows = read_metrics(tmp_path / METRICS_NAME)
    assert len(rows) == 2 == len(result.rows)
    assert [row["epoch"] for row in rows] == [1, 2]
    assert rows[0]["mode"] == "finetune" and rows[0]["steps"] == 2
    assert "eval" in rows[-1] and -1.0 <= rows[-1]["eval"]["map"] <= 1.0
    assert all("seconds" not in key for row in rows for key in row)
    assert load_checkpoint(tmp_path / CHECKPOINT_NAME).epoch == 2
    first_line = (tmp_path / METRICS_NAME).read_text().splitlines()[0]
    assert first_line == json.dumps(rows[0], sort_keys=True)


def test_run_training_is_deterministic(tmp_path):
    config = tiny_experiment(**{"training.mode": "multitask", "ssl.task": "jigsaw_continuous",
                                "ssl.schedule.mode": "linear"})
    first = run_training(config, tiny_data(), tmp_path / "a")
    second = run_training(config, tiny_data(), tmp_path / "b")
    assert first.rows == second.rows
    assert first.rows[-1]["ssl_weight"] < first.rows[0]["ssl_weight"]
    for name, tensor in first.model.state_dict().items():
        assert torch.equal(tensor, second.model.state_dict()[name]), name


def test_resume_continues_like_an_uninterrupted_run(tmp_path):
    full = run_training(tiny_experiment(**{"optim.epochs": 3}), tiny_data(), tmp_path / "full")
    run_training(tiny_experiment(**{"optim.epochs": 2}), tiny_data(), tmp_path / "resumed")
    resumed = run_training(tiny_experiment(**{"optim.epochs": 3}), tiny_data(), tmp_path / "resumed", resume=True)

    assert len(read_metrics(tmp_path / "resumed" / METRICS_NAME)) == 3
    assert [row["loss"] for row in resumed.rows] == [row["loss"] for row in full.rows]
    for name, tensor in full.model.state_dict().items():
        assert torch.equal(tensor, resumed.model.state_dict()[name]), name


def test_pretrain_then_finetune_transfers_encoder(tmp_path):
    pretrain = run_training(tiny_experiment(**{"training.mode": "pretrain", "ssl.task": "mim_discrete",
                                               "optim.epochs": 1}), tiny_data(), tmp_path / "pre")
    assert pretrain.rows[0]["mode"] == "pretrain"
    assert "eval" not in pretrain.rows[0]
    stored = load_checkpoint(pretrain.checkpoint)
    assert stored.ssl.kind is SSLTaskKind.MIM_DISCRETE

    finetune = run_training(tiny_experiment(**{"optim.learning_rate": 0.0, "optim.epochs": 1}), tiny_data(),
                            tmp_path / "fine", init_checkpoint=pretrain.checkpoint)
    assert finetune.model.ssl_head is None
    state = finetune.model.state_dict()
    for name, tensor in stored.model_state.items():
        if name.startswith(TRANSFER_PREFIXES):
            assert torch.equal(state[name], tensor), name


def test_pretraining_accepts_unlabeled_folders(tmp_path):
    write_images(tiny_data(4), tmp_path / "images")
    folder = load_image_folder(tmp_path / "images")
    config = tiny_experiment(**{"training.mode": "pretrain", "ssl.task": "reconstruction", "optim.epochs": 1})
    assert config.mode is TrainingMode.PRETRAIN
    result = run_training(config, folder, tmp_path / "run")
    assert result.rows[0]["steps"] == 1
    with pytest.raises(DatasetError):
        run_training(tiny_experiment(), folder, tmp_path / "labels")


def test_empty_dataset_is_rejected(tmp_path):
    with pytest.raises(DatasetError):
        run_training(tiny_experiment(), tiny_data().subset([]), tmp_path)


@pytest.mark.slow
def test_detector_overfits_small_dataset(tmp_path):
    data = generate_synthetic(SyntheticConfig(num_images=16, image_size=64, objects_per_image=(1, 2),
                                              size_range=(16, 32), seed=0))
    config = load_experiment(None, {
        "data.image_size": 64,
        "model.backbone.downsampling_factor": 8,
        "model.detector.num_queries": 10,
        "optim.batch_size": 4,
        "optim.learning_rate": 5e-4,
        "optim.grad_clip_norm": 1.0,
        "optim.epochs": 125,
        "training.eval_every": 0,
    })
    result = run_training(config, data, tmp_path)
    assert evaluate_model(result.model, data).ap50 >= 0.9


@pytest.mark.slow
def test_pretraining_comparison_table(tmp_path):
    config = tiny_experiment(**{"ssl.task": "mim_continuous"})
    table = compare_pretraining(config, tmp_path, seeds=(0, 1), pretrain_epochs=1, finetune_epochs=1)
    assert list(table.columns) == ["seed", "scratch_ap", "pretrained_ap", "pretraining_helps"]
    assert table["seed"].tolist() == [0, 1]
    assert table[["scratch_ap", "pretrained_ap"]].le(1.0).all().all()
