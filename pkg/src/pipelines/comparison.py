"""
Pre-train-then-fine-tune versus from-scratch, at desk scale.

For each seed: a from-scratch detector trained for N epochs, and the same
detector initialised from an SSL pre-training run of M epochs, both scored on
the validation split after their last epoch.
"""
import logging
from pathlib import Path
from typing import Sequence, Union

import pandas as pd

from config.experiment import ExperimentConfig, TrainingMode
from src.extractors.sources import load_datasets
from src.pipelines.training_pipeline import run_training

logger = logging.getLogger(__name__)


def _with(config: ExperimentConfig, seed: int, mode: TrainingMode, epochs: int) -> ExperimentConfig:
    return config.model_copy(update={
        "seed": seed,
        "optim": config.optim.model_copy(update={"epochs": epochs}),
        "training": config.training.model_copy(update={"mode": mode.value, "init": None, "eval_every": epochs}),
    })


def compare_pretraining(config: ExperimentConfig, work_dir: Union[str, Path], seeds: Sequence[int] = (0, 1, 2),
                        pretrain_epochs: int = 10, finetune_epochs: int = 10) -> pd.DataFrame:
    """One row per seed with scratch and pre-trained validation AP"""
    work_dir = Path(work_dir)
    rows = []
    for seed in seeds:
        train, val = load_datasets(config.data, seed)
        scratch_dir = work_dir / f"seed{seed}" / "scratch"
        pretrain_dir = work_dir / f"seed{seed}" / "pretrain"
        finetune_dir = work_dir / f"seed{seed}" / "finetune"
        for path in (scratch_dir, pretrain_dir, finetune_dir):
            path.mkdir(parents=True, exist_ok=True)

        scratch = run_training(_with(config, seed, TrainingMode.FINETUNE, finetune_epochs), train, scratch_dir, val=val)
        pretrained = run_training(_with(config, seed, TrainingMode.PRETRAIN, pretrain_epochs), train, pretrain_dir)
        finetuned = run_training(_with(config, seed, TrainingMode.FINETUNE, finetune_epochs), train, finetune_dir,
                                 val=val, init_checkpoint=pretrained.checkpoint)

        scratch_ap = scratch.rows[-1]["eval"]["map"]
        finetuned_ap = finetuned.rows[-1]["eval"]["map"]
        logger.info("Seed %d: scratch AP %.4f, pre-trained AP %.4f", seed, scratch_ap, finetuned_ap)
        rows.append({"seed": seed, "scratch_ap": scratch_ap, "pretrained_ap": finetuned_ap,
                     "pretraining_helps": finetuned_ap >= scratch_ap})
    return pd.DataFrame(rows, columns=["seed", "scratch_ap", "pretrained_ap", "pretraining_helps"])
