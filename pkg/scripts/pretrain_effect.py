#!/usr/bin/env python3
"""
Pre-training Effect Script
Compares SSL pre-training + fine-tuning against a from-scratch detector on synthetic data
"""
import sys
import os

# Add the project root to the path
sys.path.append(os.path.dirname(os.path.dirname(__file__)))

import click

from config.experiment import load_experiment
from config.settings import setup_logging
from src.pipelines.comparison import compare_pretraining


@click.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False, exists=True),
              default=os.path.join(os.path.dirname(os.path.dirname(__file__)), "config", "pretrain.yaml"),
              show_default=True)
@click.option("--ssl-task", default="mim_continuous", show_default=True)
@click.option("--ssl-ratio", type=float, default=0.5, show_default=True)
@click.option("--seeds", default="0,1,2", show_default=True)
@click.option("--epochs", type=int, default=10, show_default=True)
@click.option("--work-dir", type=click.Path(file_okay=False), default="runs/pretrain_effect", show_default=True)
def main(config_path, ssl_task, ssl_ratio, seeds, epochs, work_dir):
    setup_logging()
    print("🚀 Pre-training effect experiment")
    print("=" * 50)
    config = load_experiment(config_path, {"ssl.task": ssl_task, "ssl.ratio": ssl_ratio,
                                           "training.mode": "pretrain"})
    table = compare_pretraining(config, work_dir, [int(s) for s in seeds.split(",")], epochs, epochs)
    print(table.to_string(index=False))
    wins = int(table["pretraining_helps"].sum())
    status = "✅" if wins >= 2 else "❌"
    print(f"\n{status} Pre-training matched or beat scratch on {wins}/{len(table)} seeds")


if __name__ == "__main__":
    main()
