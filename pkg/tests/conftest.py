import json
import os
import sys
from pathlib import Path

import pytest
import torch

# Add the project root to the path
sys.path.append(os.path.dirname(os.path.dirname(__file__)))

from src.models.base import BackboneConfig, DetectorConfig  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def coco_micro():
    gt = json.loads((FIXTURES / "coco_micro_gt.json").read_text())
    results = json.loads((FIXTURES / "coco_micro_results.json").read_text())
    golden = json.loads((FIXTURES / "coco_micro_golden.json").read_text())
    return gt, results, golden


@pytest.fixture
def tiny_configs():
    """32x32 images, f=8 -> 4x4 grid, toy widths"""
    backbone = BackboneConfig(downsampling_factor=8, feature_dim=16)
    detector = DetectorConfig(num_classes=3, num_queries=5, hidden_dim=16, attention_heads=2,
                              encoder_layers=1, decoder_layers=1, feedforward_dim=32, image_size=32)
    return detector, backbone


@pytest.fixture
def generator():
    return torch.Generator().manual_seed(1234)
