import numpy as np
import pytest
import torch

from src.errors import ConfigurationError
from src.models.detector import build_detector
from src.transformers.patch_grid import compute_grid
from src.transformers.ssl_tasks import SSLTaskConfig, SSLTaskKind
from src.transformers.tokenizer import ColorQuantizerTokenizer
from src.visualization.ssl_panels import render_prediction, ssl_panels, visualize_ssl

GRID = compute_grid(32, 32, 8)


def test_jigsaw_discrete_prediction_is_a_label_map():
    task = SSLTaskConfig(SSLTaskKind.JIGSAW_DISCRETE, 0.5)
    logits = torch.zeros(GRID.num_patches, GRID.num_patches)
    logits[torch.arange(16), torch.arange(16).flip(0)] = 1.0
    labels = render_prediction(logits, task, GRID)
    assert labels.shape == (4, 4)
    assert labels[0, 0] == 15 and labels[3, 3] == 0


def test_mim_discrete_prediction_uses_the_palette():
    tokenizer = ColorQuantizerTokenizer(4)
    task = SSLTaskConfig(SSLTaskKind.MIM_DISCRETE, 0.5, tokenizer)
    logits = torch.zeros(GRID.num_patches, tokenizer.vocabulary_size)
    logits[:, 0] = 1.0
    image = render_prediction(logits, task, GRID)
    assert image.shape == (32, 32, 3)
    assert np.allclose(image, image[0, 0])
    assert image.max() <= 1.0 and image.min() >= 0.0


def test_mim_discrete_needs_a_palette():
    class NoPalette:
        vocabulary_size = 4

        def encode(self, patches):
            return torch.zeros(patches.shape[0], dtype=torch.long)

    task = SSLTaskConfig(SSLTaskKind.MIM_DISCRETE, 0.5, NoPalette())
    with pytest.raises(ConfigurationError):
        render_prediction(torch.zeros(GRID.num_patches, 4), task, GRID)


@pytest.mark.parametrize("kind", [SSLTaskKind.RECONSTRUCTION, SSLTaskKind.MIM_CONTINUOUS,
                                  SSLTaskKind.JIGSAW_CONTINUOUS, SSLTaskKind.JIGSAW_DISCRETE])
def test_panels_have_one_entry_per_image(kind, tiny_configs, generator):
    detector, backbone = tiny_configs
    task = SSLTaskConfig(kind, 0.5)
    model = build_detector(detector, backbone, task)
    model.train()
    images = torch.rand(2, 3, 32, 32, generator=generator)
    panels = ssl_panels(model, images, task, generator)
    assert len(panels) == 2
    assert model.training
    for panel, image in zip(panels, images):
        assert np.allclose(panel.original, image.permute(1, 2, 0).numpy())
        assert panel.input.shape == (32, 32, 3)
        assert panel.prediction_is_label_map == (kind is SSLTaskKind.JIGSAW_DISCRETE)


def test_visualize_writes_one_png_per_image(tmp_path, tiny_configs, generator):
    detector, backbone = tiny_configs
    task = SSLTaskConfig(SSLTaskKind.MIM_DISCRETE, 0.3, ColorQuantizerTokenizer(4))
    model = build_detector(detector, backbone, task)
    written = visualize_ssl(model, torch.rand(3, 3, 32, 32, generator=generator), task, tmp_path / "panels",
                            names=["a", "b", "c"])
    assert [path.name for path in written] == ["ssl_a.png", "ssl_b.png", "ssl_c.png"]
    assert all(path.stat().st_size > 0 for path in written)
