"""
Side-by-side panels of SSL behaviour: original image, transformed input, and
what the encoder's SSL head predicts from that input.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import torch  # noqa: E402

from src.errors import ConfigurationError  # noqa: E402
from src.models.detector import SSLDetector  # noqa: E402
from src.transformers.patch_grid import PatchGrid, reassemble_patches  # noqa: E402
from src.transformers.preprocessing import normalize  # noqa: E402
from src.transformers.ssl_tasks import SSLTaskConfig, SSLTaskKind, make_ssl_sample  # noqa: E402

logger = logging.getLogger(__name__)


@dataclass
class SSLPanel:
    original: np.ndarray    # HxWx3 in [0, 1]
    input: np.ndarray       # HxWx3 in [0, 1]
    prediction: np.ndarray  # HxWx3 in [0, 1], or rows x cols label map for jigsaw_discrete
    kind: SSLTaskKind

    @property
    def prediction_is_label_map(self) -> bool:
        return self.kind is SSLTaskKind.JIGSAW_DISCRETE


def _to_hwc(image: torch.Tensor) -> np.ndarray:
    return image.detach().clamp(0.0, 1.0).permute(1, 2, 0).cpu().numpy()


def render_prediction(prediction: torch.Tensor, task: SSLTaskConfig, grid: PatchGrid) -> np.ndarray:
    """One sample's head output as something imshow can draw"""
    if task.kind is SSLTaskKind.JIGSAW_DISCRETE:
        labels = prediction.argmax(-1)
        return labels.reshape(grid.rows, grid.cols).cpu().numpy()
    if task.kind is SSLTaskKind.MIM_DISCRETE:
        palette_fn = getattr(task.tokenizer, "palette", None)
        if palette_fn is None:
            raise ConfigurationError("mim_discrete panels need a tokenizer with a palette")
        colors = palette_fn()[prediction.argmax(-1).cpu()]
        f = grid.patch_size
        patches = colors[:, :, None, None].expand(-1, -1, f, f)
        return _to_hwc(reassemble_patches(patches.contiguous(), grid))
    return _to_hwc(prediction)


def ssl_panels(model: SSLDetector, images: torch.Tensor, task: SSLTaskConfig,
               generator: Optional[torch.Generator] = None) -> List[SSLPanel]:
    """(B, 3, H, W) raw images -> one panel per image"""
    grid = model.grid_for(images)
    samples = [make_ssl_sample(task, image, grid, generator) for image in images]
    inputs = torch.stack([sample.input_image for sample in samples])
    was_training = model.training
    model.eval()
    with torch.no_grad():
        predictions = model.predict_ssl(normalize(inputs), task.kind)
    model.train(was_training)
    return [
        SSLPanel(_to_hwc(image), _to_hwc(sample.input_image), render_prediction(prediction, task, grid), task.kind)
        for image, sample, prediction in zip(images, samples, predictions)
    ]


def save_panel(panel: SSLPanel, path: Union[str, Path], title: Optional[str] = None) -> Path:
    path = Path(path)
    fig, axes = plt.subplots(1, 3, figsize=(9, 3.2))
    axes[0].imshow(panel.original)
    axes[0].set_title("original")
    axes[1].imshow(panel.input)
    axes[1].set_title(f"input ({panel.kind.value})")
    if panel.prediction_is_label_map:
        heat = axes[2].imshow(panel.prediction, cmap="viridis", interpolation="nearest")
        fig.colorbar(heat, ax=axes[2], fraction=0.046, pad=0.04)
        axes[2].set_title("predicted position")
    else:
        axes[2].imshow(panel.prediction)
        axes[2].set_title("prediction")
    for ax in axes:
        ax.axis("off")
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def visualize_ssl(model: SSLDetector, images: torch.Tensor, task: SSLTaskConfig, output_dir: Union[str, Path],
                  names: Optional[Sequence[str]] = None, generator: Optional[torch.Generator] = None) -> List[Path]:
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    names = list(names) if names is not None else [f"{index:04d}" for index in range(len(images))]
    written = [save_panel(panel, output_dir / f"ssl_{name}.png", title=name)
               for panel, name in zip(ssl_panels(model, images, task, generator), names)]
    logger.info("Wrote %d SSL panels to %s", len(written), output_dir)
    return written
