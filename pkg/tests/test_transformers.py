import numpy as np
import pytest
import torch

from src.errors import ConfigurationError, DimensionError, ShapeError
from src.transformers.data_validator import ValidationReport, clamp_xywh
from src.transformers.preprocessing import (
    IMAGENET_MEAN,
    IMAGENET_STD,
    normalize,
    resize_and_normalize,
    resize_image,
    to_tensor_image,
)
from src.transformers.tokenizer import ColorQuantizerTokenizer, VisualTokenizer


def test_to_tensor_image_scales_uint8():
    array = np.full((4, 6, 3), 255, dtype=np.uint8)
    tensor = to_tensor_image(array)
    assert tensor.shape == (3, 4, 6)
    assert torch.all(tensor == 1.0)


def test_to_tensor_image_expands_grayscale():
    tensor = to_tensor_image(np.zeros((5, 5), dtype=np.uint8))
    assert tensor.shape == (3, 5, 5)


def test_to_tensor_image_rejects_bad_rank():
    with pytest.raises(ShapeError):
        to_tensor_image(np.zeros((2, 2, 2, 3), dtype=np.uint8))


def test_normalize_uses_imagenet_statistics():
    pixels = torch.tensor(IMAGENET_MEAN).view(3, 1, 1).expand(3, 2, 2).clone()
    assert torch.allclose(normalize(pixels), torch.zeros(3, 2, 2), atol=1e-6)
    batch = torch.ones(2, 3, 2, 2)
    expected = (1 - torch.tensor(IMAGENET_MEAN)) / torch.tensor(IMAGENET_STD)
    assert torch.allclose(normalize(batch)[1, :, 0, 0], expected)


def test_resize_is_identity_at_target_size():
    pixels = torch.rand(3, 32, 32)
    assert resize_image(pixels, (32, 32)) is pixels


def test_resize_and_normalize_keeps_raw_pixels_and_boxes():
    pixels = torch.rand(3, 50, 70)
    boxes = torch.tensor([[0.5, 0.5, 0.2, 0.4]])
    prepared = resize_and_normalize(pixels, 64, 32, boxes)
    assert prepared.pixels.shape == (3, 64, 64)
    assert float(prepared.pixels.min()) >= 0.0 and float(prepared.pixels.max()) <= 1.0
    assert torch.allclose(prepared.normalized, normalize(prepared.pixels))
    assert torch.equal(prepared.boxes, boxes)
    assert prepared.boxes is not boxes


def test_resize_and_normalize_rejects_non_divisible_size():
    with pytest.raises(DimensionError):
        resize_and_normalize(torch.rand(3, 10, 10), (64, 48), 32)


def test_tokenizer_vocabulary_and_protocol():
    tokenizer = ColorQuantizerTokenizer()
    assert tokenizer.vocabulary_size == 512
    assert isinstance(tokenizer, VisualTokenizer)
    with pytest.raises(ConfigurationError):
        ColorQuantizerTokenizer(0)


def test_tokenizer_maps_extreme_colours_to_corner_tokens():
    tokenizer = ColorQuantizerTokenizer(4)
    patches = torch.stack([torch.zeros(3, 8, 8), torch.ones(3, 8, 8)])
    assert tokenizer.encode(patches).tolist() == [0, 63]


def test_tokenizer_palette_round_trips_through_encode():
    tokenizer = ColorQuantizerTokenizer(4)
    palette = tokenizer.palette()
    patches = palette[:, :, None, None].expand(-1, -1, 2, 2)
    assert tokenizer.encode(patches).tolist() == list(range(64))


def test_tokenizer_rejects_wrong_channels():
    with pytest.raises(ShapeError):
        ColorQuantizerTokenizer().encode(torch.rand(2, 1, 4, 4))


def test_clamp_xywh():
    assert clamp_xywh((10, 20, 30, 40), 100, 100) == ((10.0, 20.0, 30.0, 40.0), False)
    assert clamp_xywh((-5, 90, 20, 20), 100, 100) == ((0.0, 90.0, 15.0, 10.0), True)
    assert clamp_xywh((120, 10, 5, 5), 100, 100) == (None, True)


def test_validation_report_crowd_does_not_make_it_dirty():
    report = ValidationReport(crowd_annotations=2)
    assert report.is_clean
    assert report.to_dict()["crowd_annotations"] == 2
    report.unknown_categories.extend([7, 7])
    assert not report.is_clean
    assert report.to_dict()["unknown_categories"] == [7]
