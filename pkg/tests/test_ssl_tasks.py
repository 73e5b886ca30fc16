import pytest
import torch

from src.errors import ConfigurationError, RangeError, ShapeError
from src.transformers.patch_grid import apply_permutation, compute_grid, extract_patches
from src.transformers.ssl_tasks import (
    SSLSample,
    SSLTaskConfig,
    SSLTaskKind,
    batch_ssl_loss,
    jigsaw_position_labels,
    make_jigsaw_continuous,
    make_jigsaw_discrete,
    make_mim_continuous,
    make_mim_discrete,
    make_reconstruction,
    make_ssl_sample,
    ssl_loss,
)
from src.transformers.tokenizer import ColorQuantizerTokenizer

GRID = compute_grid(64, 64, 16)


def _config(kind: SSLTaskKind, ratio: float = 0.5) -> SSLTaskConfig:
    tokenizer = ColorQuantizerTokenizer(4) if kind is SSLTaskKind.MIM_DISCRETE else None
    return SSLTaskConfig(kind, ratio, tokenizer)


def _prediction_for(sample: SSLSample, config: SSLTaskConfig, generator: torch.Generator) -> torch.Tensor:
    if config.kind is SSLTaskKind.MIM_DISCRETE:
        shape = (GRID.num_patches, config.tokenizer.vocabulary_size)
    elif config.kind is SSLTaskKind.JIGSAW_DISCRETE:
        shape = (GRID.num_patches, GRID.num_patches)
    else:
        shape = tuple(sample.target.shape)
    return torch.rand(shape, generator=generator, dtype=torch.float64)


def _unselected(indices, grid=GRID):
    return [p for p in range(grid.num_patches) if p not in set(indices)]


def test_task_kind_parse_accepts_dashes():
    assert SSLTaskKind.parse("MIM-Continuous") is SSLTaskKind.MIM_CONTINUOUS
    with pytest.raises(ConfigurationError):
        SSLTaskKind.parse("rotation")


def test_task_config_validates_tokenizer_and_ratio():
    with pytest.raises(ConfigurationError):
        SSLTaskConfig(SSLTaskKind.MIM_DISCRETE)
    with pytest.raises(ConfigurationError):
        SSLTaskConfig(SSLTaskKind.JIGSAW_DISCRETE, tokenizer=ColorQuantizerTokenizer())
    with pytest.raises(RangeError):
        SSLTaskConfig(SSLTaskKind.MIM_CONTINUOUS, ratio=-0.1)


def test_reconstruction_is_identity_with_full_loss_indices():
    image = torch.rand(3, 64, 64)
    sample = make_reconstruction(image, GRID)
    assert torch.equal(sample.input_image, image)
    assert torch.equal(sample.target, image)
    assert sample.loss_indices == tuple(range(16))


def test_mim_fills_selected_patches_with_channel_mean(generator):
    image = torch.rand(3, 64, 64)
    sample = make_mim_continuous(image, GRID, 0.5, generator)
    assert len(sample.loss_indices) == 8
    mean = image.mean(dim=(1, 2))
    masked = extract_patches(sample.input_image, GRID)
    original = extract_patches(image, GRID)
    for p in sample.loss_indices:
        assert torch.allclose(masked[p], mean[:, None, None].expand(3, 16, 16))
    for p in _unselected(sample.loss_indices):
        assert torch.equal(masked[p], original[p])
    assert torch.equal(sample.target, image)


def test_mim_with_zero_ratio_leaves_image_and_has_no_loss(generator):
    image = torch.rand(3, 64, 64)
    sample = make_mim_continuous(image, GRID, 0.0, generator)
    assert sample.loss_indices == ()
    assert torch.equal(sample.input_image, image)
    loss = ssl_loss(torch.rand(3, 64, 64), sample, GRID)
    assert float(loss) == 0.0


def test_mim_discrete_targets_are_tokens_of_original_patches(generator):
    tokenizer = ColorQuantizerTokenizer(8)
    image = torch.rand(3, 64, 64)
    sample = make_mim_discrete(image, GRID, 0.25, tokenizer, generator)
    expected = tokenizer.encode(extract_patches(image, GRID)[list(sample.loss_indices)])
    assert torch.equal(sample.target, expected)
    assert sample.target.dtype == torch.long
    assert int(sample.target.max()) < tokenizer.vocabulary_size


def test_mim_discrete_requires_tokenizer(generator):
    with pytest.raises(ConfigurationError):
        make_mim_discrete(torch.rand(3, 64, 64), GRID, 0.5, None, generator)


def test_jigsaw_moves_only_selected_patches(generator):
    image = torch.rand(3, 64, 64)
    sample = make_jigsaw_continuous(image, GRID, 0.5, generator)
    shuffled = extract_patches(sample.input_image, GRID)
    original = extract_patches(image, GRID)
    for p in _unselected(sample.loss_indices):
        assert torch.equal(shuffled[p], original[p])
    # selected patches are a rearrangement of themselves
    indices = sample.permutation.selection.indices
    for source, destination in enumerate(sample.permutation.mapping):
        assert torch.equal(shuffled[indices[destination]], original[indices[source]])
    assert not sample.permutation.is_identity()


def test_jigsaw_with_two_patches_swaps_them():
    grid = compute_grid(32, 64, 32)
    image = torch.zeros(3, 32, 64)
    image[:, :, 32:] = 1.0
    sample = make_jigsaw_continuous(image, grid, 1.0, torch.Generator().manual_seed(0))
    assert torch.equal(sample.input_image[:, :, :32], torch.ones(3, 32, 32))
    assert torch.equal(sample.input_image[:, :, 32:], torch.zeros(3, 32, 32))


def test_jigsaw_discrete_labels_match_brute_force_inversion(generator):
    for _ in range(10):
        image = torch.rand(3, 64, 64)
        sample = make_jigsaw_discrete(image, GRID, 0.5, generator)
        shuffled = extract_patches(sample.input_image, GRID)
        original = extract_patches(image, GRID)
        for slot, position in enumerate(sample.permutation.selection.indices):
            # which original grid patch now sits at this position?
            source = [q for q in range(GRID.num_patches) if torch.equal(original[q], shuffled[position])]
            assert source == [int(sample.target[slot])]


def test_jigsaw_position_labels_for_known_permutation():
    from src.transformers.patch_grid import PatchPermutation, PatchSelection

    selection = PatchSelection(GRID, (2, 5, 9), 0.2)
    # slot 0 -> slot 1, slot 1 -> slot 2, slot 2 -> slot 0
    permutation = PatchPermutation(selection, (1, 2, 0))
    assert jigsaw_position_labels(permutation).tolist() == [9, 2, 5]


def test_make_ssl_sample_dispatches_on_kind(generator):
    image = torch.rand(3, 64, 64)
    for kind in SSLTaskKind:
        sample = make_ssl_sample(_config(kind), image, GRID, generator)
        assert sample.kind is kind
        assert sample.input_image.shape == image.shape


def test_ssl_samples_are_deterministic_per_seed():
    image = torch.rand(3, 64, 64)
    for kind in SSLTaskKind:
        first = make_ssl_sample(_config(kind), image, GRID, torch.Generator().manual_seed(5))
        second = make_ssl_sample(_config(kind), image, GRID, torch.Generator().manual_seed(5))
        assert torch.equal(first.input_image, second.input_image)
        assert torch.equal(first.target, second.target)
        assert first.loss_indices == second.loss_indices


def test_l1_loss_averages_over_loss_patches():
    grid = compute_grid(2, 4, 2)
    target = torch.zeros(3, 2, 4, dtype=torch.float64)
    prediction = target.clone()
    prediction[:, :, :2] = 0.2
    prediction[:, :, 2:] = -0.4
    sample = SSLSample(SSLTaskKind.MIM_CONTINUOUS, target, target, (0, 1))
    assert float(ssl_loss(prediction, sample, grid)) == pytest.approx(0.3)


def test_single_token_vocabulary_gives_zero_cross_entropy(generator):
    tokenizer = ColorQuantizerTokenizer(bins_per_channel=1)
    assert tokenizer.vocabulary_size == 1
    sample = make_mim_discrete(torch.rand(3, 64, 64), GRID, 0.5, tokenizer, generator)
    assert set(sample.target.tolist()) == {0}
    logits = torch.randn(GRID.num_patches, 1)
    assert float(ssl_loss(logits, sample, GRID)) == 0.0


def test_loss_rejects_mismatched_prediction(generator):
    sample = make_mim_continuous(torch.rand(3, 64, 64), GRID, 0.5, generator)
    with pytest.raises(ShapeError):
        ssl_loss(torch.rand(3, 32, 32), sample, GRID)
    discrete = make_jigsaw_discrete(torch.rand(3, 64, 64), GRID, 0.5, generator)
    with pytest.raises(ShapeError):
        ssl_loss(torch.rand(GRID.num_patches, 4), discrete, GRID)


@pytest.mark.parametrize("kind", list(SSLTaskKind))
def test_loss_gradient_is_zero_outside_loss_patches(kind):
    generator = torch.Generator().manual_seed(11)
    config = _config(kind)
    for _ in range(20):
        image = torch.rand(3, 64, 64, generator=generator)
        sample = make_ssl_sample(config, image, GRID, generator)
        prediction = _prediction_for(sample, config, generator).requires_grad_(True)
        ssl_loss(prediction, sample, GRID).backward()
        outside = _unselected(sample.loss_indices)
        if kind.is_discrete:
            grad = prediction.grad[outside]
        else:
            grad = extract_patches(prediction.grad, GRID)[outside]
        if outside:
            assert float(grad.abs().max()) == 0.0


@pytest.mark.parametrize("kind", [SSLTaskKind.MIM_CONTINUOUS, SSLTaskKind.JIGSAW_CONTINUOUS,
                                  SSLTaskKind.MIM_DISCRETE, SSLTaskKind.JIGSAW_DISCRETE])
def test_loss_is_unchanged_by_perturbing_unselected_outputs(kind):
    generator = torch.Generator().manual_seed(3)
    config = _config(kind)
    eps = 1e-3
    for _ in range(20):
        image = torch.rand(3, 64, 64, generator=generator)
        sample = make_ssl_sample(config, image, GRID, generator)
        prediction = _prediction_for(sample, config, generator)
        base = float(ssl_loss(prediction, sample, GRID))
        for p in _unselected(sample.loss_indices)[:3]:
            bumped = prediction.clone()
            if kind.is_discrete:
                bumped[p] += eps
            else:
                r, c = GRID.row_col(p)
                bumped[:, r * 16:(r + 1) * 16, c * 16:(c + 1) * 16] += eps
            # finite-difference derivative w.r.t. an output outside the loss patches
            assert abs(float(ssl_loss(bumped, sample, GRID)) - base) / eps < 1e-6


def test_loss_gradient_matches_finite_differences_inside_loss_patches(generator):
    config = _config(SSLTaskKind.JIGSAW_DISCRETE)
    sample = make_ssl_sample(config, torch.rand(3, 64, 64), GRID, generator)
    prediction = torch.randn(GRID.num_patches, GRID.num_patches, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda x: ssl_loss(x, sample, GRID), (prediction,))


def test_batch_loss_is_mean_of_sample_losses(generator):
    config = _config(SSLTaskKind.MIM_CONTINUOUS)
    images = torch.rand(3, 3, 64, 64)
    samples = [make_ssl_sample(config, image, GRID, generator) for image in images]
    predictions = torch.rand(3, 3, 64, 64)
    expected = sum(float(ssl_loss(p, s, GRID)) for p, s in zip(predictions, samples)) / 3
    assert float(batch_ssl_loss(predictions, samples, GRID)) == pytest.approx(expected, rel=1e-6)
    with pytest.raises(ShapeError):
        batch_ssl_loss(predictions[:2], samples, GRID)


def test_every_patch_is_reachable_by_selection():
    grid = compute_grid(32, 64, 16)  # 8 patches
    seen = set()
    for seed in range(200):
        seen.update(make_mim_continuous(torch.rand(3, 32, 64), grid, 0.25,
                                        torch.Generator().manual_seed(seed)).loss_indices)
    assert seen == set(range(8))


def test_transforms_on_randomized_grids():
    rng = torch.Generator().manual_seed(99)
    for case in range(1000):
        factor = (4, 8)[case % 2]
        rows, cols = (int(v) for v in torch.randint(1, 5, (2,), generator=rng))
        grid = compute_grid(rows * factor, cols * factor, factor)
        image = torch.rand(3, grid.image_height, grid.image_width, generator=rng)
        ratio = float(torch.rand(1, generator=rng))
        original = extract_patches(image, grid)

        masked = make_mim_continuous(image, grid, ratio, rng)
        patches = extract_patches(masked.input_image, grid)
        mean = image.mean(dim=(1, 2))[:, None, None]
        for p in range(grid.num_patches):
            if p in masked.loss_indices:
                assert torch.allclose(patches[p], mean.expand_as(patches[p]), atol=1e-6, rtol=0)
            else:
                assert torch.equal(patches[p], original[p])

        shuffled = make_jigsaw_continuous(image, grid, ratio, rng)
        patches = extract_patches(shuffled.input_image, grid)
        for p in _unselected(shuffled.loss_indices, grid):
            assert torch.equal(patches[p], original[p])
        restored = apply_permutation(patches, shuffled.permutation.inverse())
        assert torch.equal(restored, original)
