import torch
from torch import nn

from src.errors import ConfigurationError
from src.models.base import EncoderTokens
from src.transformers.patch_grid import PatchGrid, reassemble_patches
from src.transformers.ssl_tasks import SSLTaskKind


class SSLHead(nn.Module):
    """One affine map per encoder token.

    Continuous tasks predict the token's 3 x f x f pixel patch; Jigsaw-Discrete
    predicts logits over grid positions; MIM-Discrete predicts logits over the
    tokenizer vocabulary.
    """

    def __init__(self, kind: SSLTaskKind, hidden_dim: int, grid: PatchGrid,
                 channels: int = 3, vocabulary_size: int = None):
        super().__init__()
        self.kind = kind
        self.grid = grid
        self.channels = channels
        if kind is SSLTaskKind.MIM_DISCRETE:
            if not vocabulary_size:
                raise ConfigurationError("mim_discrete head needs the tokenizer vocabulary size")
            out_features = vocabulary_size
        elif kind is SSLTaskKind.JIGSAW_DISCRETE:
            out_features = grid.num_patches
        else:
            out_features = channels * grid.patch_size * grid.patch_size
        self.proj = nn.Linear(hidden_dim, out_features)

    def forward(self, encoder_tokens: EncoderTokens) -> torch.Tensor:
        grid = encoder_tokens.grid
        if self.kind is SSLTaskKind.JIGSAW_DISCRETE and grid.num_patches != self.grid.num_patches:
            raise ConfigurationError(
                f"jigsaw_discrete head built for {self.grid.num_patches} positions, got {grid.num_patches} tokens"
            )
        out = self.proj(encoder_tokens.tokens)
        if self.kind.is_discrete:
            return out
        f = grid.patch_size
        patches = out.reshape(out.shape[0], grid.num_patches, self.channels, f, f)
        return torch.stack([reassemble_patches(sample, grid) for sample in patches])
