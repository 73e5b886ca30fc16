import math

import torch

from src.errors import ConfigurationError
from src.transformers.patch_grid import PatchGrid


def positional_encoding(grid: PatchGrid, hidden_dim: int, temperature: float = 10000.0,
                        dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Fixed 2-D sine encoding, (num_patches, hidden_dim), row-major.

    The first half encodes the row, the second half the column; coordinates are
    normalised to (0, 2*pi] and even/odd channels take sin/cos.
    """
    if hidden_dim <= 0 or hidden_dim % 2:
        raise ConfigurationError(f"hidden_dim must be a positive even number, got {hidden_dim}")
    num_pos_feats = hidden_dim // 2
    eps = 1e-6
    scale = 2 * math.pi

    y_embed = torch.arange(1, grid.rows + 1, dtype=dtype)[:, None].expand(grid.rows, grid.cols)
    x_embed = torch.arange(1, grid.cols + 1, dtype=dtype)[None, :].expand(grid.rows, grid.cols)
    y_embed = y_embed / (grid.rows + eps) * scale
    x_embed = x_embed / (grid.cols + eps) * scale

    dim_t = torch.arange(num_pos_feats, dtype=dtype)
    dim_t = temperature ** (2 * torch.div(dim_t, 2, rounding_mode="floor") / num_pos_feats)
    even = (torch.arange(num_pos_feats) % 2 == 0)

    pos_y = y_embed[:, :, None] / dim_t
    pos_x = x_embed[:, :, None] / dim_t
    pos_y = torch.where(even, pos_y.sin(), pos_y.cos())
    pos_x = torch.where(even, pos_x.sin(), pos_x.cos())
    return torch.cat((pos_y, pos_x), dim=2).reshape(grid.num_patches, hidden_dim)
