r"""
Toy DETR with an optional self-supervised head on the encoder output.

backbone -> 1x1 projection -> + sine positions -> encoder -> decoder(queries) -> heads
                                                         \-> SSL head
"""
import logging
from typing import Iterator, Optional

import torch
from torch import nn

from src.errors import ConfigurationError, DimensionError, ShapeError
from src.models.backbone import build_backbone
from src.models.base import BackboneConfig, DetectionSet, DetectorConfig, EncoderTokens
from src.models.position_encoding import positional_encoding
from src.models.ssl_head import SSLHead
from src.models.transformer import MLP, DecoderLayer, EncoderLayer, TransformerDecoder, TransformerEncoder
from src.transformers.patch_grid import PatchGrid, compute_grid
from src.transformers.ssl_tasks import SSLTaskConfig, SSLTaskKind

logger = logging.getLogger(__name__)

SSL_PREFIXES = ("backbone.", "input_proj.", "encoder.", "ssl_head.")
TRANSFER_PREFIXES = ("backbone.", "input_proj.", "encoder.")


class SSLDetector(nn.Module):
    def __init__(self, config: DetectorConfig, backbone_config: BackboneConfig,
                 ssl_task: Optional[SSLTaskKind] = None, ssl_vocabulary_size: Optional[int] = None):
        super().__init__()
        self.config = config
        self.backbone_config = backbone_config
        self.ssl_task = ssl_task
        self.ssl_vocabulary_size = ssl_vocabulary_size
        d = config.hidden_dim

        self.backbone = build_backbone(backbone_config)
        self.input_proj = nn.Conv2d(self.backbone.num_channels, d, kernel_size=1)
        self.encoder = TransformerEncoder(
            EncoderLayer(d, config.attention_heads, config.feedforward_dim, config.dropout),
            config.encoder_layers,
        )
        self.decoder = TransformerDecoder(
            DecoderLayer(d, config.attention_heads, config.feedforward_dim, config.dropout),
            config.decoder_layers, d,
        )
        self.query_embed = nn.Embedding(config.num_queries, d)
        self.class_embed = nn.Linear(d, config.num_classes + 1)
        self.bbox_embed = MLP(d, d, 4, 3)

        self.ssl_head = None
        if ssl_task is not None:
            self.ssl_head = SSLHead(ssl_task, d, config.grid(backbone_config),
                                    vocabulary_size=ssl_vocabulary_size)

    @property
    def downsampling_factor(self) -> int:
        return self.backbone_config.downsampling_factor

    def grid_for(self, images: torch.Tensor) -> PatchGrid:
        if images.dim() != 4:
            raise ShapeError(f"expected BxCxHxW images, got {tuple(images.shape)}")
        return compute_grid(images.shape[2], images.shape[3], self.downsampling_factor)

    def backbone_forward(self, images: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) -> (B, feature_dim, H/f, W/f)"""
        grid = self.grid_for(images)
        features = self.backbone(images)
        if tuple(features.shape[2:]) != (grid.rows, grid.cols):
            raise DimensionError("height", images.shape[2], self.downsampling_factor)
        return features

    def encoder_forward(self, features: torch.Tensor, pos: torch.Tensor, grid: PatchGrid) -> EncoderTokens:
        """Project features, flatten row-major, run the encoder"""
        src = self.input_proj(features).flatten(2).transpose(1, 2)
        if src.shape[1] != grid.num_patches or tuple(pos.shape) != (grid.num_patches, src.shape[2]):
            raise ShapeError(
                f"features give {src.shape[1]} tokens of width {src.shape[2]}, "
                f"positions are {tuple(pos.shape)} for {grid.num_patches} patches"
            )
        return EncoderTokens(self.encoder(src, pos.unsqueeze(0)), grid)

    def encode(self, images: torch.Tensor) -> EncoderTokens:
        grid = self.grid_for(images)
        features = self.backbone_forward(images)
        pos = positional_encoding(grid, self.config.hidden_dim).to(features.device, features.dtype)
        return self.encoder_forward(features, pos, grid)

    def decoder_forward(self, encoder_tokens: EncoderTokens) -> torch.Tensor:
        tokens = encoder_tokens.tokens
        batch = tokens.shape[0]
        pos = positional_encoding(encoder_tokens.grid, self.config.hidden_dim).to(tokens.device, tokens.dtype)
        query_pos = self.query_embed.weight.unsqueeze(0).expand(batch, -1, -1)
        tgt = torch.zeros_like(query_pos)
        return self.decoder(tgt, tokens, pos.unsqueeze(0), query_pos)

    def detection_heads(self, decoded: torch.Tensor) -> DetectionSet:
        return DetectionSet(self.class_embed(decoded), self.bbox_embed(decoded).sigmoid())

    def forward(self, images: torch.Tensor) -> DetectionSet:
        return self.detection_heads(self.decoder_forward(self.encode(images)))

    def ssl_head_forward(self, encoder_tokens: EncoderTokens, task: SSLTaskKind) -> torch.Tensor:
        if self.ssl_head is None:
            raise ConfigurationError(f"model has no SSL head, cannot predict {task.value}")
        if task is not self.ssl_task:
            raise ConfigurationError(f"model has a {self.ssl_task.value} head, not {task.value}")
        return self.ssl_head(encoder_tokens)

    def predict_ssl(self, images: torch.Tensor, task: SSLTaskKind) -> torch.Tensor:
        return self.ssl_head_forward(self.encode(images), task)

    def ssl_parameters(self) -> Iterator[nn.Parameter]:
        """Parameters in the SSL loss graph"""
        for name, parameter in self.named_parameters():
            if name.startswith(SSL_PREFIXES):
                yield parameter


def build_detector(config: DetectorConfig, backbone_config: BackboneConfig,
                   ssl_config: Optional[SSLTaskConfig] = None) -> SSLDetector:
    vocabulary_size = None
    if ssl_config is not None and ssl_config.tokenizer is not None:
        vocabulary_size = ssl_config.tokenizer.vocabulary_size
    model = SSLDetector(config, backbone_config,
                        ssl_task=None if ssl_config is None else ssl_config.kind,
                        ssl_vocabulary_size=vocabulary_size)
    logger.debug("Built detector with %d parameters", sum(p.numel() for p in model.parameters()))
    return model
