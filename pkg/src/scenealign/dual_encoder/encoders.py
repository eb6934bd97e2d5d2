"""Tiny trainable text and image encoders producing unit-norm embeddings.

These stand in for the CLIP encoder pair at desk scale: 2 transformer layers
at width 128, projected into the shared embedding space. Real, externally
computed embeddings can be supplied instead through the adapter file format
(see ``adapter.py``) without touching the rest of the pipeline.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from ..config import ImageEncoderConfig, TextEncoderConfig
from ..errors import InputError, NumericError
from ..layers import EncoderLayer, sinusoidal_positions
from .tokenizer import TokenSequence


def l2_normalize(x: torch.Tensor, what: str = "embedding") -> torch.Tensor:
    norm = torch.linalg.vector_norm(x)
    if float(norm.detach()) < 1e-12:
        raise NumericError(f"{what} collapsed to the zero vector")
    return x / norm


@dataclass
class TextEncoding:
    word_embeddings: torch.Tensor  # (N_q, word_dim)
    pooled: torch.Tensor  # (embed_dim,), unit norm
    eot_index: int


@dataclass
class ImageEncoding:
    embedding: torch.Tensor  # (embed_dim,), unit norm


class TextEncoder(nn.Module):
    def __init__(self, vocab_size: int, config: TextEncoderConfig = TextEncoderConfig()):
        super().__init__()
        self.config = config
        self.embed = nn.Embedding(vocab_size, config.width)
        self.register_buffer("positions", sinusoidal_positions(config.max_len, config.width))
        self.layers = nn.ModuleList(EncoderLayer(config.width, config.heads) for _ in range(config.layers))
        self.word_proj = nn.Linear(config.width, config.word_dim)
        self.pool_proj = nn.Linear(config.word_dim, config.embed_dim)

    def forward(self, tokens: TokenSequence) -> TextEncoding:
        ids = torch.as_tensor(tokens.ids, dtype=torch.long)
        if int(ids.max()) >= self.embed.num_embeddings:
            raise InputError(f"token id {int(ids.max())} outside vocabulary")
        x = self.embed(ids) + self.positions[: ids.shape[0]].to(self.embed.weight.dtype)
        for layer in self.layers:
            x = layer(x)
        words = self.word_proj(x)
        pooled = l2_normalize(self.pool_proj(words[tokens.eot_index]), "pooled text embedding")
        return TextEncoding(word_embeddings=words, pooled=pooled, eot_index=tokens.eot_index)


def patchify(pixels: torch.Tensor, patch_size: int) -> torch.Tensor:
    """(H, W, 3) image to (H//p * W//p, p*p*3) flattened patches."""
    h, w, c = pixels.shape
    gh, gw = h // patch_size, w // patch_size
    x = pixels.reshape(gh, patch_size, gw, patch_size, c)
    return x.permute(0, 2, 1, 3, 4).reshape(gh * gw, patch_size * patch_size * c)


class ImageEncoder(nn.Module):
    def __init__(self, config: ImageEncoderConfig = ImageEncoderConfig()):
        super().__init__()
        h, w = config.resolution
        if h % config.patch_size or w % config.patch_size:
            raise InputError(f"resolution {config.resolution} not divisible by patch {config.patch_size}")
        self.config = config
        self.num_patches = (h // config.patch_size) * (w // config.patch_size)
        self.patch_embed = nn.Linear(config.patch_size * config.patch_size * 3, config.width)
        self.cls_token = nn.Parameter(torch.zeros(config.width))
        self.pos_embed = nn.Parameter(torch.empty(1 + self.num_patches, config.width))
        nn.init.normal_(self.pos_embed, std=0.02)
        self.layers = nn.ModuleList(EncoderLayer(config.width, config.heads) for _ in range(config.layers))
        self.proj = nn.Linear(config.width, config.embed_dim)

    def forward(self, pixels) -> ImageEncoding:
        dtype = self.patch_embed.weight.dtype
        px = torch.as_tensor(np.asarray(pixels), dtype=dtype)
        if px.shape != (*self.config.resolution, 3):
            raise InputError(f"image shape {tuple(px.shape)} != configured {(*self.config.resolution, 3)}")
        x = self.patch_embed(patchify(px, self.config.patch_size))
        x = torch.cat([self.cls_token.unsqueeze(0), x]) + self.pos_embed
        for layer in self.layers:
            x = layer(x)
        return ImageEncoding(embedding=l2_normalize(self.proj(x[0]), "image embedding"))


def fuse_multiview(embeddings: Sequence) -> torch.Tensor:
    """Mean of view embeddings, re-normalized to the unit sphere.

    Order-invariant; raises when the mean collapses to zero (antipodal views).
    """
    if len(embeddings) == 0:
        raise InputError("fuse_multiview needs at least one embedding")
    vecs = [e.embedding if isinstance(e, ImageEncoding) else torch.as_tensor(e) for e in embeddings]
    mean = torch.stack(list(vecs)).mean(dim=0)
    norm = torch.linalg.vector_norm(mean)
    if float(norm.detach()) < 1e-8:
        raise InputError("multi-view fusion collapsed to the zero vector")
    return mean / norm
