"""Contrastive alignment objectives and their combination.

The shared kernel treats scene embeddings as anchors: for batch row i the
positive is the matching text (or fused image) embedding and the denominator
runs over every batch entry, one-directional:

    loss = -(1/B) * sum_i log[ exp(a_i . p_i / tau) / sum_j exp(a_i . p_j / tau) ]

computed via logsumexp (row-max subtraction before exponentiation). Inputs are
unit-norm rows, so dot products are cosine similarities. The combined
objective is  det + alpha * text_term + beta * image_term,  with toggles that
zero either contrastive term and an ablation variant that swaps the
contrastive kernel for mean cosine distance.
"""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
import torch

from ..config import PretrainSettings
from ..errors import InputError, NumericError, ValidationError


def _as_2d(x, name: str) -> torch.Tensor:
    t = torch.as_tensor(x) if not isinstance(x, torch.Tensor) else x
    if t.ndim != 2 or t.shape[0] < 1:
        raise InputError(f"{name} must be a (B >= 1, d) matrix, got shape {tuple(t.shape)}")
    if not torch.isfinite(t).all():
        raise NumericError(f"{name} contains non-finite values")
    return t


def contrastive_loss(anchors, positives, tau) -> torch.Tensor:
    a = _as_2d(anchors, "anchors")
    p = _as_2d(positives, "positives")
    if a.shape != p.shape:
        raise InputError(f"anchors {tuple(a.shape)} and positives {tuple(p.shape)} differ")
    if not float(tau) > 0:
        raise InputError(f"temperature must be positive, got {tau}")
    logits = a @ p.T / tau
    return (torch.logsumexp(logits, dim=1) - logits.diagonal()).mean()


def cosine_alignment_loss(anchors, positives) -> torch.Tensor:
    a = _as_2d(anchors, "anchors")
    p = _as_2d(positives, "positives")
    if a.shape != p.shape:
        raise InputError(f"anchors {tuple(a.shape)} and positives {tuple(p.shape)} differ")
    return (1.0 - (a * p).sum(dim=1)).mean()


@dataclass
class AlignmentBatch:
    """Unit-norm embedding rows for one batch; image/text may be absent when toggled off."""

    z_scene: torch.Tensor
    z_text: Optional[torch.Tensor] = None
    z_image: Optional[torch.Tensor] = None

    def __post_init__(self):
        self.z_scene = _as_2d(self.z_scene, "z_scene")
        b = self.z_scene.shape[0]
        for name in ("z_text", "z_image"):
            val = getattr(self, name)
            if val is None:
                continue
            val = _as_2d(val, name)
            if val.shape[0] != b:
                raise ValidationError(f"{name} batch size {val.shape[0]} != z_scene batch size {b}")
            setattr(self, name, val)
        for name in ("z_scene", "z_text", "z_image"):
            val = getattr(self, name)
            if val is None:
                continue
            norms = torch.linalg.vector_norm(val.detach(), dim=1)
            err = float((norms - 1.0).abs().max())
            if err > 1e-5:
                raise ValidationError(f"{name} rows are not unit norm (max deviation {err:.2e})")

    @property
    def batch_size(self) -> int:
        return self.z_scene.shape[0]


def combine_pretrain_terms(det, text, image, alpha: float, beta: float) -> torch.Tensor:
    return det + alpha * text + beta * image


def pretrain_loss(
    batch: AlignmentBatch,
    det_loss,
    settings: PretrainSettings,
    tau=None,
) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
    """Combined objective with per-term breakdown.

    ``tau`` overrides ``settings.tau`` (a tensor when the temperature is
    learnable). Toggled-off terms are exactly zero and their embeddings are
    never touched.
    """
    dtype = batch.z_scene.dtype
    det = det_loss if isinstance(det_loss, torch.Tensor) else torch.as_tensor(float(det_loss), dtype=dtype)
    zero = torch.zeros((), dtype=dtype)
    tau = settings.tau if tau is None else tau

    def term(positives) -> torch.Tensor:
        if settings.use_cosine_variant:
            return cosine_alignment_loss(batch.z_scene, positives)
        return contrastive_loss(batch.z_scene, positives, tau)

    text = term(batch.z_text) if settings.use_text_loss and batch.z_text is not None else zero
    image = term(batch.z_image) if settings.use_image_loss and batch.z_image is not None else zero
    total = combine_pretrain_terms(det, text, image, settings.alpha, settings.beta)
    breakdown = {"det": det, "text": text, "image": image, "total": total}
    return total, breakdown
