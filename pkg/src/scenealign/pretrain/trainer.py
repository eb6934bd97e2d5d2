"""Scene-encoder pre-training loop.

Per iteration: sample a batch of scenes, optionally augment, forward the
scene encoder, fetch the matching text and fused multi-view image embeddings
(precomputed once when the reference encoders are frozen or when an adapter
file supplies external embeddings; re-encoded in-graph when trained jointly),
evaluate the combined objective, and take one Adam step. Views and captions
always come from the canonical (un-augmented) scene; augmentation only
perturbs the scene-encoder input.

Fully deterministic given (config, seed): one numpy Generator drives batch
selection, augmentation, and caption sampling, and torch is seeded once
before any module is constructed.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import torch

from ..checkpoint import load_checkpoint, load_module_tensors, module_tensors, save_checkpoint
from ..config import ExperimentConfig, encoder_arch_fingerprint
from ..dual_encoder import ImageEncoder, TextEncoder, Vocabulary, fuse_multiview, tokenize
from ..dual_encoder.adapter import read_embedding_file
from ..errors import ConfigError, DatasetError, NumericError
from ..renderer import render_multiview
from ..scene_data import LoadedSplit, SceneSample, augment_scene, subsample_points
from ..scene_encoder import SceneEncoder, detection_loss
from .losses import AlignmentBatch, pretrain_loss

CHECKPOINT_NAME = "pretrain_final.ckpt"
VOCAB_NAME = "vocab.json"
LOG_NAME = "train_log.jsonl"


@dataclass
class PretrainComponents:
    scene_encoder: SceneEncoder
    text_encoder: Optional[TextEncoder]
    image_encoder: Optional[ImageEncoder]
    vocab: Optional[Vocabulary]
    log_tau: Optional[torch.nn.Parameter]
    config: ExperimentConfig


@dataclass
class PretrainResult:
    components: PretrainComponents
    log: List[Dict[str, float]]
    checkpoint_path: Optional[Path]


def build_vocabulary(split: LoadedSplit) -> Vocabulary:
    """Vocabulary over every training text: captions, questions, situations.

    Built identically by pre-training and fine-tuning so token coverage does
    not depend on whether a pre-trained checkpoint is used.
    """
    corpus = [c for s in split.scenes for c in s.captions]
    corpus += [q.question for q in split.qa]
    corpus += [f"{r.situation_text} {r.question}" for r in split.sqa]
    return Vocabulary.build(corpus)


def build_components(config: ExperimentConfig, vocab: Optional[Vocabulary]) -> PretrainComponents:
    """Construct all trainable modules in a fixed order (torch must be seeded)."""
    settings = config.pretrain
    text_encoder = image_encoder = None
    if settings.encoder_mode == "reference":
        if vocab is None:
            raise ConfigError("reference encoder mode needs a vocabulary")
        text_encoder = TextEncoder(len(vocab), config.text_encoder)
        image_encoder = ImageEncoder(config.image_encoder)
        if config.image_encoder.resolution != config.renderer.resolution:
            raise ConfigError(
                f"image encoder resolution {config.image_encoder.resolution} "
                f"!= renderer resolution {config.renderer.resolution}"
            )
    scene_encoder = SceneEncoder(config.scene_encoder)
    log_tau = (
        torch.nn.Parameter(torch.tensor(float(np.log(settings.tau)))) if settings.learnable_tau else None
    )
    return PretrainComponents(
        scene_encoder=scene_encoder,
        text_encoder=text_encoder,
        image_encoder=image_encoder,
        vocab=vocab,
        log_tau=log_tau,
        config=config,
    )


def prepare_scene(sample: SceneSample, rng, augment: bool, point_budget: int) -> SceneSample:
    """Augmented (or canonical) scene with the point budget applied."""
    out = augment_scene(sample, rng) if augment else sample
    if out.cloud.n > point_budget:
        from dataclasses import replace

        out = replace(out, cloud=subsample_points(out.cloud, point_budget, rng))
    return out


def render_scene_views(cloud, num_views: int, config: ExperimentConfig):
    return render_multiview(
        cloud,
        num_views,
        resolution=config.renderer.resolution,
        elevation_deg=config.renderer.elevation_deg,
        splat_radius_px=config.renderer.splat_radius_px,
    )


def _encode_caption_cache(components: PretrainComponents, scenes):
    """Per-scene list of pooled caption embeddings (frozen text encoder)."""
    cache = []
    with torch.no_grad():
        for scene in scenes:
            rows = []
            for caption in scene.captions:
                seq = tokenize(caption, components.vocab, components.config.text_encoder.max_len)
                rows.append(components.text_encoder(seq).pooled)
            cache.append(rows)
    return cache


def _fused_image(components: PretrainComponents, views):
    encodings = [components.image_encoder(v.pixels) for v in views]
    return fuse_multiview(encodings)


def run_pretraining(
    split: LoadedSplit, config: ExperimentConfig, out_dir=None, log_fn=None
) -> PretrainResult:
    settings = config.pretrain
    scenes = split.scenes
    if not scenes:
        raise DatasetError("pre-training needs at least one scene")
    for scene in scenes:
        if settings.encoder_mode == "reference" and settings.use_text_loss and not scene.captions:
            raise DatasetError(f"scene {scene.scene_id} has no captions")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)

    vocab = build_vocabulary(split) if settings.encoder_mode == "reference" else None
    components = build_components(config, vocab)
    if components.text_encoder is not None:
        components.text_encoder.requires_grad_(settings.train_text_encoder)
    if components.image_encoder is not None:
        components.image_encoder.requires_grad_(settings.train_image_encoder)

    params = list(components.scene_encoder.parameters())
    if settings.train_text_encoder and components.text_encoder is not None:
        params += list(components.text_encoder.parameters())
    if settings.train_image_encoder and components.image_encoder is not None:
        params += list(components.image_encoder.parameters())
    if components.log_tau is not None:
        params.append(components.log_tau)
    optimizer = torch.optim.Adam(params, lr=settings.learning_rate, weight_decay=settings.weight_decay)

    # Embedding sources. Everything derivable from the canonical scenes is
    # precomputed; only jointly trained encoders re-encode inside the loop.
    text_rows_cache = token_cache = None
    image_cache = views_cache = None
    adapter = None
    if settings.encoder_mode == "adapter":
        if not settings.adapter_path:
            raise ConfigError("adapter encoder mode needs adapter_path")
        adapter = read_embedding_file(settings.adapter_path)
        missing = [s.scene_id for s in scenes if s.scene_id not in adapter]
        if missing:
            raise DatasetError(f"adapter file missing embeddings for scenes {missing[:4]}")
    else:
        if settings.use_text_loss:
            if settings.train_text_encoder:
                token_cache = [
                    [tokenize(c, vocab, config.text_encoder.max_len) for c in s.captions] for s in scenes
                ]
            else:
                text_rows_cache = _encode_caption_cache(components, scenes)
        if settings.use_image_loss:
            views_cache = [render_scene_views(s.cloud, settings.num_views, config) for s in scenes]
            if not settings.train_image_encoder:
                with torch.no_grad():
                    image_cache = [_fused_image(components, views) for views in views_cache]

    log: List[Dict[str, float]] = []
    n = len(scenes)
    for iteration in range(1, settings.iterations + 1):
        idx = rng.choice(n, size=settings.batch_size, replace=settings.batch_size > n)
        z_scene, z_text, z_image, det_terms = [], [], [], []
        for i in idx:
            scene = scenes[int(i)]
            prepped = prepare_scene(scene, rng, settings.augment, settings.point_budget)
            proposals, _, _, z = components.scene_encoder.encode_cloud(prepped.cloud)
            det, _ = detection_loss(
                proposals,
                prepped.annotations,
                config.scene_encoder.match_positive_m,
                config.scene_encoder.match_negative_m,
            )
            z_scene.append(z)
            det_terms.append(det)
            cap = int(rng.integers(len(scene.captions))) if scene.captions else 0
            if settings.encoder_mode == "adapter":
                text_vec, view_vecs = adapter[scene.scene_id]
                if settings.use_text_loss:
                    z_text.append(torch.as_tensor(text_vec, dtype=z.dtype))
                if settings.use_image_loss:
                    z_image.append(fuse_multiview(torch.as_tensor(view_vecs, dtype=z.dtype)))
            else:
                if settings.use_text_loss:
                    if settings.train_text_encoder:
                        z_text.append(components.text_encoder(token_cache[int(i)][cap]).pooled)
                    else:
                        z_text.append(text_rows_cache[int(i)][cap])
                if settings.use_image_loss:
                    if settings.train_image_encoder:
                        z_image.append(_fused_image(components, views_cache[int(i)]))
                    else:
                        z_image.append(image_cache[int(i)])
        batch = AlignmentBatch(
            z_scene=torch.stack(z_scene),
            z_text=torch.stack(z_text) if z_text else None,
            z_image=torch.stack(z_image) if z_image else None,
        )
        det_loss = torch.stack(det_terms).mean()
        tau = torch.exp(components.log_tau) if components.log_tau is not None else None
        total, breakdown = pretrain_loss(batch, det_loss, settings, tau=tau)
        if not torch.isfinite(total):
            last = log[-1] if log else None
            raise NumericError(
                f"pre-training diverged at iteration {iteration}; last finite breakdown: {last}"
            )
        optimizer.zero_grad()
        total.backward()
        optimizer.step()
        record = {
            "iteration": iteration,
            "loss_pre": float(total.detach()),
            "loss_det": float(breakdown["det"].detach()),
            "loss_text": float(breakdown["text"].detach()),
            "loss_image": float(breakdown["image"].detach()),
        }
        log.append(record)
        if log_fn is not None:
            log_fn(record)
        if (
            out_dir is not None
            and settings.checkpoint_every > 0
            and iteration % settings.checkpoint_every == 0
        ):
            save_pretrain_checkpoint(
                Path(out_dir) / f"pretrain_iter{iteration:06d}.ckpt", components, iteration
            )

    checkpoint_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        checkpoint_path = out_dir / CHECKPOINT_NAME
        save_pretrain_checkpoint(checkpoint_path, components, settings.iterations)
        if components.vocab is not None:
            components.vocab.save(out_dir / VOCAB_NAME)
        with open(out_dir / LOG_NAME, "w") as f:
            for record in log:
                f.write(json.dumps(record, sort_keys=True) + "\n")
    return PretrainResult(components=components, log=log, checkpoint_path=checkpoint_path)


def save_pretrain_checkpoint(path, components: PretrainComponents, iteration: int) -> None:
    tensors = module_tensors(components.scene_encoder, "scene_encoder.")
    if components.text_encoder is not None:
        tensors.update(module_tensors(components.text_encoder, "text_encoder."))
    if components.image_encoder is not None:
        tensors.update(module_tensors(components.image_encoder, "image_encoder."))
    if components.log_tau is not None:
        tensors["log_tau"] = components.log_tau.detach().cpu().numpy()
    meta = {
        "kind": "pretrain",
        "iteration": iteration,
        "encoder_mode": components.config.pretrain.encoder_mode,
        "vocab_size": len(components.vocab) if components.vocab is not None else 0,
        "num_views": components.config.pretrain.num_views,
    }
    save_checkpoint(path, tensors, encoder_arch_fingerprint(components.config), meta)


def load_scene_encoder_weights(path, config: ExperimentConfig, scene_encoder: SceneEncoder) -> dict:
    """Load the scene-encoder tensors of a pre-training checkpoint into place.

    The checkpoint's architecture fingerprint must match the current config.
    Returns the checkpoint meta record.
    """
    tensors, meta, _ = load_checkpoint(path, expected_fingerprint=encoder_arch_fingerprint(config))
    load_module_tensors(scene_encoder, tensors, "scene_encoder.")
    return meta


def scene_text_retrieval_accuracy(components: PretrainComponents, scenes) -> float:
    """Scene -> first-caption top-1 retrieval accuracy over the given scenes."""
    config = components.config
    with torch.no_grad():
        z_scene = torch.stack(
            [components.scene_encoder.encode_cloud(s.cloud)[3] for s in scenes]
        )
        z_text = torch.stack(
            [
                components.text_encoder(
                    tokenize(s.captions[0], components.vocab, config.text_encoder.max_len)
                ).pooled
                for s in scenes
            ]
        )
    top1 = (z_scene @ z_text.T).argmax(dim=1)
    return float((top1 == torch.arange(len(scenes))).double().mean())
