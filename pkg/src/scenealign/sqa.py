"""Situated question answering: answer + agent position/orientation regression.

Situation word embeddings act as queries in a transformer decoder whose keys
and values come from the scene object tokens, producing situation-conditioned
object-centric tokens. Those tokens then query the question word embeddings
in a second decoder; the mean over its outputs is the pooled feature feeding
two 2-layer MLP heads: answer logits, and a 7-vector split into position and
a raw quaternion that is L2-normalized with the scalar part kept non-negative.

Loss: det + ans + pos + rot. Position is mean squared error over the 3
coordinates. The quaternion term takes the smaller MSE of q against t and -t
(q and -q encode the same rotation); set ``rotation_sign_invariant=False`` for
the raw single-sign MSE.
"""

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import load_checkpoint, load_module_tensors, module_tensors, save_checkpoint
from .config import ExperimentConfig, sqa_arch_fingerprint
from .dual_encoder import TextEncoder, TextEncoding, Vocabulary, tokenize
from .errors import CheckpointError, ConfigError, NumericError
from .layers import DecoderLayer, Mlp
from .metrics import EvalReport, build_report, em_at_1
from .pretrain.trainer import build_vocabulary, load_scene_encoder_weights, prepare_scene
from .scene_data import LoadedSplit, SceneSample
from .scene_encoder import Proposals, SceneEncoder, detection_loss
from .vqa import AnswerVocabulary, answers_to_multi_hot, build_answer_vocab

CHECKPOINT_NAME = "sqa_final.ckpt"
ANSWER_VOCAB_NAME = "answer_vocab.json"
VOCAB_NAME = "vocab.json"
LOG_NAME = "finetune_log.jsonl"


@dataclass
class SqaPrediction:
    answer_logits: torch.Tensor  # (N_a,)
    position: torch.Tensor  # (3,)
    rotation: torch.Tensor  # (4,) unit quaternion (x, y, z, w), w >= 0


def normalize_quaternion(raw: torch.Tensor) -> torch.Tensor:
    norm = torch.linalg.vector_norm(raw)
    if float(norm.detach()) < 1e-12:
        raise NumericError("predicted quaternion collapsed to the zero vector")
    q = raw / norm
    return -q if float(q[3].detach()) < 0 else q


class SqaModel(nn.Module):
    def __init__(
        self,
        num_answers: int,
        hidden_dim: int = 256,
        heads: int = 4,
        scene_dim: int = 128,
        word_dim: int = 512,
    ):
        super().__init__()
        self.situation_proj = nn.Linear(word_dim, hidden_dim)
        self.scene_proj = nn.Linear(scene_dim, hidden_dim)
        self.question_proj = nn.Linear(word_dim, hidden_dim)
        self.situation_decoder = DecoderLayer(hidden_dim, heads)
        self.question_decoder = DecoderLayer(hidden_dim, heads)
        self.answer_head = Mlp(hidden_dim, hidden_dim, num_answers)
        self.location_head = Mlp(hidden_dim, hidden_dim, 7)

    def situation_decode(self, situation: TextEncoding, scene_tokens: torch.Tensor) -> torch.Tensor:
        queries = self.situation_proj(situation.word_embeddings)
        memory = self.scene_proj(scene_tokens)
        return self.situation_decoder(queries, memory)

    def question_decode(self, situation_tokens: torch.Tensor, question: TextEncoding) -> torch.Tensor:
        memory = self.question_proj(question.word_embeddings)
        out = self.question_decoder(situation_tokens, memory)
        return out.mean(dim=0)

    def heads(self, pooled: torch.Tensor) -> SqaPrediction:
        location = self.location_head(pooled)
        return SqaPrediction(
            answer_logits=self.answer_head(pooled),
            position=location[:3],
            rotation=normalize_quaternion(location[3:]),
        )

    def forward(self, situation: TextEncoding, question: TextEncoding, scene_tokens: torch.Tensor) -> SqaPrediction:
        tokens = self.situation_decode(situation, scene_tokens)
        return self.heads(self.question_decode(tokens, question))


@dataclass
class SqaTargets:
    answer_multi_hot: torch.Tensor
    position: torch.Tensor  # (3,)
    rotation: torch.Tensor  # (4,) unit quaternion
    annotations: tuple


def sqa_loss(
    prediction: SqaPrediction,
    proposals: Proposals,
    targets: SqaTargets,
    rotation_sign_invariant: bool = True,
) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
    dtype = prediction.answer_logits.dtype
    det, _ = detection_loss(proposals, targets.annotations)
    ans = F.binary_cross_entropy_with_logits(prediction.answer_logits, targets.answer_multi_hot.to(dtype))
    pos = ((prediction.position - targets.position.to(dtype)) ** 2).mean()
    target_rot = targets.rotation.to(dtype)
    mse_plus = ((prediction.rotation - target_rot) ** 2).mean()
    if rotation_sign_invariant:
        mse_minus = ((prediction.rotation + target_rot) ** 2).mean()
        rot = torch.minimum(mse_plus, mse_minus)
    else:
        rot = mse_plus
    total = det + ans + pos + rot
    return total, {"det": det, "ans": ans, "pos": pos, "rot": rot, "total": total}


@dataclass
class SqaBundle:
    scene_encoder: SceneEncoder
    text_encoder: TextEncoder
    model: SqaModel
    vocab: Vocabulary
    answer_vocab: AnswerVocabulary
    config: ExperimentConfig


@dataclass
class SqaFinetuneResult:
    bundle: SqaBundle
    log: List[Dict[str, float]]
    checkpoint_path: Optional[Path]


def finetune_sqa(
    split: LoadedSplit,
    config: ExperimentConfig,
    pretrained_path=None,
    out_dir=None,
    log_fn=None,
) -> SqaFinetuneResult:
    settings = config.sqa
    if not split.sqa:
        raise ConfigError("SQA fine-tuning needs situation records")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)

    vocab = build_vocabulary(split)
    text_encoder = TextEncoder(len(vocab), config.text_encoder)
    text_encoder.requires_grad_(False)
    scene_encoder = SceneEncoder(config.scene_encoder)
    answer_vocab = build_answer_vocab(split.sqa, settings.min_answer_count)
    model = SqaModel(
        num_answers=len(answer_vocab),
        hidden_dim=settings.hidden_dim,
        heads=settings.heads,
        scene_dim=config.scene_encoder.feature_dim,
        word_dim=config.text_encoder.word_dim,
    )
    if pretrained_path is not None:
        load_scene_encoder_weights(pretrained_path, config, scene_encoder)

    max_len = config.text_encoder.max_len
    with torch.no_grad():
        situation_cache = [
            text_encoder(tokenize(r.situation_text, vocab, max_len)) for r in split.sqa
        ]
        question_cache = [text_encoder(tokenize(r.question, vocab, max_len)) for r in split.sqa]
    scenes = {s.scene_id: s for s in split.scenes}
    if settings.freeze_scene_encoder:
        scene_encoder.requires_grad_(False)
        params = list(model.parameters())
    else:
        params = list(scene_encoder.parameters()) + list(model.parameters())
    optimizer = torch.optim.Adam(params, lr=settings.learning_rate, weight_decay=settings.weight_decay)

    frozen_cache: Dict[str, tuple] = {}

    def encode_scene(scene_id: str):
        cacheable = settings.freeze_scene_encoder and not settings.augment
        if cacheable and scene_id in frozen_cache:
            return frozen_cache[scene_id]
        sample = prepare_scene(scenes[scene_id], rng, settings.augment, settings.point_budget)
        if settings.freeze_scene_encoder:
            with torch.no_grad():
                proposals, object_tokens, _, _ = scene_encoder.encode_cloud(sample.cloud)
        else:
            proposals, object_tokens, _, _ = scene_encoder.encode_cloud(sample.cloud)
        out = (sample, proposals, object_tokens)
        if cacheable:
            frozen_cache[scene_id] = out
        return out

    log: List[Dict[str, float]] = []
    n_records = len(split.sqa)
    for epoch in range(1, settings.epochs + 1):
        factor = settings.lr_decay_factor if epoch >= settings.lr_decay_epoch else 1.0
        lr = settings.learning_rate * factor
        for group in optimizer.param_groups:
            group["lr"] = lr
        for step in range(1, settings.steps_per_epoch + 1):
            idx = rng.choice(n_records, size=settings.batch_size, replace=settings.batch_size > n_records)
            losses = []
            breakdown_sums = Counter()
            for i in idx:
                record = split.sqa[int(i)]
                sample, proposals, object_tokens = encode_scene(record.scene_id)
                prediction = model(situation_cache[int(i)], question_cache[int(i)], object_tokens)
                targets = SqaTargets(
                    answer_multi_hot=answers_to_multi_hot(record.answers, answer_vocab),
                    position=torch.as_tensor(record.position),
                    rotation=torch.as_tensor(record.rotation),
                    annotations=sample.annotations,
                )
                loss, breakdown = sqa_loss(
                    prediction, proposals, targets, settings.rotation_sign_invariant
                )
                losses.append(loss)
                for key in ("det", "ans", "pos", "rot"):
                    breakdown_sums[key] += float(breakdown[key])
            batch_loss = torch.stack(losses).mean()
            optimizer.zero_grad()
            batch_loss.backward()
            optimizer.step()
            record_out = {
                "epoch": epoch,
                "step": step,
                "lr": lr,
                "loss": float(batch_loss),
                **{f"loss_{k}": breakdown_sums[k] / len(idx) for k in ("det", "ans", "pos", "rot")},
            }
            log.append(record_out)
            if log_fn is not None:
                log_fn(record_out)

    bundle = SqaBundle(
        scene_encoder=scene_encoder,
        text_encoder=text_encoder,
        model=model,
        vocab=vocab,
        answer_vocab=answer_vocab,
        config=config,
    )
    checkpoint_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        checkpoint_path = out_dir / CHECKPOINT_NAME
        save_sqa_checkpoint(checkpoint_path, bundle)
        vocab.save(out_dir / VOCAB_NAME)
        answer_vocab.save(out_dir / ANSWER_VOCAB_NAME)
        with open(out_dir / LOG_NAME, "w") as f:
            for rec in log:
                f.write(json.dumps(rec, sort_keys=True) + "\n")
    return SqaFinetuneResult(bundle=bundle, log=log, checkpoint_path=checkpoint_path)


def save_sqa_checkpoint(path, bundle: SqaBundle) -> None:
    tensors = module_tensors(bundle.scene_encoder, "scene_encoder.")
    tensors.update(module_tensors(bundle.text_encoder, "text_encoder."))
    tensors.update(module_tensors(bundle.model, "sqa."))
    meta = {
        "kind": "sqa",
        "vocab_size": len(bundle.vocab),
        "num_answers": len(bundle.answer_vocab),
    }
    save_checkpoint(path, tensors, sqa_arch_fingerprint(bundle.config), meta)


def load_sqa_bundle(checkpoint_path, config: ExperimentConfig) -> SqaBundle:
    checkpoint_path = Path(checkpoint_path)
    tensors, meta, _ = load_checkpoint(checkpoint_path, expected_fingerprint=sqa_arch_fingerprint(config))
    if meta.get("kind") != "sqa":
        raise CheckpointError(f"{checkpoint_path}: expected an sqa checkpoint, got {meta.get('kind')!r}")
    vocab = Vocabulary.load(checkpoint_path.parent / VOCAB_NAME)
    answer_vocab = AnswerVocabulary.load(checkpoint_path.parent / ANSWER_VOCAB_NAME)
    text_encoder = TextEncoder(len(vocab), config.text_encoder)
    scene_encoder = SceneEncoder(config.scene_encoder)
    model = SqaModel(
        num_answers=len(answer_vocab),
        hidden_dim=config.sqa.hidden_dim,
        heads=config.sqa.heads,
        scene_dim=config.scene_encoder.feature_dim,
        word_dim=config.text_encoder.word_dim,
    )
    load_module_tensors(scene_encoder, tensors, "scene_encoder.")
    load_module_tensors(text_encoder, tensors, "text_encoder.")
    load_module_tensors(model, tensors, "sqa.")
    return SqaBundle(
        scene_encoder=scene_encoder,
        text_encoder=text_encoder,
        model=model,
        vocab=vocab,
        answer_vocab=answer_vocab,
        config=config,
    )


def evaluate_sqa(split: LoadedSplit, bundle: SqaBundle) -> Tuple[EvalReport, List[dict]]:
    scenes = {s.scene_id: s for s in split.scenes}
    max_len = bundle.config.text_encoder.max_len
    em_hits, candidates, references = [], [], []
    dump = []
    with torch.no_grad():
        for record in split.sqa:
            sample = scenes[record.scene_id]
            _, object_tokens, _, _ = bundle.scene_encoder.encode_cloud(sample.cloud)
            situation = bundle.text_encoder(tokenize(record.situation_text, bundle.vocab, max_len))
            question = bundle.text_encoder(tokenize(record.question, bundle.vocab, max_len))
            prediction = bundle.model(situation, question, object_tokens)
            answer = bundle.answer_vocab.answers[int(prediction.answer_logits.argmax())]
            em_hits.append(em_at_1(answer, record.answers))
            candidates.append(answer)
            references.append(list(record.answers))
            dump.append(
                {
                    "situation_id": record.situation_id,
                    "scene_id": record.scene_id,
                    "answer_top1": answer,
                    "position": [float(x) for x in prediction.position],
                    "rotation": [float(x) for x in prediction.rotation],
                    "position_error": float(
                        np.linalg.norm(prediction.position.numpy() - record.position)
                    ),
                }
            )
    report = build_report(em_hits, candidates=candidates, references=references)
    return report, dump
