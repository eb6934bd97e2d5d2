"""3D visual question answering on top of the scene encoder.

Question word embeddings and scene object tokens are projected to a shared
hidden size, concatenated (scene first), and fused by a two-layer pre-norm
transformer encoder. The updated end-of-text state is the pooled question
feature feeding the answer and object-class heads; a per-token linear head
over the updated scene tokens scores which proposal the question refers to.

The loss is the unweighted sum det + obj + ans + loc where obj and ans are
multi-label binary cross-entropies (questions can have several valid answers
and touch several classes) and loc is softmax cross-entropy against the
proposal with the highest IoU to a referred ground-truth box (ties to the
lowest index; IoU below 0.05 contributes nothing).
"""

import json
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import load_checkpoint, load_module_tensors, module_tensors, save_checkpoint
from .config import ExperimentConfig, vqa_arch_fingerprint
from .dual_encoder import TextEncoder, TextEncoding, Vocabulary, tokenize
from .errors import CheckpointError, ConfigError
from .layers import EncoderLayer
from .metrics import EvalReport, box_iou, build_report, em_at_1, normalize_answer
from .pretrain.trainer import build_vocabulary, load_scene_encoder_weights, prepare_scene
from .scene_data import AxisAlignedBox, LoadedSplit, QARecord, SceneSample
from .scene_encoder import Proposals, SceneEncoder, detection_loss

IOU_FLOOR = 0.05
CHECKPOINT_NAME = "vqa_final.ckpt"
ANSWER_VOCAB_NAME = "answer_vocab.json"
VOCAB_NAME = "vocab.json"
LOG_NAME = "finetune_log.jsonl"


@dataclass(frozen=True)
class AnswerVocabulary:
    answers: Tuple[str, ...]

    def __post_init__(self):
        if len(set(self.answers)) != len(self.answers):
            raise ConfigError("answer vocabulary has duplicate entries")

    @property
    def index(self) -> Dict[str, int]:
        return {a: i for i, a in enumerate(self.answers)}

    def __len__(self) -> int:
        return len(self.answers)

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump({"answers": list(self.answers)}, f, indent=2)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "AnswerVocabulary":
        with open(path) as f:
            return cls(answers=tuple(json.load(f)["answers"]))


def build_answer_vocab(records: Sequence, min_count: int = 1) -> AnswerVocabulary:
    """Normalized answers with frequency >= min_count, ordered by (-freq, lex)."""
    counts = Counter()
    for record in records:
        for answer in record.answers:
            counts[normalize_answer(answer)] += 1
    kept = sorted((a for a, c in counts.items() if c >= min_count), key=lambda a: (-counts[a], a))
    if not kept:
        raise ConfigError(f"answer vocabulary empty after min_count={min_count} filtering")
    return AnswerVocabulary(answers=tuple(kept))


@dataclass
class FusionOutput:
    scene_tokens_out: torch.Tensor  # (M, h)
    question_tokens_out: torch.Tensor  # (N_q, h)
    pooled_question: torch.Tensor  # (h,)


@dataclass
class VqaPrediction:
    localization_logits: torch.Tensor  # (M,)
    answer_logits: torch.Tensor  # (N_a,)
    object_class_logits: torch.Tensor  # (num_classes,)


class VqaModel(nn.Module):
    def __init__(
        self,
        num_answers: int,
        num_classes: int,
        hidden_dim: int = 256,
        heads: int = 4,
        fusion_layers: int = 2,
        scene_dim: int = 128,
        word_dim: int = 512,
    ):
        super().__init__()
        self.scene_proj = nn.Linear(scene_dim, hidden_dim)
        self.word_proj = nn.Linear(word_dim, hidden_dim)
        self.layers = nn.ModuleList(EncoderLayer(hidden_dim, heads) for _ in range(fusion_layers))
        self.loc_head = nn.Linear(hidden_dim, 1)
        self.answer_head = nn.Linear(hidden_dim, num_answers)
        self.object_head = nn.Linear(hidden_dim, num_classes)

    def fuse(self, question: TextEncoding, scene_tokens: torch.Tensor) -> FusionOutput:
        m = scene_tokens.shape[0]
        x = torch.cat([self.scene_proj(scene_tokens), self.word_proj(question.word_embeddings)])
        for layer in self.layers:
            x = layer(x)
        return FusionOutput(
            scene_tokens_out=x[:m],
            question_tokens_out=x[m:],
            pooled_question=x[m + question.eot_index],
        )

    def predict(self, fusion: FusionOutput) -> VqaPrediction:
        return VqaPrediction(
            localization_logits=self.loc_head(fusion.scene_tokens_out).squeeze(-1),
            answer_logits=self.answer_head(fusion.pooled_question),
            object_class_logits=self.object_head(fusion.pooled_question),
        )

    def forward(self, question: TextEncoding, scene_tokens: torch.Tensor) -> VqaPrediction:
        return self.predict(self.fuse(question, scene_tokens))


def localization_target(
    proposal_boxes: Sequence[AxisAlignedBox], referred_boxes: Sequence[AxisAlignedBox]
) -> Optional[int]:
    """Index of the proposal best matching any referred box, or None below the floor."""
    if not referred_boxes:
        return None
    best_idx, best_iou = None, 0.0
    for i, box in enumerate(proposal_boxes):
        iou = max(box_iou(box, ref) for ref in referred_boxes)
        if iou > best_iou:  # strict: ties keep the lower index
            best_idx, best_iou = i, iou
    if best_idx is None or best_iou < IOU_FLOOR:
        return None
    return best_idx


@dataclass
class VqaTargets:
    answer_multi_hot: torch.Tensor  # (N_a,)
    object_multi_hot: torch.Tensor  # (num_classes,)
    localization_index: Optional[int]
    annotations: tuple


def answers_to_multi_hot(answers: Sequence[str], vocab: AnswerVocabulary, dtype=torch.float32) -> torch.Tensor:
    """Answers outside the vocabulary are dropped from the target vector."""
    target = torch.zeros(len(vocab), dtype=dtype)
    index = vocab.index
    for answer in answers:
        idx = index.get(normalize_answer(answer))
        if idx is not None:
            target[idx] = 1.0
    return target


def classes_to_multi_hot(class_ids: Sequence[int], num_classes: int, dtype=torch.float32) -> torch.Tensor:
    target = torch.zeros(num_classes, dtype=dtype)
    for cid in class_ids:
        target[int(cid)] = 1.0
    return target


def vqa_loss(
    prediction: VqaPrediction, proposals: Proposals, targets: VqaTargets
) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
    dtype = prediction.answer_logits.dtype
    det, _ = detection_loss(proposals, targets.annotations)
    ans = F.binary_cross_entropy_with_logits(prediction.answer_logits, targets.answer_multi_hot.to(dtype))
    obj = F.binary_cross_entropy_with_logits(
        prediction.object_class_logits, targets.object_multi_hot.to(dtype)
    )
    if targets.localization_index is None:
        loc = torch.zeros((), dtype=dtype)
    else:
        loc = F.cross_entropy(
            prediction.localization_logits.unsqueeze(0),
            torch.tensor([targets.localization_index]),
        )
    total = det + obj + ans + loc
    return total, {"det": det, "obj": obj, "ans": ans, "loc": loc, "total": total}


@dataclass
class VqaBundle:
    scene_encoder: SceneEncoder
    text_encoder: TextEncoder
    model: VqaModel
    vocab: Vocabulary
    answer_vocab: AnswerVocabulary
    config: ExperimentConfig


@dataclass
class FinetuneResult:
    bundle: VqaBundle
    log: List[Dict[str, float]]
    checkpoint_path: Optional[Path]


def _scene_index(scenes: Sequence[SceneSample]) -> Dict[str, SceneSample]:
    return {s.scene_id: s for s in scenes}


def _encode_questions(records, text_encoder: TextEncoder, vocab: Vocabulary, max_len: int):
    cache = []
    with torch.no_grad():
        for record in records:
            cache.append(text_encoder(tokenize(record.question, vocab, max_len)))
    return cache


def epoch_learning_rate(settings, epoch: int) -> float:
    """Step schedule: initial lr scaled once from the configured epoch on (1-based)."""
    factor = settings.lr_decay_factor if epoch >= settings.lr_decay_epoch else 1.0
    return settings.learning_rate * factor


def _referred_boxes(record: QARecord, sample: SceneSample) -> List[AxisAlignedBox]:
    by_id = {a.instance_id: a for a in sample.annotations}
    return [by_id[i].box for i in record.referred_instance_ids if i in by_id]


def finetune_vqa(
    split: LoadedSplit,
    config: ExperimentConfig,
    pretrained_path=None,
    out_dir=None,
    log_fn=None,
) -> FinetuneResult:
    settings = config.vqa
    if not split.qa:
        raise ConfigError("VQA fine-tuning needs QA records")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)

    vocab = build_vocabulary(split)
    text_encoder = TextEncoder(len(vocab), config.text_encoder)
    text_encoder.requires_grad_(False)
    scene_encoder = SceneEncoder(config.scene_encoder)
    answer_vocab = build_answer_vocab(split.qa, settings.min_answer_count)
    model = VqaModel(
        num_answers=len(answer_vocab),
        num_classes=config.scene_encoder.num_classes,
        hidden_dim=settings.hidden_dim,
        heads=settings.heads,
        fusion_layers=settings.fusion_layers,
        scene_dim=config.scene_encoder.feature_dim,
        word_dim=config.text_encoder.word_dim,
    )
    if pretrained_path is not None:
        load_scene_encoder_weights(pretrained_path, config, scene_encoder)

    question_cache = _encode_questions(split.qa, text_encoder, vocab, config.text_encoder.max_len)
    scenes = _scene_index(split.scenes)
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
    n_records = len(split.qa)
    for epoch in range(1, settings.epochs + 1):
        lr = epoch_learning_rate(settings, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        for step in range(1, settings.steps_per_epoch + 1):
            idx = rng.choice(n_records, size=settings.batch_size, replace=settings.batch_size > n_records)
            losses = []
            breakdown_sums = Counter()
            for i in idx:
                record = split.qa[int(i)]
                sample, proposals, object_tokens = encode_scene(record.scene_id)
                prediction = model(question_cache[int(i)], object_tokens)
                referred = _referred_boxes(record, sample)
                loc_idx = localization_target([p.box for p in proposals.to_objects()], referred)
                targets = VqaTargets(
                    answer_multi_hot=answers_to_multi_hot(record.answers, answer_vocab),
                    object_multi_hot=classes_to_multi_hot(
                        record.referred_class_ids, config.scene_encoder.num_classes
                    ),
                    localization_index=loc_idx,
                    annotations=sample.annotations,
                )
                loss, breakdown = vqa_loss(prediction, proposals, targets)
                losses.append(loss)
                for key in ("det", "obj", "ans", "loc"):
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
                **{f"loss_{k}": breakdown_sums[k] / len(idx) for k in ("det", "obj", "ans", "loc")},
            }
            log.append(record_out)
            if log_fn is not None:
                log_fn(record_out)

    bundle = VqaBundle(
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
        save_vqa_checkpoint(checkpoint_path, bundle)
        vocab.save(out_dir / VOCAB_NAME)
        answer_vocab.save(out_dir / ANSWER_VOCAB_NAME)
        with open(out_dir / LOG_NAME, "w") as f:
            for rec in log:
                f.write(json.dumps(rec, sort_keys=True) + "\n")
    return FinetuneResult(bundle=bundle, log=log, checkpoint_path=checkpoint_path)


def save_vqa_checkpoint(path, bundle: VqaBundle) -> None:
    tensors = module_tensors(bundle.scene_encoder, "scene_encoder.")
    tensors.update(module_tensors(bundle.text_encoder, "text_encoder."))
    tensors.update(module_tensors(bundle.model, "vqa."))
    meta = {
        "kind": "vqa",
        "vocab_size": len(bundle.vocab),
        "num_answers": len(bundle.answer_vocab),
        "num_classes": bundle.config.scene_encoder.num_classes,
    }
    save_checkpoint(path, tensors, vqa_arch_fingerprint(bundle.config), meta)


def load_vqa_bundle(checkpoint_path, config: ExperimentConfig) -> VqaBundle:
    checkpoint_path = Path(checkpoint_path)
    tensors, meta, _ = load_checkpoint(checkpoint_path, expected_fingerprint=vqa_arch_fingerprint(config))
    if meta.get("kind") != "vqa":
        raise CheckpointError(f"{checkpoint_path}: expected a vqa checkpoint, got {meta.get('kind')!r}")
    vocab = Vocabulary.load(checkpoint_path.parent / VOCAB_NAME)
    answer_vocab = AnswerVocabulary.load(checkpoint_path.parent / ANSWER_VOCAB_NAME)
    if len(vocab) != meta["vocab_size"]:
        raise CheckpointError("vocabulary file does not match checkpoint vocab_size")
    text_encoder = TextEncoder(len(vocab), config.text_encoder)
    scene_encoder = SceneEncoder(config.scene_encoder)
    model = VqaModel(
        num_answers=len(answer_vocab),
        num_classes=config.scene_encoder.num_classes,
        hidden_dim=config.vqa.hidden_dim,
        heads=config.vqa.heads,
        fusion_layers=config.vqa.fusion_layers,
        scene_dim=config.scene_encoder.feature_dim,
        word_dim=config.text_encoder.word_dim,
    )
    load_module_tensors(scene_encoder, tensors, "scene_encoder.")
    load_module_tensors(text_encoder, tensors, "text_encoder.")
    load_module_tensors(model, tensors, "vqa.")
    return VqaBundle(
        scene_encoder=scene_encoder,
        text_encoder=text_encoder,
        model=model,
        vocab=vocab,
        answer_vocab=answer_vocab,
        config=config,
    )


def evaluate_vqa(split: LoadedSplit, bundle: VqaBundle) -> Tuple[EvalReport, List[dict]]:
    """Run the model over a split; returns the report and the prediction dump."""
    scenes = _scene_index(split.scenes)
    max_len = bundle.config.text_encoder.max_len
    em_hits, predicted_boxes, gt_boxes, candidates, references = [], [], [], [], []
    dump = []
    with torch.no_grad():
        for record in split.qa:
            sample = scenes[record.scene_id]
            proposals, object_tokens, _, _ = bundle.scene_encoder.encode_cloud(sample.cloud)
            question = bundle.text_encoder(tokenize(record.question, bundle.vocab, max_len))
            prediction = bundle.model(question, object_tokens)
            order = torch.argsort(prediction.answer_logits, descending=True)
            top = [bundle.answer_vocab.answers[int(i)] for i in order[:10]]
            answer = top[0]
            loc_idx = int(prediction.localization_logits.argmax())
            pred_box = proposals.to_objects()[loc_idx].box
            referred = _referred_boxes(record, sample)
            best_gt = (
                max(referred, key=lambda ref: box_iou(pred_box, ref)) if referred else None
            )
            em_hits.append(em_at_1(answer, record.answers))
            predicted_boxes.append(pred_box if referred else None)
            gt_boxes.append(best_gt)
            candidates.append(answer)
            references.append(list(record.answers))
            dump.append(
                {
                    "question_id": record.question_id,
                    "scene_id": record.scene_id,
                    "answer_top1": answer,
                    "answer_top10": top,
                    "predicted_box": {"center": pred_box.center.tolist(), "size": pred_box.size.tolist()},
                    "localization_argmax": loc_idx,
                }
            )
    report = build_report(em_hits, predicted_boxes, gt_boxes, candidates, references)
    return report, dump
