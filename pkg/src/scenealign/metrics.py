"""Evaluation metrics: EM@1, box IoU accuracy, BLEU-n, ROUGE-L, CIDEr.

All functions are pure and deterministic. Tokenization everywhere is the
EM@1 normalization (lowercase, trim, collapse whitespace) plus a whitespace
split. Conventions, since the originals leave them open at sentence level:

* BLEU-n: clipped n-gram precision with add-1 smoothing when a count is zero
  for n >= 2, geometric mean over 1..n, brevity penalty against the closest
  reference length (ties to the shorter). A candidate with no k-grams for
  some k <= n scores 0.
* ROUGE-L: longest-common-subsequence F-measure with beta = 1.2, maximum
  over references.
* CIDEr: plain (not the -D variant): TF-IDF n-gram cosine for n = 1..4
  averaged and scaled by 10; document frequencies count reference sets that
  contain the n-gram, and unseen n-grams fall back to df = 1.
"""

import math
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import InputError
from .scene_data.types import AxisAlignedBox


def normalize_answer(text: str) -> str:
    return " ".join(text.lower().split())


def em_at_1(predicted: str, ground_truths: Sequence[str]) -> int:
    """1 iff the normalized prediction matches any normalized ground truth."""
    if not ground_truths:
        raise InputError("em_at_1 needs a non-empty ground-truth set")
    target = normalize_answer(predicted)
    return int(any(target == normalize_answer(g) for g in ground_truths))


def box_iou(a: AxisAlignedBox, b: AxisAlignedBox) -> float:
    lo = np.maximum(a.min_corner, b.min_corner)
    hi = np.minimum(a.max_corner, b.max_corner)
    inter = float(np.prod(np.clip(hi - lo, 0.0, None)))
    union = a.volume + b.volume - inter
    return inter / union if union > 0 else 0.0


def acc_at_iou(predicted: Sequence[AxisAlignedBox], ground_truth: Sequence[AxisAlignedBox], threshold: float) -> float:
    """Fraction of aligned pairs with IoU strictly above the threshold."""
    if len(predicted) != len(ground_truth):
        raise InputError(f"acc_at_iou: {len(predicted)} predictions vs {len(ground_truth)} ground truths")
    if not predicted:
        return 0.0
    hits = sum(box_iou(p, g) > threshold for p, g in zip(predicted, ground_truth))
    return hits / len(predicted)


def _tokens(text: str) -> List[str]:
    return normalize_answer(text).split()


def _ngram_counts(tokens: List[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_n(candidate: str, references: Sequence[str], n: int) -> float:
    if not 1 <= n <= 4:
        raise InputError(f"bleu_n supports n in 1..4, got {n}")
    cand = _tokens(candidate)
    refs = [_tokens(r) for r in references]
    if not cand or not refs:
        return 0.0
    log_sum = 0.0
    for k in range(1, n + 1):
        cand_counts = _ngram_counts(cand, k)
        total = max(len(cand) - k + 1, 0)
        if total == 0:
            return 0.0
        max_ref = Counter()
        for ref in refs:
            for gram, count in _ngram_counts(ref, k).items():
                max_ref[gram] = max(max_ref[gram], count)
        clipped = sum(min(count, max_ref[gram]) for gram, count in cand_counts.items())
        if clipped == 0:
            if k == 1:
                return 0.0
            precision = (clipped + 1.0) / (total + 1.0)
        else:
            precision = clipped / total
        log_sum += math.log(precision)
    c = len(cand)
    r = min((abs(len(ref) - c), len(ref)) for ref in refs)[1]
    brevity = 1.0 if c > r else math.exp(1.0 - r / c)
    return brevity * math.exp(log_sum / n)


def _lcs_length(a: List[str], b: List[str]) -> int:
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        cur = [0] * (len(b) + 1)
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[len(b)]


def rouge_l(candidate: str, references: Sequence[str], beta: float = 1.2) -> float:
    cand = _tokens(candidate)
    if not cand or not references:
        return 0.0
    best = 0.0
    for reference in references:
        ref = _tokens(reference)
        if not ref:
            continue
        lcs = _lcs_length(cand, ref)
        if lcs == 0:
            continue
        precision = lcs / len(cand)
        recall = lcs / len(ref)
        score = (1 + beta**2) * precision * recall / (recall + beta**2 * precision)
        best = max(best, score)
    return best


def cider(candidates: Sequence[str], references: Sequence[Sequence[str]], max_n: int = 4):
    """Corpus CIDEr and per-item scores.

    ``references[i]`` is the reference list for ``candidates[i]``; the corpus
    for document frequencies is exactly these reference sets.
    """
    if len(candidates) != len(references):
        raise InputError("cider: candidates and references must align")
    if not references or any(len(r) == 0 for r in references):
        raise InputError("cider: every item needs a non-empty reference list")
    num_items = len(references)
    doc_freq = [Counter() for _ in range(max_n)]
    for refs in references:
        seen = [set() for _ in range(max_n)]
        for ref in refs:
            toks = _tokens(ref)
            for k in range(1, max_n + 1):
                seen[k - 1].update(_ngram_counts(toks, k))
        for k in range(max_n):
            for gram in seen[k]:
                doc_freq[k][gram] += 1

    log_items = math.log(num_items)

    def tfidf(counts: Counter, k: int) -> Dict[tuple, float]:
        return {
            gram: count * (log_items - math.log(max(1.0, doc_freq[k][gram])))
            for gram, count in counts.items()
        }

    def cosine(u: Dict[tuple, float], v: Dict[tuple, float]) -> float:
        nu = math.sqrt(sum(x * x for x in u.values()))
        nv = math.sqrt(sum(x * x for x in v.values()))
        if nu == 0.0 or nv == 0.0:
            return 0.0
        dot = sum(val * v[gram] for gram, val in u.items() if gram in v)
        return dot / (nu * nv)

    per_item = []
    for cand, refs in zip(candidates, references):
        cand_toks = _tokens(cand)
        score_n = []
        for k in range(1, max_n + 1):
            cand_vec = tfidf(_ngram_counts(cand_toks, k), k - 1)
            sims = []
            for ref in refs:
                ref_vec = tfidf(_ngram_counts(_tokens(ref), k), k - 1)
                sims.append(cosine(cand_vec, ref_vec))
            score_n.append(sum(sims) / len(sims))
        per_item.append(10.0 * sum(score_n) / max_n)
    return (sum(per_item) / num_items if per_item else 0.0), per_item


@dataclass
class EvalReport:
    """Aggregate evaluation results; fields not applicable to a task are None."""

    em_at_1: float
    acc_at_025: Optional[float]
    acc_at_05: Optional[float]
    bleu_1: float
    bleu_4: float
    rouge_l: float
    cider: float
    counts: Dict[str, int]

    def to_dict(self) -> dict:
        return {
            "em_at_1": self.em_at_1,
            "acc_at_025": self.acc_at_025,
            "acc_at_05": self.acc_at_05,
            "bleu_1": self.bleu_1,
            "bleu_4": self.bleu_4,
            "rouge_l": self.rouge_l,
            "cider": self.cider,
            "counts": dict(self.counts),
        }

    def table(self, method: str = "ours") -> str:
        """Text table mirroring the usual QA benchmark column layout."""
        headers = ["Method", "EM@1", "BLEU-1", "BLEU-4", "ROUGE", "CIDEr", "Acc@0.25", "Acc@0.5"]

        def fmt(x):
            return "-" if x is None else f"{100.0 * x:.2f}"

        row = [
            method,
            fmt(self.em_at_1),
            fmt(self.bleu_1),
            fmt(self.bleu_4),
            fmt(self.rouge_l),
            f"{10.0 * self.cider:.2f}",  # cider lives in [0, 10]
            fmt(self.acc_at_025),
            fmt(self.acc_at_05),
        ]
        widths = [max(len(h), len(r)) for h, r in zip(headers, row)]

        def line(cells):
            return "  ".join(c.ljust(w) for c, w in zip(cells, widths))

        return "\n".join([line(headers), line(["-" * w for w in widths]), line(row)])


def build_report(
    em_hits: Sequence[int],
    predicted_boxes: Sequence[Optional[AxisAlignedBox]] = (),
    gt_boxes: Sequence[Optional[AxisAlignedBox]] = (),
    candidates: Sequence[str] = (),
    references: Sequence[Sequence[str]] = (),
) -> EvalReport:
    """Assemble an EvalReport from per-record results.

    Localization entries may be None (records without referred objects); they
    are excluded from the IoU accuracies and counted separately.
    """
    n = len(em_hits)
    em = sum(em_hits) / n if n else 0.0
    pairs = [
        (p, g) for p, g in zip(predicted_boxes, gt_boxes) if p is not None and g is not None
    ]
    if pairs:
        preds = [p for p, _ in pairs]
        gts = [g for _, g in pairs]
        acc25 = acc_at_iou(preds, gts, 0.25)
        acc50 = acc_at_iou(preds, gts, 0.5)
    else:
        acc25 = acc50 = None
    if candidates:
        b1 = float(np.mean([bleu_n(c, r, 1) for c, r in zip(candidates, references)]))
        b4 = float(np.mean([bleu_n(c, r, 4) for c, r in zip(candidates, references)]))
        rl = float(np.mean([rouge_l(c, r) for c, r in zip(candidates, references)]))
        cd, _ = cider(list(candidates), [list(r) for r in references])
    else:
        b1 = b4 = rl = cd = 0.0
    return EvalReport(
        em_at_1=em,
        acc_at_025=acc25,
        acc_at_05=acc50,
        bleu_1=b1,
        bleu_4=b4,
        rouge_l=rl,
        cider=cd,
        counts={"answered": n, "localized": len(pairs)},
    )
