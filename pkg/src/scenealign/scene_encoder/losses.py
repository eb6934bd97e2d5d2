"""Detection supervision for the proposal stage.

Each proposal is matched to its nearest annotation center. Proposals within
the positive radius are positives, beyond the negative radius negatives, the
rest ignored. Objectness is binary cross-entropy over positives+negatives;
center/size are smooth-L1 and the class term cross-entropy over positives.
Every term is a mean over its own support and contributes zero when that
support is empty; with no annotations at all, every proposal is a negative.
"""

from typing import Dict, Sequence, Tuple, Union

import torch
import torch.nn.functional as F

from ..config import SceneEncoderConfig
from .model import ObjectProposal, Proposals, annotations_to_tensors, proposals_from_arrays


def as_proposals(proposals: Union[Proposals, Sequence[ObjectProposal]], dtype=torch.float64) -> Proposals:
    if isinstance(proposals, Proposals):
        return proposals
    return proposals_from_arrays(
        features=[p.feature for p in proposals],
        centers=[p.box.center for p in proposals],
        sizes=[p.box.size for p in proposals],
        objectness=[p.objectness_logit for p in proposals],
        class_logits=[p.class_logits for p in proposals],
        dtype=dtype,
    )


def detection_loss(
    proposals: Union[Proposals, Sequence[ObjectProposal]],
    annotations: Sequence,
    positive_radius: float = SceneEncoderConfig.match_positive_m,
    negative_radius: float = SceneEncoderConfig.match_negative_m,
) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
    props = as_proposals(proposals)
    dtype = props.centers.dtype
    zero = torch.zeros((), dtype=dtype)
    m = props.count

    if len(annotations) == 0:
        objectness = F.binary_cross_entropy_with_logits(
            props.objectness, torch.zeros(m, dtype=dtype)
        )
        breakdown = {"objectness": objectness, "center": zero, "size": zero, "classification": zero}
    else:
        ann_centers, ann_sizes, ann_classes = annotations_to_tensors(annotations, dtype=dtype)
        dists = torch.cdist(props.centers.detach(), ann_centers)
        nearest_dist, nearest = dists.min(dim=1)
        positive = nearest_dist <= positive_radius
        negative = nearest_dist > negative_radius
        support = positive | negative
        if support.any():
            objectness = F.binary_cross_entropy_with_logits(
                props.objectness[support], positive[support].to(dtype)
            )
        else:
            objectness = zero
        if positive.any():
            matched = nearest[positive]
            center = F.smooth_l1_loss(props.centers[positive], ann_centers[matched])
            size = F.smooth_l1_loss(props.sizes[positive], ann_sizes[matched])
            classification = F.cross_entropy(props.class_logits[positive], ann_classes[matched])
        else:
            center = size = classification = zero
        breakdown = {
            "objectness": objectness,
            "center": center,
            "size": size,
            "classification": classification,
        }
    total = breakdown["objectness"] + breakdown["center"] + breakdown["size"] + breakdown["classification"]
    breakdown["total"] = total
    return total, breakdown
