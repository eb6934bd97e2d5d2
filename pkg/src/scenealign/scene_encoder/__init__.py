from .losses import as_proposals, detection_loss
from .model import (
    ObjectProposal,
    ProposalNetwork,
    Proposals,
    SceneEncoder,
    SceneTokens,
    SceneTransformer,
    annotations_to_tensors,
    project_to_clip_space,
    proposals_from_arrays,
    propose_objects,
    refine_with_transformer,
)

__all__ = [
    "ObjectProposal",
    "ProposalNetwork",
    "Proposals",
    "SceneEncoder",
    "SceneTokens",
    "SceneTransformer",
    "annotations_to_tensors",
    "as_proposals",
    "detection_loss",
    "project_to_clip_space",
    "proposals_from_arrays",
    "propose_objects",
    "refine_with_transformer",
]
