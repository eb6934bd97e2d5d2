"""3D scene encoder: object proposals -> transformer tokens -> global embedding.

The proposal stage is a compact vote-and-group pipeline: a shared point-wise
network with a radius-neighborhood max-pool, farthest-point-sampled seeds that
each vote an offset toward an object center, ball grouping around the votes,
and box/objectness/class heads on the pooled cluster features. A pre-norm
transformer layer with a learnable global token then refines the M proposal
features; the global token state is linearly projected (bias-free) into the
shared embedding space and L2-normalized.

Seed selection is deterministic: farthest-point sampling starts from the
point farthest from the centroid, ties broken by lowest index.
"""

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
import torch
import torch.nn as nn

from ..config import SceneEncoderConfig
from ..errors import InputError, NumericError
from ..kernels import ball_knn, farthest_point_indices
from ..layers import EncoderLayer
from ..scene_data.types import AxisAlignedBox, PointCloud


@dataclass(frozen=True)
class ObjectProposal:
    """One detected object candidate (numpy view of the tensors)."""

    feature: np.ndarray
    box: AxisAlignedBox
    objectness_logit: float
    class_logits: np.ndarray


@dataclass
class Proposals:
    """Batch of M proposals as tensors (gradients intact)."""

    features: torch.Tensor  # (M, feature_dim)
    centers: torch.Tensor  # (M, 3)
    sizes: torch.Tensor  # (M, 3)
    objectness: torch.Tensor  # (M,)
    class_logits: torch.Tensor  # (M, num_classes)

    @property
    def count(self) -> int:
        return self.features.shape[0]

    def to_objects(self) -> List[ObjectProposal]:
        return [
            ObjectProposal(
                feature=self.features[i].detach().cpu().numpy(),
                box=AxisAlignedBox(
                    center=self.centers[i].detach().cpu().numpy().astype(np.float64),
                    size=self.sizes[i].detach().cpu().numpy().astype(np.float64),
                ),
                objectness_logit=float(self.objectness[i]),
                class_logits=self.class_logits[i].detach().cpu().numpy(),
            )
            for i in range(self.count)
        ]


def proposals_from_arrays(features, centers, sizes, objectness, class_logits, dtype=torch.float64) -> Proposals:
    """Build a Proposals batch from plain arrays (mainly for tests/fixtures)."""
    return Proposals(
        features=torch.as_tensor(np.asarray(features), dtype=dtype),
        centers=torch.as_tensor(np.asarray(centers), dtype=dtype),
        sizes=torch.as_tensor(np.asarray(sizes), dtype=dtype),
        objectness=torch.as_tensor(np.asarray(objectness), dtype=dtype),
        class_logits=torch.as_tensor(np.asarray(class_logits), dtype=dtype),
    )


def _gather_max(features: torch.Tensor, member_idx: np.ndarray) -> torch.Tensor:
    """Channelwise max of ``features`` over each row of member indices (M, K)."""
    m, k = member_idx.shape
    gathered = features[torch.as_tensor(member_idx.reshape(-1), dtype=torch.long)]
    return gathered.view(m, k, -1).max(dim=1).values


class ProposalNetwork(nn.Module):
    def __init__(self, config: SceneEncoderConfig):
        super().__init__()
        self.config = config
        c = config
        self.point_mlp = nn.Sequential(
            nn.Linear(6, c.point_hidden),
            nn.GELU(),
            nn.Linear(c.point_hidden, c.point_hidden),
            nn.GELU(),
            nn.Linear(c.point_hidden, c.feature_dim),
        )
        self.vote_mlp = nn.Sequential(
            nn.Linear(c.feature_dim, c.feature_dim),
            nn.GELU(),
            nn.Linear(c.feature_dim, 3 + c.feature_dim),
        )
        self.cluster_mlp = nn.Sequential(
            nn.Linear(2 * c.feature_dim, c.feature_dim),
            nn.GELU(),
            nn.Linear(c.feature_dim, c.feature_dim),
        )
        self.center_head = nn.Linear(c.feature_dim, 3)
        self.size_head = nn.Linear(c.feature_dim, 3)
        self.objectness_head = nn.Linear(c.feature_dim, 1)
        self.class_head = nn.Linear(c.feature_dim, c.num_classes)

    def forward(self, points: torch.Tensor, colors: torch.Tensor) -> Proposals:
        m = self.config.num_proposals
        n = points.shape[0]
        if n < m:
            raise InputError(f"cloud has {n} points but {m} proposals are configured")
        xyz64 = points.detach().cpu().numpy().astype(np.float64)
        centroid = points.mean(dim=0)

        feats = self.point_mlp(torch.cat([points - centroid, colors], dim=1))
        neighbor_idx, _ = ball_knn(xyz64, xyz64, self.config.neighbor_radius, self.config.neighbor_k)
        feats = _gather_max(feats, neighbor_idx)  # self is always a member (distance 0)

        dist0 = ((xyz64 - xyz64.mean(axis=0)) ** 2).sum(axis=1)
        start = int(np.argmax(dist0))
        seed_idx = farthest_point_indices(xyz64, m, start)
        seed_t = torch.as_tensor(seed_idx, dtype=torch.long)
        seed_xyz = points[seed_t]
        seed_feat = feats[seed_t]

        vote = self.vote_mlp(seed_feat)
        vote_xyz = seed_xyz + vote[:, :3]
        vote_feat = seed_feat + vote[:, 3:]

        group_idx, counts = ball_knn(
            xyz64,
            vote_xyz.detach().cpu().numpy().astype(np.float64),
            self.config.group_radius,
            self.config.group_k,
        )
        # A vote that captured nothing falls back to its own seed point.
        group_idx = np.where(group_idx >= 0, group_idx, seed_idx[:, None])
        pooled = _gather_max(feats, group_idx)

        g = self.cluster_mlp(torch.cat([pooled, vote_feat], dim=1))
        centers = vote_xyz + self.center_head(g)
        sizes = torch.nn.functional.softplus(self.size_head(g)) + self.config.min_box_size
        return Proposals(
            features=g,
            centers=centers,
            sizes=sizes,
            objectness=self.objectness_head(g).squeeze(-1),
            class_logits=self.class_head(g),
        )


class SceneTransformer(nn.Module):
    """Learnable global token + pre-norm encoder layers over proposal features."""

    def __init__(self, config: SceneEncoderConfig):
        super().__init__()
        self.global_token = nn.Parameter(torch.zeros(config.feature_dim))
        nn.init.normal_(self.global_token, std=0.02)
        self.layers = nn.ModuleList(
            EncoderLayer(config.feature_dim, config.heads) for _ in range(config.transformer_layers)
        )

    def forward(self, features: torch.Tensor):
        x = torch.cat([self.global_token.unsqueeze(0), features])
        for layer in self.layers:
            x = layer(x)
        return x[1:], x[0]


class SceneEncoder(nn.Module):
    def __init__(self, config: SceneEncoderConfig = SceneEncoderConfig()):
        super().__init__()
        self.config = config
        self.proposal_net = ProposalNetwork(config)
        self.transformer = SceneTransformer(config)
        self.proj = nn.Linear(config.feature_dim, config.embed_dim, bias=False)

    def project(self, global_token: torch.Tensor) -> torch.Tensor:
        v = self.proj(global_token)
        norm = torch.linalg.vector_norm(v)
        if float(norm.detach()) < 1e-12:
            raise NumericError("scene projection collapsed to the zero vector")
        return v / norm

    def forward(self, points: torch.Tensor, colors: torch.Tensor):
        proposals = self.proposal_net(points, colors)
        object_tokens, global_token = self.transformer(proposals.features)
        return proposals, object_tokens, global_token, self.project(global_token)

    def encode_cloud(self, cloud: PointCloud):
        dtype = self.proj.weight.dtype
        points = torch.as_tensor(cloud.points, dtype=dtype)
        colors = torch.as_tensor(cloud.colors, dtype=dtype)
        return self.forward(points, colors)


@dataclass
class SceneTokens:
    object_tokens: np.ndarray  # (M, feature_dim)
    global_token: np.ndarray  # (feature_dim,)


def propose_objects(cloud: PointCloud, encoder: SceneEncoder) -> List[ObjectProposal]:
    proposals, _, _, _ = encoder.encode_cloud(cloud)
    return proposals.to_objects()


def refine_with_transformer(features, encoder: SceneEncoder) -> SceneTokens:
    dtype = encoder.proj.weight.dtype
    feats = torch.as_tensor(np.asarray(features), dtype=dtype)
    tokens, global_token = encoder.transformer(feats)
    return SceneTokens(
        object_tokens=tokens.detach().cpu().numpy(),
        global_token=global_token.detach().cpu().numpy(),
    )


def project_to_clip_space(global_token, encoder: SceneEncoder) -> np.ndarray:
    dtype = encoder.proj.weight.dtype
    vec = encoder.project(torch.as_tensor(np.asarray(global_token), dtype=dtype))
    return vec.detach().cpu().numpy()


def annotations_to_tensors(annotations: Sequence, dtype=torch.float32):
    centers = torch.as_tensor(
        np.stack([a.box.center for a in annotations]) if annotations else np.zeros((0, 3)), dtype=dtype
    )
    sizes = torch.as_tensor(
        np.stack([a.box.size for a in annotations]) if annotations else np.zeros((0, 3)), dtype=dtype
    )
    class_ids = torch.as_tensor([a.class_id for a in annotations], dtype=torch.long)
    return centers, sizes, class_ids
