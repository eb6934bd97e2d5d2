from .embed import (
    export_embeddings,
    project_2d,
    read_embedding_table,
    type_cosine_separation,
    write_embedding_table,
)
from .losses import (
    AlignmentBatch,
    combine_pretrain_terms,
    contrastive_loss,
    cosine_alignment_loss,
    pretrain_loss,
)
from .trainer import (
    PretrainComponents,
    PretrainResult,
    build_components,
    build_vocabulary,
    load_scene_encoder_weights,
    prepare_scene,
    render_scene_views,
    run_pretraining,
    save_pretrain_checkpoint,
    scene_text_retrieval_accuracy,
)

__all__ = [
    "AlignmentBatch",
    "PretrainComponents",
    "PretrainResult",
    "build_components",
    "build_vocabulary",
    "combine_pretrain_terms",
    "contrastive_loss",
    "cosine_alignment_loss",
    "export_embeddings",
    "load_scene_encoder_weights",
    "prepare_scene",
    "pretrain_loss",
    "project_2d",
    "read_embedding_table",
    "render_scene_views",
    "run_pretraining",
    "save_pretrain_checkpoint",
    "scene_text_retrieval_accuracy",
    "type_cosine_separation",
    "write_embedding_table",
]
