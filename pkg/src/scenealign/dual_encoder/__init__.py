from .adapter import read_embedding_file, write_embedding_file
from .encoders import (
    ImageEncoder,
    ImageEncoding,
    TextEncoder,
    TextEncoding,
    fuse_multiview,
    l2_normalize,
    patchify,
)
from .tokenizer import EOT_TOKEN, UNK_TOKEN, TokenSequence, Vocabulary, normalize_words, tokenize

__all__ = [
    "EOT_TOKEN",
    "ImageEncoder",
    "ImageEncoding",
    "TextEncoder",
    "TextEncoding",
    "TokenSequence",
    "UNK_TOKEN",
    "Vocabulary",
    "fuse_multiview",
    "l2_normalize",
    "normalize_words",
    "patchify",
    "read_embedding_file",
    "tokenize",
    "write_embedding_file",
]
