"""Word-level reference tokenizer: lowercase, punctuation-split, <unk>/<eot>."""

import json
import re
from dataclasses import dataclass
from typing import Iterable, List, Tuple

from ..errors import InputError

_WORD_RE = re.compile(r"[a-z0-9]+")
UNK_TOKEN = "<unk>"
EOT_TOKEN = "<eot>"


def normalize_words(text: str) -> List[str]:
    return _WORD_RE.findall(text.lower())


@dataclass(frozen=True)
class TokenSequence:
    ids: Tuple[int, ...]
    eot_index: int

    def __post_init__(self):
        if not 0 <= self.eot_index < len(self.ids):
            raise InputError(f"eot_index {self.eot_index} outside sequence of length {len(self.ids)}")


class Vocabulary:
    """Token <-> id map. Ids 0 and 1 are <unk> and <eot>; words follow sorted."""

    def __init__(self, tokens: List[str]):
        if tokens[:2] != [UNK_TOKEN, EOT_TOKEN]:
            raise InputError("vocabulary must start with <unk>, <eot>")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def build(cls, corpus: Iterable[str]) -> "Vocabulary":
        words = set()
        for text in corpus:
            words.update(normalize_words(text))
        return cls([UNK_TOKEN, EOT_TOKEN] + sorted(words))

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def unk_id(self) -> int:
        return 0

    @property
    def eot_id(self) -> int:
        return 1

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump({"tokens": self.tokens}, f, indent=2)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path) as f:
            return cls(json.load(f)["tokens"])


def tokenize(text: str, vocab: Vocabulary, max_len: int = 77) -> TokenSequence:
    """Word ids ending in <eot>; texts longer than max_len - 1 words are truncated."""
    words = normalize_words(text)
    if not words:
        raise InputError(f"cannot tokenize empty text {text!r}")
    words = words[: max_len - 1]
    ids = [vocab.index.get(w, vocab.unk_id) for w in words] + [vocab.eot_id]
    return TokenSequence(ids=tuple(ids), eot_index=len(ids) - 1)
