"""Word-level tokenization with BERT-style special tokens and fixed-length padding.

Whole words are the token unit (no subword pieces) so that each token stays
aligned one-to-one with its cognitive feature record. Reserved ids follow
the BERT convention: PAD=0, UNK=100, CLS=101, SEP=102.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError

log = logging.getLogger(__name__)

PAD_ID = 0
UNK_ID = 100
CLS_ID = 101
SEP_ID = 102
RESERVED = {"[PAD]": PAD_ID, "[UNK]": UNK_ID, "[CLS]": CLS_ID, "[SEP]": SEP_ID}
_RESERVED_IDS = frozenset(RESERVED.values())

MASK_KEEP = 0.0        # "-0" in additive-mask terms
MASK_SUPPRESS = -10000.0


def preprocess(text: str) -> list[str]:
    """Lowercase, strip punctuation (all non-alphanumerics), split on whitespace."""
    cleaned = []
    for raw in text.lower().split():
        word = "".join(ch for ch in raw if ch.isalnum())
        if word:
            cleaned.append(word)
    return cleaned


@dataclass
class Vocab:
    word_to_id: dict[str, int]
    id_to_word: dict[int, str]

    @property
    def size(self) -> int:
        """One past the largest assigned id (embedding table row count)."""
        return max(self.id_to_word) + 1

    def __contains__(self, word: str) -> bool:
        return word in self.word_to_id

    def id_of(self, word: str) -> int:
        return self.word_to_id.get(word, UNK_ID)

    def word_of(self, token_id: int) -> str:
        return self.id_to_word[token_id]

    def save(self, path: str | Path) -> None:
        lines = [f"{w}\t{i}" for w, i in sorted(self.word_to_id.items(), key=lambda kv: kv[1])]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        word_to_id: dict[str, int] = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            word, _, ident = line.rpartition("\t")
            word_to_id[word] = int(ident)
        for name, ident in RESERVED.items():
            if word_to_id.get(name) != ident:
                raise ValidationError(f"vocab file missing reserved token {name}={ident}")
        return cls(word_to_id, {i: w for w, i in word_to_id.items()})


def build_vocab(corpus: list[str] | list[list[str]], min_freq: int = 1) -> Vocab:
    """Assign ids by descending frequency, ties broken lexicographically.

    Ids count up from 1 and skip the reserved range 100-102.
    """
    counts: Counter[str] = Counter()
    for sentence in corpus:
        words = preprocess(sentence) if isinstance(sentence, str) else sentence
        counts.update(words)

    word_to_id = dict(RESERVED)
    next_id = 1
    for word, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        if counts[word] < min_freq:
            continue
        while next_id in _RESERVED_IDS:
            next_id += 1
        word_to_id[word] = next_id
        next_id += 1
    return Vocab(word_to_id, {i: w for w, i in word_to_id.items()})


@dataclass
class TokenizedSentence:
    """Fixed-length id sequence: [CLS] words... [SEP] [PAD]...

    base_mask is the additive attention mask (-0 at CLS/content/SEP,
    -10000 at PAD). word_count is the number of content tokens kept;
    n_truncated counts words dropped to fit max_len.
    """

    ids: np.ndarray
    base_mask: np.ndarray
    token_type_ids: np.ndarray
    word_count: int
    n_truncated: int = 0

    @property
    def max_len(self) -> int:
        return len(self.ids)

    def content_positions(self) -> range:
        """Positions holding real words (excludes CLS, SEP, PAD)."""
        return range(1, 1 + self.word_count)

    def real_positions(self) -> range:
        """Positions holding anything but PAD (includes CLS and SEP)."""
        return range(0, self.word_count + 2)


def encode(words: list[str], vocab: Vocab, max_len: int = 64) -> TokenizedSentence:
    if max_len < 3:
        raise ValidationError(f"max_len must be >= 3, got {max_len}")
    capacity = max_len - 2
    n_truncated = max(0, len(words) - capacity)
    if n_truncated:
        log.warning("truncating %d word(s) to fit max_len=%d", n_truncated, max_len)
        words = words[:capacity]

    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    ids[0] = CLS_ID
    for pos, word in enumerate(words, start=1):
        ids[pos] = vocab.id_of(word)
    ids[len(words) + 1] = SEP_ID

    mask = np.full(max_len, MASK_SUPPRESS, dtype=np.float64)
    mask[: len(words) + 2] = MASK_KEEP
    return TokenizedSentence(
        ids=ids,
        base_mask=mask,
        token_type_ids=np.zeros(max_len, dtype=np.int64),
        word_count=len(words),
        n_truncated=n_truncated,
    )


def decode(sentence: TokenizedSentence, vocab: Vocab) -> list[str]:
    """Inverse of encode for the content positions."""
    return [vocab.word_of(int(sentence.ids[p])) for p in sentence.content_positions()]
