"""Whitespace tokenizer over a closed synthetic vocabulary.

Using whole-word tokens removes subword confounds from the routing analysis.
Specials occupy fixed low ids; the vocabulary file stores one non-special
token per line (id = line number + number of specials).
"""

from __future__ import annotations

import logging

from ..errors import TokenizationError
from .io import atomic_write_text

log = logging.getLogger(__name__)

SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[BOS]", "[EOS]")


class Vocabulary:
    def __init__(self, tokens: list[str]):
        for t in tokens:
            if t in SPECIAL_TOKENS:
                raise TokenizationError(f"token {t!r} collides with a special token")
        self.tokens = list(tokens)
        self._all = list(SPECIAL_TOKENS) + self.tokens
        self._ids = {t: i for i, t in enumerate(self._all)}
        if len(self._ids) != len(self._all):
            raise TokenizationError("duplicate tokens in vocabulary")

    pad_id = 0
    unk_id = 1
    cls_id = 2
    bos_id = 3
    eos_id = 4

    def __len__(self):
        return len(self._all)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    @classmethod
    def build(cls, texts) -> "Vocabulary":
        """Closed vocabulary over whitespace tokens of the given corpus,
        sorted for a generation-order-independent id assignment."""
        seen = set()
        for text in texts:
            seen.update(text.split())
        return cls(sorted(seen - set(SPECIAL_TOKENS)))

    def tokenize(self, text: str) -> list[int]:
        ids = []
        for tok in text.split():
            i = self._ids.get(tok)
            if i is None:
                log.warning("unknown token %r mapped to [UNK]", tok)
                i = self.unk_id
            ids.append(i)
        return ids

    def detokenize(self, ids) -> str:
        toks = []
        for i in ids:
            if not 0 <= int(i) < len(self._all):
                raise TokenizationError(f"token id {int(i)} outside vocabulary "
                                        f"of size {len(self._all)}")
            toks.append(self._all[int(i)])
        return " ".join(toks)

    def save(self, path):
        atomic_write_text(path, "\n".join(self.tokens) + ("\n" if self.tokens else ""))

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            tokens = [line.rstrip("\n") for line in f if line.rstrip("\n")]
        return cls(tokens)
