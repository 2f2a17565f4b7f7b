"""Prefix trie over valid action token sequences, yielding per-step masks.

The mask for a prefix marks every token whose addition keeps the prefix
extendable to a complete valid action; sampling through these masks can
never produce an undecodable sequence.
"""

import numpy as np

from .vocab import ActionVocabulary

__all__ = ["TokenFilterTrie", "UnreachablePrefix"]


class UnreachablePrefix(KeyError):
    pass


class _Node:
    __slots__ = ("children", "terminal")

    def __init__(self):
        self.children: dict[int, _Node] = {}
        self.terminal = False


class TokenFilterTrie:
    def __init__(self, sequences, vocab_size: int):
        self.vocab_size = int(vocab_size)
        self.root = _Node()
        self.max_depth = 0
        for seq in sequences:
            node = self.root
            for tok in seq:
                tok = int(tok)
                if not 0 <= tok < self.vocab_size:
                    raise ValueError(f"token {tok} outside vocabulary")
                node = node.children.setdefault(tok, _Node())
            node.terminal = True
            self.max_depth = max(self.max_depth, len(seq))
        if not self.root.children:
            raise ValueError("trie needs at least one sequence")

    @classmethod
    def from_vocabulary(cls, vocab: ActionVocabulary, vocab_size: int | None = None) -> "TokenFilterTrie":
        return cls(vocab.sequences, vocab_size or vocab.size)

    def _walk(self, prefix) -> _Node:
        node = self.root
        for tok in prefix:
            child = node.children.get(int(tok))
            if child is None:
                raise UnreachablePrefix(f"prefix {tuple(prefix)} not in trie")
            node = child
        return node

    def mask(self, prefix) -> np.ndarray:
        """Boolean vector over the vocabulary of tokens valid after `prefix`."""
        node = self._walk(prefix)
        out = np.zeros(self.vocab_size, dtype=bool)
        for tok in node.children:
            out[tok] = True
        return out

    def is_complete(self, prefix) -> bool:
        try:
            return self._walk(prefix).terminal
        except UnreachablePrefix:
            return False
