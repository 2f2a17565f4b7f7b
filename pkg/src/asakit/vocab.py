"""Word-level action vocabularies for discrete action sets.

Two styles:
  semantic — each action name is split on whitespace into word tokens
             ("pick apple" -> [pick, apple, <end>]);
  numeric  — every distinct word is remapped to a digit-string token in
             first-appearance order ("pick apple" -> ["0", "1", <end>]),
             preserving the per-action token count of the semantic style.

An explicit end-of-action token closes every sequence, which keeps decoding
unambiguous even when one action name is a word-wise prefix of another.
"""

from dataclasses import dataclass

import numpy as np

from .spaces import ActionSpace, SpaceError

__all__ = ["ActionVocabulary", "NOOP", "NotDiscrete", "build_vocabulary"]

END_WORD = "<end>"


class NotDiscrete(SpaceError):
    pass


class _NoOp:
    """Distinguished decode result for invalid or incomplete sequences."""

    def __repr__(self):
        return "NOOP"

    def __bool__(self):
        return False


NOOP = _NoOp()


@dataclass(frozen=True)
class ActionVocabulary:
    words: tuple[str, ...]  # token id -> word; includes END_WORD
    end_id: int
    actions: tuple[str, ...]  # original action names, in declaration order
    sequences: tuple[tuple[int, ...], ...]  # per action, ends with end_id
    style: str

    @property
    def size(self) -> int:
        return len(self.words)

    @property
    def max_sequence_length(self) -> int:
        return max(len(s) for s in self.sequences)

    def word_id(self, word: str) -> int:
        return self.words.index(word)

    def encode(self, action: str) -> np.ndarray:
        try:
            i = self.actions.index(action)
        except ValueError:
            raise KeyError(f"unknown action {action!r}") from None
        return np.asarray(self.sequences[i], dtype=np.int64)

    def decode(self, tokens):
        """Matching action name, or NOOP for anything that is not one."""
        key = tuple(int(t) for t in tokens)
        for name, seq in zip(self.actions, self.sequences):
            if seq == key:
                return name
        return NOOP

    def sequence_lengths(self) -> list[int]:
        return [len(s) for s in self.sequences]

    # -- persistence: token table, blank line, action/sequence block ---------

    def dump(self, path) -> None:
        lines = [f"{i}\t{w}" for i, w in enumerate(self.words)]
        lines.append("")
        for name, seq in zip(self.actions, self.sequences):
            lines.append(name + "\t" + " ".join(str(t) for t in seq))
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "ActionVocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
        head, _, tail = text.partition("\n\n")
        words = []
        for line in head.splitlines():
            idx, _, word = line.partition("\t")
            if int(idx) != len(words):
                raise ValueError(f"non-dense token table at id {idx}")
            words.append(word)
        actions, sequences = [], []
        for line in tail.splitlines():
            if not line:
                continue
            name, _, ids = line.partition("\t")
            actions.append(name)
            sequences.append(tuple(int(t) for t in ids.split()))
        end_id = words.index(END_WORD)
        style = "numeric" if all(w.isdigit() or w == END_WORD for w in words) else "semantic"
        return cls(
            words=tuple(words),
            end_id=end_id,
            actions=tuple(actions),
            sequences=tuple(sequences),
            style=style,
        )


def build_vocabulary(space: ActionSpace, style: str = "semantic") -> ActionVocabulary:
    """Construct the token vocabulary for a discrete action space."""
    if space.is_continuous:
        raise NotDiscrete("vocabulary requires a discrete action space")
    if style not in ("semantic", "numeric"):
        raise ValueError(f"unknown style {style!r}")

    split = [name.split() for name in space.actions]
    if style == "numeric":
        # global word -> digit-string map in first-appearance order; token
        # count per action is identical to the semantic style
        digit_of: dict[str, str] = {}
        for words in split:
            for w in words:
                if w not in digit_of:
                    digit_of[w] = str(len(digit_of))
        split = [[digit_of[w] for w in words] for words in split]

    vocab_words: list[str] = []
    ids: dict[str, int] = {}
    for words in split:
        for w in words:
            if w not in ids:
                ids[w] = len(vocab_words)
                vocab_words.append(w)
    end_id = len(vocab_words)
    vocab_words.append(END_WORD)

    sequences = [tuple(ids[w] for w in words) + (end_id,) for words in split]
    if len(set(sequences)) != len(sequences):
        raise SpaceError("two actions share a token sequence")
    return ActionVocabulary(
        words=tuple(vocab_words),
        end_id=end_id,
        actions=tuple(space.actions),
        sequences=tuple(sequences),
        style=style,
    )
