"""Action space adapters: the bridge between token-predicting policies and
environment actions.

Every adapter implements the same three-part contract: a head that turns a
policy hidden state into the next action token, an embedding that feeds the
emitted token back into the policy input, and a decoder that turns a complete
token sequence into an executable action. The head and embedding weights live
on the policy; this module owns tokenization (encode), decoding, vocabulary
geometry, and the optional constrained-decoding mask.
"""

import numpy as np

from .rvq import ResidualCodec
from .spaces import ActionSpace, clamp_action
from .trie import TokenFilterTrie
from .uniform_quant import UniformQuantizer
from .vocab import NOOP, ActionVocabulary, build_vocabulary

__all__ = [
    "UniformAdapter",
    "CodecAdapter",
    "VocabAdapter",
    "DiscretePredAdapter",
    "ContinuousPredAdapter",
    "make_adapter",
    "CONTINUOUS_KINDS",
    "DISCRETE_KINDS",
]

CONTINUOUS_KINDS = ("pred", "uniform", "vq", "rvq")
DISCRETE_KINDS = ("pred", "semlang", "lang")


class UniformAdapter:
    """Per-dimension uniform binning; D tokens per action, K bins each."""

    kind = "uniform"
    feeds_tokens = True
    is_continuous = True
    head_style = "token"

    def __init__(self, space: ActionSpace, bins: int):
        self.space = space
        self.quantizer = UniformQuantizer(space, bins)
        self.vocab_size = bins
        self.tokens_per_action = space.dims

    def encode(self, action) -> np.ndarray:
        return self.quantizer.tokenize(action)

    def decode(self, tokens) -> np.ndarray:
        return self.quantizer.detokenize(tokens)

    def trie(self):
        return None  # every token is valid at every step


class CodecAdapter:
    """Learned residual-VQ tokenization; M tokens per action, K codes each."""

    feeds_tokens = True
    is_continuous = True
    head_style = "token"

    def __init__(self, codec: ResidualCodec, space: ActionSpace):
        if codec.config.action_dim != space.dims:
            raise ValueError("codec dimensionality does not match the action space")
        self.codec = codec
        self.space = space
        self.kind = "vq" if codec.config.codebooks == 1 else "rvq"
        self.vocab_size = codec.vocab_size
        self.tokens_per_action = codec.tokens_per_action

    def encode(self, action) -> np.ndarray:
        return self.codec.tokenize(clamp_action(action, self.space))

    def decode(self, tokens) -> np.ndarray:
        return self.codec.detokenize(tokens, clamp_to=self.space)

    def trie(self):
        return None


class VocabAdapter:
    """Word-token adapter (semantic or numeric style) with end-of-action
    termination; the head vocabulary may be padded past the used words so a
    policy must learn to avoid inert ids (or be given the token filter)."""

    feeds_tokens = True
    is_continuous = False

    def __init__(self, vocab: ActionVocabulary, vocab_size: int | None = None):
        self.vocab = vocab
        self.kind = "semlang" if vocab.style == "semantic" else "lang"
        self.vocab_size = max(vocab.size, vocab_size or 0)
        self.tokens_per_action = vocab.max_sequence_length
        self.end_id = vocab.end_id
        self._trie = TokenFilterTrie.from_vocabulary(vocab, self.vocab_size)

    head_style = "token"

    def encode(self, action: str) -> np.ndarray:
        return self.vocab.encode(action)

    def decode(self, tokens):
        toks = [int(t) for t in tokens]
        if self.end_id in toks:  # ignore padding after the terminator
            toks = toks[: toks.index(self.end_id) + 1]
        return self.vocab.decode(toks)

    def trie(self) -> TokenFilterTrie:
        return self._trie


class DiscretePredAdapter:
    """Single categorical token over the action set; decoder is the identity."""

    kind = "pred"
    feeds_tokens = True
    is_continuous = False
    head_style = "categorical"

    def __init__(self, space: ActionSpace):
        self.space = space
        self.vocab_size = len(space.actions)
        self.tokens_per_action = 1

    def encode(self, action: str) -> np.ndarray:
        return np.array([self.space.actions.index(action)], dtype=np.int64)

    def decode(self, tokens):
        i = int(tokens[0])
        if 0 <= i < len(self.space.actions):
            return self.space.actions[i]
        return NOOP

    def trie(self):
        return None


class ContinuousPredAdapter:
    """Direct regression to the action from the first hidden state; no tokens."""

    kind = "pred"
    feeds_tokens = False
    is_continuous = True
    head_style = "regression"
    vocab_size = 0
    tokens_per_action = 1

    def __init__(self, space: ActionSpace, proprio_dim: int = 0):
        self.space = space
        self.proprio_dim = proprio_dim

    def encode(self, action) -> np.ndarray:
        return clamp_action(action, self.space)

    def decode(self, raw) -> np.ndarray:
        return clamp_action(np.asarray(raw, dtype=np.float64), self.space)

    def trie(self):
        return None


def make_adapter(
    kind: str,
    space: ActionSpace,
    codec: ResidualCodec | None = None,
    vocab: ActionVocabulary | None = None,
    bins: int = 64,
    vocab_size: int | None = None,
    proprio_dim: int = 0,
):
    """Construct the adapter named by `kind` for the given space."""
    if space.is_continuous:
        if kind == "pred":
            return ContinuousPredAdapter(space, proprio_dim)
        if kind == "uniform":
            return UniformAdapter(space, bins)
        if kind in ("vq", "rvq"):
            if codec is None:
                raise ValueError(f"{kind} adapter needs a trained codec")
            return CodecAdapter(codec, space)
        raise ValueError(f"unknown continuous adapter {kind!r}")
    if kind == "pred":
        return DiscretePredAdapter(space)
    if kind in ("semlang", "lang"):
        if vocab is None:
            vocab = build_vocabulary(space, "semantic" if kind == "semlang" else "numeric")
        return VocabAdapter(vocab, vocab_size)
    raise ValueError(f"unknown discrete adapter {kind!r}")
