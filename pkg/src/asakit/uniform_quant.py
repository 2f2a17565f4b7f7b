"""Uniform per-dimension binning of a bounded continuous action space.

An action becomes D tokens, one per dimension; token k_d is the index of the
half-open bin [m_d + k*w, m_d + (k+1)*w) with w = (M_d - m_d)/K, except the
upper bound which closes into bin K-1. Decoding returns bin centers.
"""

import numpy as np

from .spaces import ActionSpace, DimensionMismatch, SpaceError

__all__ = ["UniformQuantizer", "TokenOutOfRange"]


class TokenOutOfRange(ValueError):
    pass


class UniformQuantizer:
    def __init__(self, space: ActionSpace, bins: int):
        if not space.is_continuous:
            raise SpaceError("uniform quantizer requires a continuous space")
        if bins < 2:
            raise ValueError("need at least 2 bins")
        self.space = space
        self.bins = int(bins)

    @property
    def vocab_size(self) -> int:
        return self.bins

    @property
    def tokens_per_action(self) -> int:
        return self.space.dims

    def tokenize(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=np.float64)
        if a.shape[-1] != self.space.dims:
            raise DimensionMismatch(f"expected {self.space.dims} dims")
        lo, hi = self.space.lower, self.space.upper
        a = np.clip(a, lo, hi)
        k = np.floor((a - lo) * self.bins / (hi - lo)).astype(np.int64)
        return np.minimum(k, self.bins - 1)

    def detokenize(self, tokens) -> np.ndarray:
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.shape[-1] != self.space.dims:
            raise DimensionMismatch(f"expected {self.space.dims} tokens")
        if np.any(tokens < 0) or np.any(tokens >= self.bins):
            raise TokenOutOfRange(f"token outside [0, {self.bins})")
        lo, hi = self.space.lower, self.space.upper
        return lo + (tokens + 0.5) * (hi - lo) / self.bins

    def reconstruction_mse(self, actions) -> float:
        """Mean over actions of squared round-trip L2 error divided by D."""
        actions = np.asarray(actions, dtype=np.float64)
        if actions.size == 0:
            raise ValueError("empty action set")
        recon = self.detokenize(self.tokenize(actions))
        clamped = np.clip(actions, self.space.lower, self.space.upper)
        err = recon - clamped
        return float(np.mean(np.sum(err * err, axis=-1) / self.space.dims))
