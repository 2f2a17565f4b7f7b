"""Decoder-only causal transformer trunk (pre-norm, learned positions)."""

import numpy as np

from .autodiff import Tensor, matmul, relu, softmax
from .nn import LayerNorm, Linear

__all__ = ["TrunkConfig", "CausalTransformer"]


class TrunkConfig:
    def __init__(self, width=128, layers=4, heads=4):
        if width % heads:
            raise ValueError("width must divide evenly into heads")
        self.width = width
        self.layers = layers
        self.heads = heads


class _Block:
    def __init__(self, width, heads, rng):
        self.heads = heads
        self.head_dim = width // heads
        self.ln1 = LayerNorm(width)
        self.qkv = Linear(width, 3 * width, rng)
        self.proj = Linear(width, width, rng, scale=1.0 / np.sqrt(width) / 2)
        self.ln2 = LayerNorm(width)
        self.fc1 = Linear(width, 4 * width, rng)
        self.fc2 = Linear(4 * width, width, rng, scale=1.0 / np.sqrt(4 * width) / 2)

    def __call__(self, x: Tensor, causal_bias: np.ndarray) -> Tensor:
        B, T, W = x.shape
        h = self.ln1(x)
        qkv = self.qkv(h).reshape(B, T, 3, self.heads, self.head_dim)
        q = qkv[:, :, 0].transpose(0, 2, 1, 3)  # [B, heads, T, hd]
        k = qkv[:, :, 1].transpose(0, 2, 1, 3)
        v = qkv[:, :, 2].transpose(0, 2, 1, 3)
        scores = matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(self.head_dim))
        att = softmax(scores + causal_bias[:T, :T])
        mixed = matmul(att, v).transpose(0, 2, 1, 3).reshape(B, T, W)
        x = x + self.proj(mixed)
        x = x + self.fc2(relu(self.fc1(self.ln2(x))))
        return x

    def named_params(self, prefix):
        out = []
        for name, mod in (
            ("ln1", self.ln1),
            ("qkv", self.qkv),
            ("proj", self.proj),
            ("ln2", self.ln2),
            ("fc1", self.fc1),
            ("fc2", self.fc2),
        ):
            out.extend(mod.named_params(f"{prefix}.{name}"))
        return out


class CausalTransformer:
    def __init__(self, config: TrunkConfig, max_len: int, rng):
        self.config = config
        self.blocks = [_Block(config.width, config.heads, rng) for _ in range(config.layers)]
        self.ln_f = LayerNorm(config.width)
        bias = np.zeros((max_len, max_len))
        bias[np.triu_indices(max_len, k=1)] = -np.inf
        self._causal_bias = bias

    def __call__(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x, self._causal_bias)
        return self.ln_f(x)

    def named_params(self, prefix="trunk"):
        out = []
        for i, block in enumerate(self.blocks):
            out.extend(block.named_params(f"{prefix}.block{i}"))
        out.extend(self.ln_f.named_params(f"{prefix}.ln_f"))
        return out
