"""Layers built on the autodiff engine: linear maps, embeddings, MLPs."""

import numpy as np

from .autodiff import Tensor, embedding_lookup, layer_norm, matmul, relu

__all__ = ["Linear", "Embedding", "LayerNorm", "MLP", "collect_params"]


class Linear:
    """y = x @ W + b with W of shape (in_dim, out_dim)."""

    def __init__(self, in_dim, out_dim, rng, bias=True, scale=None):
        std = (1.0 / np.sqrt(in_dim)) if scale is None else scale
        self.W = Tensor(rng.normal(0.0, std, size=(in_dim, out_dim)), requires_grad=True)
        self.b = Tensor(np.zeros(out_dim), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.W)
        return y + self.b if self.b is not None else y

    def named_params(self, prefix):
        out = [(f"{prefix}.W", self.W)]
        if self.b is not None:
            out.append((f"{prefix}.b", self.b))
        return out


class Embedding:
    def __init__(self, count, dim, rng, std=0.02):
        self.table = Tensor(rng.normal(0.0, std, size=(count, dim)), requires_grad=True)

    def __call__(self, ids) -> Tensor:
        return embedding_lookup(self.table, ids)

    def named_params(self, prefix):
        return [(f"{prefix}.table", self.table)]


class LayerNorm:
    def __init__(self, dim, eps=1e-5):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)

    def named_params(self, prefix):
        return [(f"{prefix}.gamma", self.gamma), (f"{prefix}.beta", self.beta)]


class MLP:
    """Stack of linear layers with ReLU between them (none after the last)."""

    def __init__(self, sizes, rng, bias=True):
        if len(sizes) < 2:
            raise ValueError("MLP needs at least input and output sizes")
        self.layers = [
            Linear(sizes[i], sizes[i + 1], rng, bias=bias) for i in range(len(sizes) - 1)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = relu(x)
        return x

    def named_params(self, prefix):
        out = []
        for i, layer in enumerate(self.layers):
            out.extend(layer.named_params(f"{prefix}.layer{i}"))
        return out


def collect_params(named) -> list[Tensor]:
    return [t for _, t in named]
