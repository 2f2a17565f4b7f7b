"""Residual vector-quantized action codec (VQ is the single-codebook case).

An encoder MLP maps a D-dim action to an L-dim latent; M codebooks of K codes
each quantize the latent greedily, codebook by codebook, on the residual left
by the previous ones; a decoder MLP maps the summed codes back to an action.
Greedy residual selection gives K^M representable token sequences.

Training follows the VQ-VAE recipe: reconstruction MSE plus a commitment
term, straight-through gradients into the encoder, and exponential-moving-
average codebook updates with dead codes reset once per epoch.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, mse, no_grad, straight_through
from .nn import MLP, collect_params
from .optim import AdamW
from .uniform_quant import TokenOutOfRange
from .spaces import DimensionMismatch

__all__ = ["CodecConfig", "ResidualCodec", "train_codec", "reconstruction_mse"]

MAGIC = b"ASACODEC"
FORMAT_VERSION = 1
MLP_LAYERS = 4  # fixed by format version 1: hidden width is inferred on load


@dataclass
class CodecConfig:
    action_dim: int
    latent_dim: int = 32
    codebooks: int = 2
    codebook_size: int = 64
    hidden: int = 128
    commitment: float = 0.25
    ema_decay: float = 0.99
    epochs: int = 3
    batch_size: int = 64
    lr: float = 1e-3


def _mlp_sizes(d_in: int, hidden: int, d_out: int) -> list[int]:
    return [d_in] + [hidden] * (MLP_LAYERS - 1) + [d_out]


class ResidualCodec:
    def __init__(self, config: CodecConfig, rng: np.random.Generator):
        if config.codebooks < 1:
            raise ValueError("need at least one codebook")
        self.config = config
        c = config
        self.encoder = MLP(_mlp_sizes(c.action_dim, c.hidden, c.latent_dim), rng)
        self.decoder = MLP(_mlp_sizes(c.latent_dim, c.hidden, c.action_dim), rng)
        self.codebooks = np.zeros((c.codebooks, c.codebook_size, c.latent_dim))

    # -- inference ----------------------------------------------------------

    @property
    def tokens_per_action(self) -> int:
        return self.config.codebooks

    @property
    def vocab_size(self) -> int:
        return self.config.codebook_size

    def encode_latent(self, actions) -> np.ndarray:
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        with no_grad():
            return self.encoder(Tensor(actions)).data

    def decode_latent(self, latents) -> np.ndarray:
        latents = np.atleast_2d(np.asarray(latents, dtype=np.float64))
        with no_grad():
            return self.decoder(Tensor(latents)).data

    def quantize_latent(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Greedy residual assignment. Returns (tokens [N, M], sum [N, L])."""
        z = np.atleast_2d(z)
        n = z.shape[0]
        tokens = np.zeros((n, self.config.codebooks), dtype=np.int64)
        total = np.zeros_like(z)
        residual = z.copy()
        for m, book in enumerate(self.codebooks):
            d = ((residual[:, None, :] - book[None, :, :]) ** 2).sum(axis=-1)
            k = np.argmin(d, axis=1)  # ties resolve to the lowest index
            tokens[:, m] = k
            total += book[k]
            residual = z - total
        return tokens, total

    def tokenize(self, actions) -> np.ndarray:
        actions = np.asarray(actions, dtype=np.float64)
        single = actions.ndim == 1
        if actions.shape[-1] != self.config.action_dim:
            raise DimensionMismatch(f"expected {self.config.action_dim} dims")
        tokens, _ = self.quantize_latent(self.encode_latent(actions))
        return tokens[0] if single else tokens

    def detokenize(self, tokens, clamp_to=None) -> np.ndarray:
        tokens = np.asarray(tokens, dtype=np.int64)
        single = tokens.ndim == 1
        tokens = np.atleast_2d(tokens)
        if tokens.shape[-1] != self.config.codebooks:
            raise TokenOutOfRange(f"expected {self.config.codebooks} tokens")
        if np.any(tokens < 0) or np.any(tokens >= self.config.codebook_size):
            raise TokenOutOfRange(f"token outside [0, {self.config.codebook_size})")
        total = np.zeros((tokens.shape[0], self.config.latent_dim))
        for m, book in enumerate(self.codebooks):
            total += book[tokens[:, m]]
        out = self.decode_latent(total)
        if clamp_to is not None:
            out = np.clip(out, clamp_to.lower, clamp_to.upper)
        return out[0] if single else out

    def round_trip(self, actions, clamp_to=None) -> np.ndarray:
        return self.detokenize(self.tokenize(np.atleast_2d(actions)), clamp_to=clamp_to)

    def named_params(self):
        return self.encoder.named_params("encoder") + self.decoder.named_params("decoder")

    # -- constructed codecs for analysis -------------------------------------

    @classmethod
    def with_identity_transforms(cls, codebooks: np.ndarray, hidden: int = 128) -> "ResidualCodec":
        """Codec whose encoder and decoder are exact identities (L = D).

        ReLU MLPs represent the identity by splitting positive and negative
        parts across 2D hidden units and recombining them in the last layer.
        Useful for studying quantization in isolation.
        """
        codebooks = np.asarray(codebooks, dtype=np.float64)
        M, K, L = codebooks.shape
        if hidden < 2 * L:
            raise ValueError("identity construction needs hidden >= 2*latent_dim")
        cfg = CodecConfig(
            action_dim=L, latent_dim=L, codebooks=M, codebook_size=K, hidden=hidden
        )
        codec = cls(cfg, np.random.default_rng(0))
        for mlp in (codec.encoder, codec.decoder):
            split = np.zeros((L, hidden))
            split[:, :L] = np.eye(L)
            split[:, L : 2 * L] = -np.eye(L)
            merge = np.zeros((hidden, L))
            merge[:L] = np.eye(L)
            merge[L : 2 * L] = -np.eye(L)
            mid = np.zeros((hidden, hidden))
            mid[: 2 * L, : 2 * L] = np.eye(2 * L)
            mlp.layers[0].W.data[:] = split
            mlp.layers[1].W.data[:] = mid
            mlp.layers[2].W.data[:] = mid
            mlp.layers[3].W.data[:] = merge
            for layer in mlp.layers:
                layer.b.data[:] = 0.0
        codec.codebooks = codebooks.copy()
        return codec

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        c = self.config
        parts = [MAGIC, struct.pack("<5I", FORMAT_VERSION, c.action_dim, c.latent_dim, c.codebooks, c.codebook_size)]
        for _, p in self.named_params():
            parts.append(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(self.codebooks, dtype="<f4").tobytes())
        with open(path, "wb") as fh:
            fh.write(b"".join(parts))

    @classmethod
    def load(cls, path) -> "ResidualCodec":
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:8] != MAGIC:
            raise ValueError("not a codec file (bad magic)")
        version, d, latent, m, k = struct.unpack_from("<5I", blob, 8)
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported codec format version {version}")
        payload = np.frombuffer(blob, dtype="<f4", offset=8 + 20).astype(np.float64)
        hidden = _infer_hidden(payload.size, d, latent, m, k)
        cfg = CodecConfig(action_dim=d, latent_dim=latent, codebooks=m, codebook_size=k, hidden=hidden)
        codec = cls(cfg, np.random.default_rng(0))
        pos = 0
        for _, p in codec.named_params():
            n = p.data.size
            p.data[:] = payload[pos : pos + n].reshape(p.data.shape)
            pos += n
        codec.codebooks = payload[pos:].reshape(m, k, latent).copy()
        return codec


def _mlp_float_count(d_in: int, hidden: int, d_out: int) -> int:
    sizes = _mlp_sizes(d_in, hidden, d_out)
    return sum(sizes[i] * sizes[i + 1] + sizes[i + 1] for i in range(len(sizes) - 1))


def _infer_hidden(total_floats: int, d: int, latent: int, m: int, k: int) -> int:
    # The header stores D/L/M/K only; the hidden width is recovered from the
    # payload size, which is strictly increasing in it.
    weights = total_floats - m * k * latent
    for hidden in range(1, 8193):
        n = _mlp_float_count(d, hidden, latent) + _mlp_float_count(latent, hidden, d)
        if n == weights:
            return hidden
        if n > weights:
            break
    raise ValueError("corrupt codec file: no hidden width matches payload size")


# -- training -----------------------------------------------------------------


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread k centers over the points."""
    n = points.shape[0]
    if n == 0:
        raise ValueError("cannot seed codebook from zero points")
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[int(rng.integers(n))]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 1e-12:
            centers[i] = points[int(rng.integers(n))] + rng.normal(0, 1e-4, points.shape[1])
        else:
            pick = np.searchsorted(np.cumsum(d2 / total), rng.random())
            centers[i] = points[min(pick, n - 1)]
        d2 = np.minimum(d2, ((points - centers[i]) ** 2).sum(axis=1))
    return centers


@dataclass
class _EmaState:
    cluster_size: np.ndarray
    embed_sum: np.ndarray
    used: np.ndarray = field(default=None)


def train_codec(
    actions,
    config: CodecConfig,
    rng: np.random.Generator,
    shuffle_rng: np.random.Generator | None = None,
    log=None,
) -> ResidualCodec:
    """Fit encoder/decoder/codebooks on an offline set of actions."""
    actions = np.asarray(actions, dtype=np.float64)
    if actions.ndim != 2 or actions.shape[0] == 0:
        raise ValueError("empty dataset")
    if actions.shape[1] != config.action_dim:
        raise DimensionMismatch(f"expected {config.action_dim}-dim actions")
    shuffle_rng = shuffle_rng if shuffle_rng is not None else rng
    c = config
    codec = ResidualCodec(c, rng)
    n = actions.shape[0]

    # seed codebooks with k-means++ on (residual) encodings of an init slab
    init = actions[: max(min(n, 4 * c.codebook_size), min(n, c.batch_size))]
    z = codec.encode_latent(init)
    residual = z.copy()
    for m in range(c.codebooks):
        pts = residual if residual.shape[0] >= 2 else np.repeat(residual, 2, axis=0)
        codec.codebooks[m] = _kmeans_pp(pts, c.codebook_size, rng)
        d = ((residual[:, None, :] - codec.codebooks[m][None]) ** 2).sum(axis=-1)
        residual = residual - codec.codebooks[m][np.argmin(d, axis=1)]

    ema = [
        _EmaState(
            cluster_size=np.ones(c.codebook_size),
            embed_sum=codec.codebooks[m].copy(),
            used=np.zeros(c.codebook_size, dtype=bool),
        )
        for m in range(c.codebooks)
    ]
    params = collect_params(codec.named_params())
    opt = AdamW(params, lr=c.lr)
    eps = 1e-5

    steps_per_epoch = max(1, (n + c.batch_size - 1) // c.batch_size)
    last_batch_residuals = [None] * c.codebooks
    for epoch in range(c.epochs):
        order = shuffle_rng.permutation(n)
        for st in ema:
            st.used[:] = False
        epoch_loss = 0.0
        for b in range(steps_per_epoch):
            idx = order[b * c.batch_size : (b + 1) * c.batch_size]
            if idx.size == 0:
                continue
            batch = actions[idx]
            z_t = codec.encoder(Tensor(batch))
            z_np = z_t.data

            # greedy residual assignment + EMA stats per codebook
            total = np.zeros_like(z_np)
            residual = z_np.copy()
            for m in range(c.codebooks):
                book = codec.codebooks[m]
                d = ((residual[:, None, :] - book[None]) ** 2).sum(axis=-1)
                k = np.argmin(d, axis=1)
                st = ema[m]
                st.used[np.unique(k)] = True
                counts = np.bincount(k, minlength=c.codebook_size).astype(np.float64)
                sums = np.zeros_like(st.embed_sum)
                np.add.at(sums, k, residual)
                st.cluster_size = c.ema_decay * st.cluster_size + (1 - c.ema_decay) * counts
                st.embed_sum = c.ema_decay * st.embed_sum + (1 - c.ema_decay) * sums
                size_total = st.cluster_size.sum()
                smoothed = (
                    (st.cluster_size + eps) / (size_total + c.codebook_size * eps) * size_total
                )
                codec.codebooks[m] = st.embed_sum / smoothed[:, None]
                last_batch_residuals[m] = residual.copy()
                total += book[k]
                residual = z_np - total

            zq = straight_through(Tensor(total), z_t)
            recon = codec.decoder(zq)
            loss = mse(recon, batch) + c.commitment * mse(z_t, total)
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss.data)

        # dead-code reset: any code unused for a full epoch moves onto a
        # residual from the last batch, with its EMA stats reinitialized
        for m, st in enumerate(ema):
            dead = np.nonzero(~st.used)[0]
            if dead.size and last_batch_residuals[m] is not None:
                pool = last_batch_residuals[m]
                picks = rng.integers(0, pool.shape[0], size=dead.size)
                fresh = pool[picks] + rng.normal(0, 1e-4, (dead.size, c.latent_dim))
                codec.codebooks[m][dead] = fresh
                st.embed_sum[dead] = fresh
                st.cluster_size[dead] = 1.0
        if log is not None:
            log.append((epoch, epoch_loss / steps_per_epoch))
    return codec


def reconstruction_mse(codec_or_quantizer, actions, clamp_to=None) -> float:
    """Mean over actions of squared round-trip L2 error divided by D."""
    actions = np.asarray(actions, dtype=np.float64)
    if actions.size == 0:
        raise ValueError("empty dataset")
    if hasattr(codec_or_quantizer, "round_trip"):
        recon = codec_or_quantizer.round_trip(actions, clamp_to=clamp_to)
    else:
        q = codec_or_quantizer
        recon = q.detokenize(q.tokenize(actions))
    err = recon - actions
    d = actions.shape[-1]
    return float(np.mean(np.sum(err * err, axis=-1) / d))
