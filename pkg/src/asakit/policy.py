"""Causal-transformer policy with a pluggable action space adapter.

The context is one learned instruction embedding followed, per timestep, by
a linear projection of the observation vector into `obs_slots` embedding
positions and, for token-emitting adapters, the step's action-token
embeddings. The first hidden state of a step (at its last observation slot)
drives the first action token; each emitted token is embedded and fed back
autoregressively until the adapter's m tokens are out.
"""

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    Tensor,
    concat,
    cross_entropy,
    gather,
    log_softmax,
    mse,
    no_grad,
    softmax,
    take_rows,
)
from .nn import MLP, Embedding, LayerNorm, Linear, collect_params
from .snapshot import read_params, write_params
from .transformer import CausalTransformer, TrunkConfig

__all__ = ["PolicyConfig", "Policy", "ContextOverflow", "EncodeFailure", "read_checkpoint_header"]

CKPT_MAGIC = b"ASACKPT1"


class ContextOverflow(ValueError):
    pass


class EncodeFailure(ValueError):
    pass


@dataclass
class PolicyConfig:
    obs_dim: int
    n_instructions: int = 1
    width: int = 128
    layers: int = 4
    heads: int = 4
    context: int = 4  # H timesteps of history
    obs_slots: int = 1
    proprio_dim: int = 0  # regression head extra input; 0 disables
    pred_hidden: int = 128  # hidden width of the categorical head MLP

    def fields(self) -> dict:
        return {
            "obs_dim": self.obs_dim,
            "n_instructions": self.n_instructions,
            "width": self.width,
            "layers": self.layers,
            "heads": self.heads,
            "context": self.context,
            "obs_slots": self.obs_slots,
            "proprio_dim": self.proprio_dim,
            "pred_hidden": self.pred_hidden,
        }


@dataclass
class ActResult:
    tokens: np.ndarray | None  # [B, m] emitted tokens (None for regression)
    actions: list  # decoded environment actions, one per row
    values: np.ndarray  # [B] value estimates at the first hidden state
    step_probs: list = field(default_factory=list)  # per emitted slot, [B, vocab]


class Policy:
    def __init__(self, config: PolicyConfig, adapter, rng: np.random.Generator):
        self.config = config
        self.adapter = adapter
        c = config
        m_slots = adapter.tokens_per_action if adapter.feeds_tokens else 0
        self.step_span = c.obs_slots + m_slots
        self.max_len = 1 + c.context * self.step_span
        self.trunk = CausalTransformer(TrunkConfig(c.width, c.layers, c.heads), self.max_len, rng)
        self.pos = Embedding(self.max_len, c.width, rng)
        self.instr = Embedding(c.n_instructions, c.width, rng)
        self.obs_proj = Linear(c.obs_dim, c.obs_slots * c.width, rng)
        self.token_emb = (
            Embedding(adapter.vocab_size, c.width, rng) if adapter.feeds_tokens else None
        )
        if adapter.head_style == "token":
            self.head = Linear(c.width, adapter.vocab_size, rng, scale=0.02)
        elif adapter.head_style == "categorical":
            self.head = MLP([c.width, c.pred_hidden, adapter.vocab_size], rng)
        elif adapter.head_style == "regression":
            self.head = Linear(c.width + c.proprio_dim, adapter.space.dims, rng, scale=0.02)
        else:
            raise ValueError(f"unknown head style {adapter.head_style!r}")
        self.value_head = Linear(c.width, 1, rng, scale=0.02)

    # -- parameters -----------------------------------------------------------

    def named_params(self):
        out = self.trunk.named_params("trunk")
        out += self.pos.named_params("pos")
        out += self.instr.named_params("instr")
        out += self.obs_proj.named_params("obs_proj")
        if self.token_emb is not None:
            out += self.token_emb.named_params("token_emb")
        out += self.head.named_params("head")
        out += self.value_head.named_params("value_head")
        return out

    def params(self):
        return collect_params(self.named_params())

    # -- context assembly -------------------------------------------------------

    def _check_steps(self, t: int):
        if t > self.config.context:
            raise ContextOverflow(f"{t} steps exceed the context of {self.config.context}")

    def _embed(self, instr_ids, obs, fed_tokens=None, partial_tokens=None) -> Tensor:
        """Sequence embeddings: instruction, then per step obs slots + tokens.

        obs: [B, T, obs_dim]. fed_tokens: [B, T', m] token ids for the first
        T' steps (T' = T for teacher forcing, T-1 during decoding).
        partial_tokens: [B, j] tokens already emitted in the current step.
        """
        B, T, _ = obs.shape
        self._check_steps(T)
        c = self.config
        pieces = [self.instr(np.asarray(instr_ids)).reshape(B, 1, c.width)]
        obs_e = self.obs_proj(Tensor(obs).reshape(B * T, c.obs_dim)).reshape(
            B, T, c.obs_slots, c.width
        )
        tok_e = None
        if fed_tokens is not None and fed_tokens.shape[1] > 0:
            tok_e = self.token_emb(fed_tokens)  # [B, T', m, W]
        for t in range(T):
            pieces.append(obs_e[:, t])
            if tok_e is not None and t < fed_tokens.shape[1]:
                pieces.append(tok_e[:, t])
        if partial_tokens is not None and partial_tokens.shape[1] > 0:
            pieces.append(self.token_emb(partial_tokens))
        x = concat(pieces, axis=1)
        L = x.shape[1]
        return x + self.pos(np.arange(L))

    def _readout_index(self, t: int, j: int) -> int:
        """Flat position whose hidden state predicts token j of step t."""
        return 1 + t * self.step_span + self.config.obs_slots - 1 + j

    # -- losses -----------------------------------------------------------------

    def teacher_forced_loss(self, instr_ids, obs, targets, proprio=None):
        """Supervised loss on expert steps.

        Tokenized/categorical adapters: `targets` is [B, T, m] int tokens with
        -1 marking positions past an action's end (excluded from the loss but
        fed as end-token padding). Regression: `targets` is [B, T, D] actions.
        """
        if self.adapter.head_style == "regression":
            return self._regression_loss(instr_ids, obs, targets, proprio)
        B, T, m = targets.shape
        fed = targets.copy()
        pad_id = getattr(self.adapter, "end_id", 0)
        fed[fed < 0] = pad_id
        x = self._embed(instr_ids, obs, fed_tokens=fed)
        h = self.trunk(x)
        L = h.shape[1]
        flat = h.reshape(B * L, self.config.width)
        idx = np.empty((B, T, m), dtype=np.int64)
        for t in range(T):
            for j in range(m):
                idx[:, t, j] = np.arange(B) * L + self._readout_index(t, j)
        sel = take_rows(flat, idx.reshape(-1))
        logits = self.head(sel)
        tgt = targets.reshape(-1)
        keep = tgt >= 0
        ce = cross_entropy(logits, np.where(keep, tgt, 0))
        ce = ce * keep.astype(np.float64)
        # mean over steps of the summed per-token cross-entropy
        return ce.sum() * (1.0 / (B * T))

    def _regression_loss(self, instr_ids, obs, actions, proprio):
        B, T, _ = obs.shape
        x = self._embed(instr_ids, obs)
        h = self.trunk(x)
        L = h.shape[1]
        flat = h.reshape(B * L, self.config.width)
        idx = np.empty((B, T), dtype=np.int64)
        for t in range(T):
            idx[:, t] = np.arange(B) * L + self._readout_index(t, 0)
        sel = take_rows(flat, idx.reshape(-1))
        if self.config.proprio_dim:
            if proprio is None:
                raise EncodeFailure("regression head configured with proprioception input")
            sel = concat([sel, Tensor(proprio.reshape(B * T, -1))], axis=1)
        pred = self.head(sel)
        return mse(pred, actions.reshape(B * T, -1))

    # -- decoding ------------------------------------------------------------------

    def act_batch(
        self,
        instr_ids,
        obs,
        prev_tokens=None,
        mode: str = "greedy",
        temperature: float = 1.0,
        rng: np.random.Generator | None = None,
        use_filter: bool = False,
        proprio=None,
        want_probs: bool = False,
    ) -> ActResult:
        """Decode one action per row; all rows share the same steps-so-far T."""
        obs = np.asarray(obs, dtype=np.float64)
        B, T, _ = obs.shape
        with no_grad():
            if self.adapter.head_style == "regression":
                x = self._embed(instr_ids, obs)
                h = self.trunk(x)
                ro = self._readout_index(T - 1, 0)
                sel = h[:, ro]
                val = self.value_head(sel).data[:, 0]
                if self.config.proprio_dim:
                    sel = concat([sel, Tensor(np.asarray(proprio, dtype=np.float64))], axis=1)
                raw = self.head(sel).data
                actions = [self.adapter.decode(raw[i]) for i in range(B)]
                return ActResult(tokens=None, actions=actions, values=val)

            m = self.adapter.tokens_per_action
            trie = self.adapter.trie() if use_filter else None
            end_id = getattr(self.adapter, "end_id", None)
            if prev_tokens is None:
                prev_tokens = np.zeros((B, 0, m), dtype=np.int64)
            emitted = np.zeros((B, m), dtype=np.int64)
            done = np.zeros(B, dtype=bool)
            values = None
            step_probs = []
            for j in range(m):
                x = self._embed(
                    instr_ids,
                    obs,
                    fed_tokens=prev_tokens,
                    partial_tokens=emitted[:, :j],
                )
                h = self.trunk(x)
                last = h[:, x.shape[1] - 1]
                if j == 0:
                    values = self.value_head(last).data[:, 0]
                logits = self.head(last).data.copy()
                if trie is not None:
                    for i in range(B):
                        if done[i]:
                            logits[i, :] = -np.inf
                            logits[i, end_id] = 0.0
                        else:
                            mask = trie.mask(tuple(emitted[i, :j]))
                            logits[i, ~mask] = -np.inf
                if mode == "greedy":
                    choice = np.argmax(logits, axis=1)
                else:
                    scaled = logits / max(temperature, 1e-8)
                    scaled -= scaled.max(axis=1, keepdims=True)
                    p = np.exp(scaled)
                    p /= p.sum(axis=1, keepdims=True)
                    choice = np.array([rng.choice(p.shape[1], p=p[i]) for i in range(B)])
                if want_probs:
                    sm = logits - logits.max(axis=1, keepdims=True)
                    pm = np.exp(sm)
                    pm /= pm.sum(axis=1, keepdims=True)
                    step_probs.append(pm)
                if end_id is not None:
                    choice = np.where(done, end_id, choice)
                emitted[:, j] = choice
                if end_id is not None:
                    done |= choice == end_id
            actions = [self.adapter.decode(emitted[i]) for i in range(B)]
            return ActResult(tokens=emitted, actions=actions, values=values, step_probs=step_probs)

    def logprob_entropy_value(self, instr_ids, obs, tokens, use_filter: bool = False):
        """Differentiable log-prob / entropy / value for already-sampled tokens.

        tokens: [B, T, m] with -1 on positions after an action's end token.
        Returns per-step Tensors of shape [B, T] (values squeezed per step).
        """
        B, T, m = tokens.shape
        fed = tokens.copy()
        pad_id = getattr(self.adapter, "end_id", 0)
        fed[fed < 0] = pad_id
        x = self._embed(instr_ids, obs, fed_tokens=fed)
        h = self.trunk(x)
        L = h.shape[1]
        flat = h.reshape(B * L, self.config.width)
        idx = np.empty((B, T, m), dtype=np.int64)
        for t in range(T):
            for j in range(m):
                idx[:, t, j] = np.arange(B) * L + self._readout_index(t, j)
        sel = take_rows(flat, idx.reshape(-1))
        logits = self.head(sel)
        if use_filter and self.adapter.trie() is not None:
            trie = self.adapter.trie()
            # large finite bias instead of -inf keeps p*log(p) at exactly 0
            bias = np.zeros((B, T, m, self.adapter.vocab_size))
            for b in range(B):
                for t in range(T):
                    for j in range(m):
                        if tokens[b, t, j] < 0:
                            continue
                        mask = trie.mask(tuple(tokens[b, t, :j]))
                        bias[b, t, j, ~mask] = -1e30
            logits = logits + bias.reshape(B * T * m, -1)
        lsm = log_softmax(logits)
        tgt = tokens.reshape(-1)
        keep = (tgt >= 0).astype(np.float64)
        logp = gather(lsm, np.where(tgt >= 0, tgt, 0)) * keep
        probs = softmax(logits)
        ent = -((probs * lsm).sum(axis=-1)) * keep
        logp_steps = logp.reshape(B, T, m).sum(axis=2)
        ent_steps = ent.reshape(B, T, m).sum(axis=2)
        vidx = np.empty((B, T), dtype=np.int64)
        for t in range(T):
            vidx[:, t] = np.arange(B) * L + self._readout_index(t, 0)
        vsel = take_rows(flat, vidx.reshape(-1))
        values = self.value_head(vsel).reshape(B, T)
        return logp_steps, ent_steps, values

    # -- persistence -----------------------------------------------------------------

    def save(self, path, artifact: str = "", artifact_sha: str = "") -> None:
        header = {"asa.kind": self.adapter.kind}
        header["asa.vocab_size"] = self.adapter.vocab_size
        header["asa.tokens_per_action"] = self.adapter.tokens_per_action
        header["asa.artifact"] = artifact
        header["asa.artifact_sha256"] = artifact_sha
        for k, v in self.config.fields().items():
            header[f"policy.{k}"] = v
        text = "\n".join(f"{k} = {v}" for k, v in header.items()) + "\n"
        raw = text.encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(CKPT_MAGIC)
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            write_params(fh, self.named_params())

    def load_weights(self, path, expect_artifact_sha: str | None = None) -> dict:
        header, params = _read_checkpoint(path)
        if header["asa.kind"] != self.adapter.kind:
            raise ValueError(
                f"checkpoint is bound to {header['asa.kind']}, not {self.adapter.kind}"
            )
        if int(header["asa.vocab_size"]) != self.adapter.vocab_size:
            raise ValueError("checkpoint vocabulary size does not match the adapter")
        stored = header.get("asa.artifact_sha256", "")
        if expect_artifact_sha is not None and stored and stored != expect_artifact_sha:
            raise ValueError("adapter artifact hash mismatch")
        for name, tensor in self.named_params():
            if name not in params:
                raise ValueError(f"checkpoint missing parameter {name}")
            if params[name].shape != tensor.data.shape:
                raise ValueError(f"shape mismatch for {name}")
            tensor.data[:] = params[name]
        return header


def _read_checkpoint(path):
    with open(path, "rb") as fh:
        if fh.read(8) != CKPT_MAGIC:
            raise ValueError("not a policy checkpoint (bad magic)")
        (hlen,) = struct.unpack("<I", fh.read(4))
        text = fh.read(hlen).decode("utf-8")
        header = {}
        for line in text.splitlines():
            k, _, v = line.partition(" = ")
            header[k] = v
        params = read_params(fh)
    return header, params


def read_checkpoint_header(path) -> dict:
    header, _ = _read_checkpoint(path)
    return header


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        digest.update(fh.read())
    return digest.hexdigest()
