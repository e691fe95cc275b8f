"""A desk-scale BERT-shaped transformer encoder.

The encoder is a stack of post-layer-norm transformer blocks over
token + segment + learned-position embeddings. Beyond the usual final
hidden states it exposes the hidden state of the leading classification
token ([CLS]) from *every* layer, ordered from the embedding-adjacent
layer up to the last one; downstream pooling heads consume that trace.

For speed, a batch of sequences is packed into one long (B*S)×H matrix
and attention is restricted to per-example blocks by an additive mask,
so all tensor ops stay two-dimensional. Per-example results are
identical to running examples one at a time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

# Weight init scale. 0.02 (the usual BERT value) assumes pre-trained scale
# and stalls a from-scratch desk model: attention logits start so close to
# uniform that no head ever specializes within the training budget.
INIT_STD = 0.15
LN_EPS = 1e-12
MASK_BIAS = -1e9


@dataclass
class EncoderConfig:
    """Architecture hyperparameters. Defaults train on a CPU in minutes."""

    L: int = 4          # layer count
    H: int = 32         # hidden size
    A: int = 4          # attention heads
    F: int = 64         # feed-forward inner size
    V: int = 100        # vocabulary size
    S_max: int = 64     # maximum packed sequence length
    p_drop: float = 0.1

    def __post_init__(self):
        if self.L < 1:
            raise ValueError(f"layer count must be >= 1, got {self.L}")
        if self.H % self.A != 0:
            raise ValueError(f"hidden size {self.H} not divisible by head count {self.A}")
        if not 0.0 <= self.p_drop < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.p_drop}")


@dataclass
class PackedInput:
    """One tokenized sequence in the [CLS] a [SEP] b [SEP] convention."""

    token_ids: np.ndarray
    segment_ids: np.ndarray
    mask: np.ndarray


@dataclass
class CLSTrace:
    """Per-layer [CLS] hidden states, embedding-adjacent layer first."""

    vectors: list = field(default_factory=list)

    def __len__(self):
        return len(self.vectors)

    def __getitem__(self, i):
        return self.vectors[i]


def init_normal(rng, shape, std=None):
    if std is None:
        std = INIT_STD
    return rng.normal(0.0, std, size=shape)


class MiniEncoder:
    """Multi-layer bidirectional transformer encoder with a CLS trace."""

    def __init__(self, config: EncoderConfig, rng):
        self.config = config
        self.params = {}
        self.decay = set()
        c = config

        self._weight("embed/token", init_normal(rng, (c.V, c.H)), decay=False)
        self._weight("embed/segment", init_normal(rng, (2, c.H)), decay=False)
        self._weight("embed/position", init_normal(rng, (c.S_max, c.H)), decay=False)
        self._weight("embed/ln_g", np.ones(c.H), decay=False)
        self._weight("embed/ln_b", np.zeros(c.H), decay=False)

        for i in range(c.L):
            p = f"layer{i}"
            for w in ("Wq", "Wk", "Wv", "Wo"):
                self._weight(f"{p}/attn/{w}", init_normal(rng, (c.H, c.H)), decay=True)
            for b in ("bq", "bk", "bv", "bo"):
                self._weight(f"{p}/attn/{b}", np.zeros(c.H), decay=False)
            self._weight(f"{p}/ln1_g", np.ones(c.H), decay=False)
            self._weight(f"{p}/ln1_b", np.zeros(c.H), decay=False)
            self._weight(f"{p}/ffn/W1", init_normal(rng, (c.H, c.F)), decay=True)
            self._weight(f"{p}/ffn/b1", np.zeros(c.F), decay=False)
            self._weight(f"{p}/ffn/W2", init_normal(rng, (c.F, c.H)), decay=True)
            self._weight(f"{p}/ffn/b2", np.zeros(c.H), decay=False)
            self._weight(f"{p}/ln2_g", np.ones(c.H), decay=False)
            self._weight(f"{p}/ln2_b", np.zeros(c.H), decay=False)

    def _weight(self, name, array, decay):
        self.params[name] = Tensor(array, requires_grad=True)
        if decay:
            self.decay.add(name)

    # -- forward ------------------------------------------------------------

    def embed_batch(self, token_ids, segment_ids, training=False, rng=None):
        """Token + segment + learned-position embeddings, layer-norm, dropout.

        Returns a (B*S)×H tensor, rows in example-major order.
        """
        c = self.config
        token_ids = np.atleast_2d(np.asarray(token_ids))
        segment_ids = np.atleast_2d(np.asarray(segment_ids))
        B, S = token_ids.shape
        if S > c.S_max:
            raise ValueError(f"sequence length {S} exceeds S_max={c.S_max}")
        p = self.params
        x = T.add(
            T.add(T.embedding(p["embed/token"], token_ids.reshape(-1)),
                  T.embedding(p["embed/segment"], segment_ids.reshape(-1))),
            T.gather_rows(p["embed/position"], np.tile(np.arange(S), B)),
        )
        x = T.layer_norm(x, p["embed/ln_g"], p["embed/ln_b"], eps=LN_EPS)
        return T.dropout(x, c.p_drop, rng, training)

    def embed(self, packed: PackedInput, training=False, rng=None):
        """Embed one sequence; returns an S×H tensor."""
        return self.embed_batch(packed.token_ids[None, :], packed.segment_ids[None, :],
                                training=training, rng=rng)

    def forward_batch(self, token_ids, segment_ids, mask, training=False, rng=None,
                      attn_out=None):
        """Encode a batch; returns ((B*S)×H final hidden states, trace of B×H).

        ``token_ids``, ``segment_ids`` and ``mask`` are integer arrays of
        shape (B, S); all sequences in a batch share the padded length S.
        If ``attn_out`` is a list, per-layer lists of per-head attention
        weight arrays are appended to it.
        """
        c = self.config
        token_ids = np.atleast_2d(np.asarray(token_ids))
        segment_ids = np.atleast_2d(np.asarray(segment_ids))
        mask = np.atleast_2d(np.asarray(mask))
        B, S = token_ids.shape
        x = self.embed_batch(token_ids, segment_ids, training=training, rng=rng)

        bias = self._attention_bias(mask, S)
        trace = []
        cls_rows = np.arange(B) * S
        for i in range(c.L):
            x = self._block(x, bias, i, training, rng, attn_out=attn_out)
            trace.append(T.gather_rows(x, cls_rows))
        return x, CLSTrace(trace)

    def encode(self, packed: PackedInput, training=False, rng=None):
        """Encode one sequence; returns (S×H final states, CLSTrace of H-vectors)."""
        final, trace = self.forward_batch(
            packed.token_ids[None, :], packed.segment_ids[None, :],
            packed.mask[None, :], training=training, rng=rng)
        vectors = [T.reshape(v, (self.config.H,)) for v in trace.vectors]
        return final, CLSTrace(vectors)

    @staticmethod
    def _attention_bias(mask, S):
        """Block-diagonal additive bias: masked or cross-example keys get -1e9."""
        B = mask.shape[0]
        bias = np.full((B * S, B * S), MASK_BIAS)
        for b in range(B):
            blk = slice(b * S, (b + 1) * S)
            bias[blk, blk] = np.where(mask[b] == 1, 0.0, MASK_BIAS)
        return bias

    def _block(self, x, bias, i, training, rng, attn_out=None):
        c = self.config
        p = self.params
        pre = f"layer{i}"

        q = T.add(T.matmul(x, p[f"{pre}/attn/Wq"]), p[f"{pre}/attn/bq"])
        k = T.add(T.matmul(x, p[f"{pre}/attn/Wk"]), p[f"{pre}/attn/bk"])
        v = T.add(T.matmul(x, p[f"{pre}/attn/Wv"]), p[f"{pre}/attn/bv"])

        dh = c.H // c.A
        heads = []
        layer_attn = []
        for a in range(c.A):
            qh = T.slice_cols(q, a * dh, (a + 1) * dh)
            kh = T.slice_cols(k, a * dh, (a + 1) * dh)
            vh = T.slice_cols(v, a * dh, (a + 1) * dh)
            scores = T.add(T.scale(T.matmul(qh, T.transpose(kh)), 1.0 / math.sqrt(dh)),
                           Tensor(bias))
            attn = T.softmax(scores, axis=1)
            layer_attn.append(attn.data)
            heads.append(T.matmul(attn, vh))
        if attn_out is not None:
            attn_out.append(layer_attn)
        ctx = T.concat_cols(heads)
        out = T.add(T.matmul(ctx, p[f"{pre}/attn/Wo"]), p[f"{pre}/attn/bo"])
        out = T.dropout(out, c.p_drop, rng, training)
        x = T.layer_norm(T.add(x, out), p[f"{pre}/ln1_g"], p[f"{pre}/ln1_b"], eps=LN_EPS)

        h = T.gelu(T.add(T.matmul(x, p[f"{pre}/ffn/W1"]), p[f"{pre}/ffn/b1"]))
        h = T.add(T.matmul(h, p[f"{pre}/ffn/W2"]), p[f"{pre}/ffn/b2"])
        h = T.dropout(h, c.p_drop, rng, training)
        return T.layer_norm(T.add(x, h), p[f"{pre}/ln2_g"], p[f"{pre}/ln2_b"], eps=LN_EPS)
