"""Pooling heads over the per-layer [CLS] trace, plus the classifier.

Three interchangeable heads map the ordered trace {h^1 ... h^L} of
classification-token states to one pooled vector o:

  * ``last``      — the canonical choice, o = h^L;
  * ``lstm``      — a unidirectional LSTM run over the trace in layer
                    order (abstract-to-specific), o = last hidden state;
  * ``attention`` — dot-product attention with a learned query q and
                    projection W_h: o = W_h^T softmax(q h^T) h.

The attention scores are plain dot products, with no 1/sqrt(H) scaling.
A fully-connected softmax layer then produces the label distribution.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .encoder import CLSTrace, init_normal

HEAD_KINDS = ("last", "lstm", "attention")

_GATES = ("i", "f", "g", "o")


class LSTMPoolHead:
    """Single-layer LSTM over the trace; input and hidden size both H."""

    def __init__(self, H, rng):
        self.H = H
        self.params = {}
        self.decay = set()
        for gate in _GATES:
            self.params[f"lstm/W_{gate}"] = Tensor(init_normal(rng, (H, H)), requires_grad=True)
            self.params[f"lstm/U_{gate}"] = Tensor(init_normal(rng, (H, H)), requires_grad=True)
            self.decay.update({f"lstm/W_{gate}", f"lstm/U_{gate}"})
            # Forget gate starts open so early gradients reach the whole trace.
            bias = np.ones(H) if gate == "f" else np.zeros(H)
            self.params[f"lstm/b_{gate}"] = Tensor(bias, requires_grad=True)


class AttentionPoolHead:
    """Learned query q and square projection W_h; no bias terms."""

    def __init__(self, H, rng):
        self.H = H
        self.params = {
            "attnpool/W_h": Tensor(init_normal(rng, (H, H)), requires_grad=True),
            "attnpool/q": Tensor(init_normal(rng, (H,)), requires_grad=True),
        }
        self.decay = {"attnpool/W_h", "attnpool/q"}


class ClassifierHead:
    """Affine map + softmax over C classes."""

    def __init__(self, H, C, rng):
        self.H, self.C = H, C
        self.params = {
            "classifier/W_o": Tensor(init_normal(rng, (H, C)), requires_grad=True),
            "classifier/b_o": Tensor(np.zeros(C), requires_grad=True),
        }
        self.decay = {"classifier/W_o"}


def _as_row_tensors(trace):
    """Normalize a trace to a list of 2-D (B×H) tensors; remember if 1-D."""
    vectors = trace.vectors if isinstance(trace, CLSTrace) else list(trace)
    if not vectors:
        raise ValueError("pooling requires a nonempty trace")
    if vectors[0].data.ndim == 1:
        return [T.reshape(v, (1, v.shape[0])) for v in vectors], True
    return vectors, False


def _maybe_squeeze(o, was_1d):
    return T.reshape(o, (o.shape[1],)) if was_1d else o


def last_cls_pool(trace):
    """Canonical pooling: the final layer's [CLS] state, unchanged."""
    vectors = trace.vectors if isinstance(trace, CLSTrace) else list(trace)
    if not vectors:
        raise ValueError("pooling requires a nonempty trace")
    return vectors[-1]


def lstm_pool(trace, head: LSTMPoolHead):
    """Run the LSTM over the trace in layer order; return the last hidden state."""
    rows, was_1d = _as_row_tensors(trace)
    p = head.params
    B = rows[0].shape[0]
    h = Tensor(np.zeros((B, head.H)))
    c = Tensor(np.zeros((B, head.H)))
    for x in rows:
        gi = T.sigmoid(T.add(T.add(T.matmul(x, p["lstm/W_i"]), T.matmul(h, p["lstm/U_i"])), p["lstm/b_i"]))
        gf = T.sigmoid(T.add(T.add(T.matmul(x, p["lstm/W_f"]), T.matmul(h, p["lstm/U_f"])), p["lstm/b_f"]))
        gg = T.tanh(T.add(T.add(T.matmul(x, p["lstm/W_g"]), T.matmul(h, p["lstm/U_g"])), p["lstm/b_g"]))
        go = T.sigmoid(T.add(T.add(T.matmul(x, p["lstm/W_o"]), T.matmul(h, p["lstm/U_o"])), p["lstm/b_o"]))
        c = T.add(T.mul(gf, c), T.mul(gi, gg))
        h = T.mul(go, T.tanh(c))
    return _maybe_squeeze(h, was_1d)


def attention_pool(trace, head: AttentionPoolHead, return_weights=False):
    """Softmax-weighted combination of the trace, projected by W_h."""
    rows, was_1d = _as_row_tensors(trace)
    p = head.params
    q_col = T.reshape(p["attnpool/q"], (head.H, 1))
    scores = T.concat_cols([T.matmul(r, q_col) for r in rows])  # B×L
    weights = T.softmax(scores, axis=1)
    combined = None
    for i, r in enumerate(rows):
        term = T.scale_rows(r, T.slice_cols(weights, i, i + 1))
        combined = term if combined is None else T.add(combined, term)
    o = T.matmul(combined, p["attnpool/W_h"])
    o = _maybe_squeeze(o, was_1d)
    if return_weights:
        return o, weights
    return o


def classify(o, head: ClassifierHead, p_drop=0.0, rng=None, training=False):
    """Label distribution y = softmax(W_o^T dropout(o) + b_o)."""
    was_1d = o.data.ndim == 1
    if was_1d:
        o = T.reshape(o, (1, o.shape[0]))
    o = T.dropout(o, p_drop, rng, training)
    y = T.softmax(T.add(T.matmul(o, head.params["classifier/W_o"]),
                        head.params["classifier/b_o"]), axis=1)
    return _maybe_squeeze(y, was_1d)
