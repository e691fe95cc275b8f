"""Encoder + pooling head + classifier bundled into one trainable model."""

from __future__ import annotations

import numpy as np

from . import pooling
from .encoder import EncoderConfig, MiniEncoder
from .pooling import (AttentionPoolHead, ClassifierHead, HEAD_KINDS, LSTMPoolHead,
                      attention_pool, classify, last_cls_pool, lstm_pool)
from .checkpoint import load_checkpoint, save_checkpoint


class PooledClassifier:
    """A classifier over the per-layer [CLS] trace of a MiniEncoder."""

    def __init__(self, config: EncoderConfig, pooling_kind: str, n_classes: int, rng):
        if pooling_kind not in HEAD_KINDS:
            raise ValueError(f"unknown pooling kind {pooling_kind!r}, expected one of {HEAD_KINDS}")
        self.config = config
        self.pooling_kind = pooling_kind
        self.n_classes = n_classes
        self.encoder = MiniEncoder(config, rng)
        if pooling_kind == "lstm":
            self.pool_head = LSTMPoolHead(config.H, rng)
        elif pooling_kind == "attention":
            self.pool_head = AttentionPoolHead(config.H, rng)
        else:
            self.pool_head = None
        self.classifier = ClassifierHead(config.H, n_classes, rng)

    # -- parameters -----------------------------------------------------------

    def parameters(self):
        params = dict(self.encoder.params)
        if self.pool_head is not None:
            params.update(self.pool_head.params)
        params.update(self.classifier.params)
        return params

    def decay_names(self):
        names = set(self.encoder.decay)
        if self.pool_head is not None:
            names |= self.pool_head.decay
        names |= self.classifier.decay
        return names

    # -- forward ----------------------------------------------------------------

    def pool(self, trace):
        if self.pooling_kind == "lstm":
            return lstm_pool(trace, self.pool_head)
        if self.pooling_kind == "attention":
            return attention_pool(trace, self.pool_head)
        return last_cls_pool(trace)

    def forward_batch(self, token_ids, segment_ids, mask, training=False, rng=None):
        """Class probabilities, shape B×C."""
        _, trace = self.encoder.forward_batch(token_ids, segment_ids, mask,
                                              training=training, rng=rng)
        o = self.pool(trace)
        return classify(o, self.classifier, p_drop=self.config.p_drop,
                        rng=rng, training=training)

    def trace_batch(self, token_ids, segment_ids, mask):
        """Eval-mode CLS trace for a batch, as plain arrays (one B×H per layer)."""
        _, trace = self.encoder.forward_batch(token_ids, segment_ids, mask)
        return [v.data for v in trace.vectors]

    def predict(self, token_ids, segment_ids, mask):
        """Eval-mode hard labels; argmax ties break toward the lowest class."""
        probs = self.forward_batch(token_ids, segment_ids, mask)
        return np.argmax(probs.data, axis=1)

    # -- persistence -----------------------------------------------------------

    def save(self, path, extra_meta=None):
        meta = {
            "encoder": {k: getattr(self.config, k)
                        for k in ("L", "H", "A", "F", "V", "S_max", "p_drop")},
            "pooling": self.pooling_kind,
            "n_classes": self.n_classes,
        }
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(path, meta, {k: v.data for k, v in self.parameters().items()})

    @classmethod
    def load(cls, path):
        meta, blobs = load_checkpoint(path)
        config = EncoderConfig(**meta["encoder"])
        model = cls(config, meta["pooling"], meta["n_classes"],
                    np.random.default_rng(0))
        params = model.parameters()
        missing = set(params) - set(blobs)
        extra = set(blobs) - set(params)
        if missing or extra:
            raise ValueError(f"checkpoint parameter mismatch: missing={sorted(missing)}, "
                             f"unexpected={sorted(extra)}")
        for name, arr in blobs.items():
            if params[name].data.shape != arr.shape:
                raise ValueError(f"checkpoint shape mismatch for {name}: "
                                 f"{arr.shape} vs {params[name].data.shape}")
            params[name].data = arr.astype(np.float64)
        return model, meta
