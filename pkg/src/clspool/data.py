"""Dataset ingestion, tokenization, pair packing, and synthetic task generation.

Tokenization is lowercased whitespace splitting (subword schemes are out of
scope). Sentence pairs are packed in the BERT convention:

    [CLS] a_1 ... a_n [SEP] b_1 ... b_m [SEP] [PAD] ...

with segment 0 over [CLS], a, and the first [SEP]; segment 1 over b and the
second [SEP]; mask 0 on padding.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import rng as rng_mod
from .encoder import PackedInput

PAD_ID, UNK_ID, CLS_ID, SEP_ID = 0, 1, 2, 3
RESERVED = {"[PAD]": PAD_ID, "[UNK]": UNK_ID, "[CLS]": CLS_ID, "[SEP]": SEP_ID}

ABSA_LABELS = {"negative": 0, "neutral": 1, "positive": 2}
NLI_LABELS = {"contradiction": 0, "neutral": 1, "entailment": 2}
SCHEMAS = {
    "absa": (("text", "aspect"), ABSA_LABELS),
    "nli": (("premise", "hypothesis"), NLI_LABELS),
}


class DataError(ValueError):
    """Malformed input data (bad label, missing field, broken JSON line)."""


@dataclass
class PairExample:
    text_a: str
    text_b: str
    label: int


def tokenize(text):
    return text.lower().split()


class Vocab:
    """Dense token→id map with fixed reserved ids."""

    def __init__(self, tokens):
        self.token_to_id = dict(RESERVED)
        for tok in tokens:
            if tok not in self.token_to_id:
                self.token_to_id[tok] = len(self.token_to_id)

    def __len__(self):
        return len(self.token_to_id)

    def id(self, token):
        return self.token_to_id.get(token, UNK_ID)

    def encode(self, text):
        return [self.id(t) for t in tokenize(text)]

    def tokens(self):
        """Non-reserved tokens in id order (for serialization)."""
        inv = sorted(self.token_to_id.items(), key=lambda kv: kv[1])
        return [tok for tok, i in inv if i >= len(RESERVED)]


def build_vocab(corpus, min_count=1):
    """Vocabulary over lowercased whitespace tokens with count >= min_count.

    Order is deterministic: count descending, then lexicographic.
    """
    counts = Counter()
    for text in corpus:
        counts.update(tokenize(text))
    if not counts:
        raise DataError("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in counts.items() if c >= min_count),
                  key=lambda t: (-counts[t], t))
    return Vocab(kept)


def vocab_for_examples(examples, min_count=1):
    return build_vocab([ex.text_a + " " + ex.text_b for ex in examples], min_count)


def pack_pair(ex: PairExample, vocab: Vocab, s_max):
    """Pack a sentence pair, truncating the longer side token-by-token."""
    if s_max < 4:
        raise ValueError(f"s_max={s_max} cannot hold [CLS] tok [SEP] [SEP]")
    a = vocab.encode(ex.text_a)
    b = vocab.encode(ex.text_b)
    while len(a) + len(b) + 3 > s_max:
        if len(a) >= len(b) and a:
            a.pop()
        else:
            b.pop()
    ids = [CLS_ID] + a + [SEP_ID] + b + [SEP_ID]
    segments = [0] * (len(a) + 2) + [1] * (len(b) + 1)
    mask = [1] * len(ids)
    pad = s_max - len(ids)
    ids += [PAD_ID] * pad
    segments += [0] * pad
    mask += [0] * pad
    return PackedInput(np.array(ids), np.array(segments), np.array(mask))


def pack_dataset(examples, vocab, s_max, trim=True):
    """Pack a list of examples into (token_ids, segment_ids, mask, labels) arrays.

    With ``trim`` the shared padded length shrinks to the longest packed
    sequence in the dataset; padding is trailing and masked, so outputs at
    real positions are unchanged.
    """
    packed = [pack_pair(ex, vocab, s_max) for ex in examples]
    tok = np.stack([p.token_ids for p in packed])
    seg = np.stack([p.segment_ids for p in packed])
    mask = np.stack([p.mask for p in packed])
    if trim:
        longest = int(mask.sum(axis=1).max())
        tok, seg, mask = tok[:, :longest], seg[:, :longest], mask[:, :longest]
    return tok, seg, mask, np.array([ex.label for ex in examples])


# ---------------------------------------------------------------------------
# JSONL ingestion


def load_jsonl(path, schema):
    """Load PairExamples from a JSON-lines file; labels are matched case-insensitively."""
    if schema not in SCHEMAS:
        raise DataError(f"unknown schema {schema!r}, expected one of {sorted(SCHEMAS)}")
    (field_a, field_b), label_map = SCHEMAS[schema]
    examples = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: invalid JSON ({e.msg})") from e
            for field in (field_a, field_b, "label"):
                if field not in obj:
                    raise DataError(f"{path}:{lineno}: missing field {field!r}")
            raw = str(obj["label"]).lower()
            if raw not in label_map:
                raise DataError(f"{path}:{lineno}: unknown label {obj['label']!r}, "
                                f"expected one of {sorted(label_map)}")
            examples.append(PairExample(str(obj[field_a]), str(obj[field_b]), label_map[raw]))
    return examples


def save_jsonl(examples, path, schema):
    if schema not in SCHEMAS:
        raise DataError(f"unknown schema {schema!r}, expected one of {sorted(SCHEMAS)}")
    (field_a, field_b), label_map = SCHEMAS[schema]
    inverse = {v: k for k, v in label_map.items()}
    lines = [json.dumps({field_a: ex.text_a, field_b: ex.text_b,
                         "label": inverse[ex.label]}, sort_keys=True)
             for ex in examples]
    from .checkpoint import atomic_write_bytes
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


# ---------------------------------------------------------------------------
# synthetic sentence-pair task


def _aspect_word(i):
    return f"topic{i}"


def _marker_word(aspect, c):
    return f"{_aspect_word(aspect)}_sent{c}"


def synth_generate(n, classes=3, seed=0, n_aspects=6, aspect_pool=6):
    """Generate a class-balanced synthetic sentence-pair task.

    ``text_a`` is a shuffled bag of aspect-qualified sentiment markers, one
    per aspect present (e.g. ``topic3_sent2``); ``text_b`` names one of
    those aspects, and the label is the sentiment part of that aspect's
    marker. The label is therefore a deterministic function of the marker
    tokens in ``text_a`` conditioned on ``text_b``. The other aspects'
    markers act as distractors: a classifier that ignores ``text_b`` can at
    best guess the most frequent sentiment among the markers, which with 6
    markers stays near chance.
    """
    if n < classes:
        raise ValueError(f"need n >= classes, got n={n}, classes={classes}")
    if n_aspects > aspect_pool:
        raise ValueError(f"n_aspects={n_aspects} exceeds aspect_pool={aspect_pool}")
    rng = rng_mod.rng_for(seed, rng_mod.SYNTH)
    examples = []
    for i in range(n):
        label = i % classes
        aspects = rng.choice(aspect_pool, size=n_aspects, replace=False)
        chosen = int(aspects[rng.integers(n_aspects)])
        words = [_marker_word(int(a), label if a == chosen else int(rng.integers(classes)))
                 for a in aspects]
        rng.shuffle(words)
        examples.append(PairExample(" ".join(words), _aspect_word(chosen), label))
    return examples


def synth_label_function(ex: PairExample):
    """Recompute the label of a generated example from its text (self-check)."""
    prefix = tokenize(ex.text_b)[0] + "_sent"
    for word in tokenize(ex.text_a):
        if word.startswith(prefix):
            return int(word[len(prefix):])
    raise ValueError(f"no marker for aspect {ex.text_b!r} in {ex.text_a!r}")


def unigram_baseline_accuracy(train, test, classes=3, alpha=1.0):
    """Naive-Bayes unigram classifier over text_a only (ignores text_b).

    Serves as the oracle showing the synthetic task cannot be solved
    without relating the two segments.
    """
    vocab = {}
    for ex in train:
        for t in tokenize(ex.text_a):
            vocab.setdefault(t, len(vocab))
    counts = np.full((classes, len(vocab)), alpha)
    prior = np.full(classes, alpha)
    for ex in train:
        prior[ex.label] += 1
        for t in tokenize(ex.text_a):
            counts[ex.label, vocab[t]] += 1
    log_cond = np.log(counts / counts.sum(axis=1, keepdims=True))
    log_prior = np.log(prior / prior.sum())
    correct = 0
    for ex in test:
        score = log_prior.copy()
        for t in tokenize(ex.text_a):
            if t in vocab:
                score += log_cond[:, vocab[t]]
        if int(np.argmax(score)) == ex.label:
            correct += 1
    return correct / len(test)
