"""Training harness: regularized loss, Adam, stratified k-fold CV, metrics.

Defaults: L2 coefficient 1e-5, dropout 0.1, Adam, 10-fold
cross-validation with per-fold averaging. The conventional fine-tuning
learning rate 2e-5 presumes a pre-trained initialization; training the
desk-scale encoder from scratch stalls there, so the working default is
1e-3 and the fine-tuning value is kept as ``FINE_TUNE_LR``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import rng as rng_mod
from . import tensor as T
from .checkpoint import atomic_write_bytes

FINE_TUNE_LR = 2e-5  # conventional rate for pre-trained initializations
DESK_LR = 1e-3


@dataclass
class TrainConfig:
    lam: float = 1e-5        # L2 coefficient
    lr: float = DESK_LR
    p_drop: float = 0.1
    epochs: int = 10         # 10 suits ABSA-shaped tasks; 5 is typical for NLI
    folds: int = 10
    seed: int = 0
    batch_size: int = 32

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"L2 coefficient must be >= 0, got {self.lam}")
        if self.lr <= 0:
            raise ValueError(f"learning rate must be > 0, got {self.lr}")
        if self.folds < 2:
            raise ValueError(f"fold count must be >= 2, got {self.folds}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")


def regularized_loss(probs, labels, params, decay_names, lam):
    """Cross-entropy plus lam * sum of squares of the decayed weights.

    Biases and layer-norm parameters are excluded via ``decay_names``.
    """
    loss = T.cross_entropy(probs, labels)
    if lam > 0 and decay_names:
        penalty = None
        for name in sorted(decay_names):
            sq = T.tsum(T.mul(params[name], params[name]))
            penalty = sq if penalty is None else T.add(penalty, sq)
        loss = T.add(loss, T.scale(penalty, lam))
    return loss


class Adam:
    """Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params.values()) if isinstance(params, dict) else list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1 ** self.t)
            v_hat = self.v[i] / (1 - b2 ** self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


# ---------------------------------------------------------------------------
# metrics


@dataclass
class EvalResult:
    accuracy: float
    macro_f1: float
    per_class_f1: list
    confusion: np.ndarray
    empty_classes: list = field(default_factory=list)  # no true and no predicted


def confusion_matrix(y_true, y_pred, classes):
    cm = np.zeros((classes, classes), dtype=int)
    for t, p in zip(np.asarray(y_true), np.asarray(y_pred)):
        cm[t, p] += 1
    return cm


def metrics_from_confusion(cm):
    """Accuracy, per-class F1, macro-F1 from a count matrix.

    A class with zero true and zero predicted instances gets F1 = 0 and is
    flagged in ``empty_classes``.
    """
    cm = np.asarray(cm)
    classes = cm.shape[0]
    total = cm.sum()
    accuracy = float(np.trace(cm) / total)
    per_class = []
    empty = []
    for c in range(classes):
        tp = cm[c, c]
        actual = cm[c, :].sum()
        predicted = cm[:, c].sum()
        if actual == 0 and predicted == 0:
            per_class.append(0.0)
            empty.append(c)
            continue
        precision = tp / predicted if predicted else 0.0
        recall = tp / actual if actual else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class.append(float(f1))
    return EvalResult(accuracy=accuracy, macro_f1=float(np.mean(per_class)),
                      per_class_f1=per_class, confusion=cm, empty_classes=empty)


def evaluate(model, arrays, batch_size=64):
    """Eval-mode metrics for a packed dataset (tok, seg, mask, labels)."""
    tok, seg, mask, labels = arrays
    n = len(labels)
    if n == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    preds = np.empty(n, dtype=int)
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        preds[lo:hi] = model.predict(tok[lo:hi], seg[lo:hi], mask[lo:hi])
    cm = confusion_matrix(labels, preds, model.n_classes)
    return metrics_from_confusion(cm)


# ---------------------------------------------------------------------------
# folds


def kfold_split(labels, folds, seed):
    """Stratified k-fold: disjoint covering folds, per-class counts within 1.

    Indices of each class are shuffled (seeded) and dealt round-robin;
    the dealing offset advances across classes so fold sizes stay balanced.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if folds > n:
        raise ValueError(f"folds={folds} exceeds dataset size {n}")
    rng = rng_mod.rng_for(seed, rng_mod.FOLDS)
    fold_of = np.empty(n, dtype=int)
    offset = 0
    for c in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        for j, i in enumerate(idx):
            fold_of[i] = (offset + j) % folds
        offset = (offset + len(idx)) % folds
    splits = []
    for f in range(folds):
        test = np.flatnonzero(fold_of == f)
        train = np.flatnonzero(fold_of != f)
        splits.append((train, test))
    return splits


# ---------------------------------------------------------------------------
# training loops


def train_model(model, arrays, config: TrainConfig, shuffle_rng, dropout_rng,
                epoch_hook=None):
    """Fixed-epoch minibatch training; returns per-epoch mean losses."""
    tok, seg, mask, labels = arrays
    n = len(labels)
    params = model.parameters()
    decay = model.decay_names()
    opt = Adam(params, lr=config.lr)
    epoch_losses = []
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        losses = []
        for lo in range(0, n, config.batch_size):
            batch = order[lo:lo + config.batch_size]
            probs = model.forward_batch(tok[batch], seg[batch], mask[batch],
                                        training=True, rng=dropout_rng)
            loss = regularized_loss(probs, labels[batch], params, decay, config.lam)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        epoch_losses.append(float(np.mean(losses)))
        if epoch_hook is not None:
            epoch_hook(epoch, model)
    return epoch_losses


@dataclass
class CVResult:
    fold_results: list
    mean: dict
    std: dict


def _take(arrays, idx):
    tok, seg, mask, labels = arrays
    return tok[idx], seg[idx], mask[idx], labels[idx]


def cross_validated_train(examples, enc_config, pooling, config: TrainConfig,
                          model_cls=None, out_csv=None, epoch_hook=None):
    """Stratified k-fold CV with a fresh, fold-seeded model per fold.

    ``enc_config`` is used as a template; vocabulary size is set from the
    data. Returns per-fold EvalResults plus mean/std aggregates, and
    optionally writes the results CSV.
    """
    from dataclasses import replace
    from .data import pack_dataset, vocab_for_examples
    from .model import PooledClassifier
    if model_cls is None:
        model_cls = PooledClassifier

    labels_all = np.array([ex.label for ex in examples])
    n_classes = int(labels_all.max()) + 1
    vocab = vocab_for_examples(examples)
    cfg = replace(enc_config, V=len(vocab), p_drop=config.p_drop)
    arrays = pack_dataset(examples, vocab, cfg.S_max)

    fold_results = []
    for f, (train_idx, test_idx) in enumerate(kfold_split(labels_all, config.folds,
                                                          config.seed)):
        model = model_cls(cfg, pooling, n_classes,
                          rng_mod.rng_for(config.seed, rng_mod.INIT, f))
        train_model(model, _take(arrays, train_idx), config,
                    shuffle_rng=rng_mod.rng_for(config.seed, rng_mod.SHUFFLE, f),
                    dropout_rng=rng_mod.rng_for(config.seed, rng_mod.DROPOUT, f),
                    epoch_hook=(lambda e, m, f=f: epoch_hook(f, e, m)) if epoch_hook else None)
        fold_results.append(evaluate(model, _take(arrays, test_idx)))

    mean, std = _aggregate(fold_results)
    if out_csv is not None:
        write_results_csv(out_csv, fold_results, mean, std)
    return CVResult(fold_results=fold_results, mean=mean, std=std)


def _aggregate(fold_results):
    acc = np.array([r.accuracy for r in fold_results])
    f1 = np.array([r.macro_f1 for r in fold_results])
    per_class = np.array([r.per_class_f1 for r in fold_results])
    mean = {"accuracy": float(acc.mean()), "macro_f1": float(f1.mean()),
            "per_class_f1": per_class.mean(axis=0).tolist()}
    std = {"accuracy": float(acc.std()), "macro_f1": float(f1.std()),
           "per_class_f1": per_class.std(axis=0).tolist()}
    return mean, std


def write_results_csv(path, fold_results, mean, std):
    """One row per fold plus 'mean' and 'std' aggregate rows.

    Columns: fold, accuracy, macro_f1, f1_class0 .. f1_class{C-1}.
    Floats are written with full precision (repr) so outputs are
    byte-reproducible and aggregates re-derivable exactly.
    """
    classes = len(fold_results[0].per_class_f1)
    header = ["fold", "accuracy", "macro_f1"] + [f"f1_class{c}" for c in range(classes)]
    rows = [header]
    for f, r in enumerate(fold_results):
        rows.append([str(f), repr(r.accuracy), repr(r.macro_f1)]
                    + [repr(v) for v in r.per_class_f1])
    for name, agg in (("mean", mean), ("std", std)):
        rows.append([name, repr(agg["accuracy"]), repr(agg["macro_f1"])]
                    + [repr(v) for v in agg["per_class_f1"]])
    payload = "\n".join(",".join(row) for row in rows) + "\n"
    atomic_write_bytes(path, payload.encode("utf-8"))


def read_results_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = {row[0]: [float(v) for v in row[1:]] for row in reader}
    return header, rows
