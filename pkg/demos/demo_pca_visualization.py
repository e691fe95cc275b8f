"""Watch per-layer [CLS] geometry organize itself during training.

Trains an LSTM-pooled model on a synthetic task, dumps the held-out
[CLS] states at the first and last epoch, PCA-projects each dump to 2-D,
and prints a cluster-tightness score per (epoch, layer). Lower is
tighter; the later epoch should win, and the embedding-adjacent first
layer should lag behind the rest.
"""

import os
import tempfile

import numpy as np

from clspool import rng as R
from clspool.analysis import dump_trace, project_dump_dir
from clspool.data import pack_dataset, synth_generate, vocab_for_examples
from clspool.encoder import EncoderConfig
from clspool.model import PooledClassifier
from clspool.train import TrainConfig, train_model

examples = synth_generate(1500, classes=3, seed=1)
vocab = vocab_for_examples(examples)
cfg = EncoderConfig(L=4, H=32, A=4, F=64, V=len(vocab), S_max=32, p_drop=0.1)
arrays = pack_dataset(examples, vocab, cfg.S_max)
train = tuple(a[:1200] for a in arrays)
held_out = tuple(a[1200:] for a in arrays)

model = PooledClassifier(cfg, "lstm", 3, R.rng_for(1, R.INIT))
config = TrainConfig(epochs=10, lr=1e-3, folds=2, seed=1, batch_size=32)

workdir = tempfile.mkdtemp(prefix="clspool_demo_")
dumps = os.path.join(workdir, "dumps")


def hook(epoch, m):
    if epoch in (1, config.epochs):
        dump_trace(m, held_out, epoch, [1, 2, 3, 4], dumps)
        print(f"  dumped layers 1-4 at epoch {epoch}")


print("training...")
losses = train_model(model, train, config,
                     shuffle_rng=R.rng_for(1, R.SHUFFLE),
                     dropout_rng=R.rng_for(1, R.DROPOUT),
                     epoch_hook=hook)
print("per-epoch mean loss:", np.round(losses, 3))

rows = project_dump_dir(dumps, os.path.join(workdir, "proj"))
print("\ncluster score (lower = tighter, better separated):")
print("epoch  layer  score")
for epoch, layer, score, _, _ in sorted(rows):
    print(f"{epoch:>5}  {layer:>5}  {score:.3f}")
print(f"\n2-D point CSVs written under {workdir}/proj")
