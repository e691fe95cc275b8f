"""clspool: classify from the per-layer [CLS] trace of a small transformer.

A self-contained numpy stack: reverse-mode autodiff tensors, a desk-scale
BERT-shaped encoder exposing every layer's [CLS] state, three pooling
heads over that trace (last / lstm / attention), a cross-validated
training harness, and a PCA-based layer-geometry analysis pipeline.
"""

from .tensor import Tensor, ShapeError, backward
from .encoder import CLSTrace, EncoderConfig, MiniEncoder, PackedInput
from .pooling import (AttentionPoolHead, ClassifierHead, LSTMPoolHead,
                      attention_pool, classify, last_cls_pool, lstm_pool)
from .model import PooledClassifier
from .train import (Adam, CVResult, EvalResult, TrainConfig, cross_validated_train,
                    evaluate, kfold_split, regularized_loss, train_model)
from .data import (DataError, PairExample, Vocab, build_vocab, load_jsonl,
                   pack_dataset, pack_pair, save_jsonl, synth_generate)
from .analysis import (LayerDump, Projection2D, cluster_score, dump_trace,
                       pca_project, project_dump_dir)
from .gradcheck import run_gradcheck

__version__ = "0.1.0"
