"""Per-layer [CLS] geometry analysis: CSV dumps, PCA projection, cluster score.

During (or after) training, the [CLS] state of every example at chosen
layers is dumped to CSV; those dumps are then projected to 2-D with PCA
and scored for class-cluster tightness, making the qualitative
"later epochs / later layers cluster better" claim checkable.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .checkpoint import atomic_write_bytes


class DegenerateDataError(ValueError):
    """All points identical: no variance to project."""


@dataclass
class LayerDump:
    epoch: int
    layer: int          # 1-based, 1 = embedding-adjacent
    example_ids: np.ndarray
    labels: np.ndarray
    vectors: np.ndarray  # n × H


@dataclass
class Projection2D:
    components: np.ndarray          # k × H, orthonormal rows
    explained_variance: np.ndarray  # k, descending
    example_ids: np.ndarray
    labels: np.ndarray
    points: np.ndarray              # n × k


def pca_project(dump: LayerDump, k=2):
    """Project mean-centered vectors onto the top-k right singular vectors.

    Component signs are fixed so each component's first nonzero coordinate
    is positive; explained variance is sigma^2 / (n - 1), descending.
    """
    X = np.asarray(dump.vectors, dtype=float)
    n, h = X.shape
    if k > h:
        raise ValueError(f"k={k} exceeds dimensionality {h}")
    Xc = X - X.mean(axis=0)
    if np.allclose(Xc, 0.0):
        raise DegenerateDataError("all vectors are identical; PCA is undefined")
    if n < 2:
        raise ValueError("PCA needs at least 2 points")
    _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    components = Vt[:k].copy()
    for i in range(k):
        nz = np.flatnonzero(np.abs(components[i]) > 1e-12)
        if nz.size and components[i, nz[0]] < 0:
            components[i] = -components[i]
    explained = (s[:k] ** 2) / (n - 1)
    return Projection2D(components=components, explained_variance=explained,
                        example_ids=np.asarray(dump.example_ids),
                        labels=np.asarray(dump.labels),
                        points=Xc @ components.T)


def cluster_score(proj: Projection2D):
    """Mean within-class distance to centroid over mean inter-centroid distance.

    Lower is tighter and better separated. Invariant under rigid motions
    and uniform scaling of the point set.
    """
    labels = np.asarray(proj.labels)
    classes = sorted(set(labels.tolist()))
    if len(classes) < 2:
        raise ValueError("cluster score needs at least 2 classes present")
    pts = proj.points
    centroids = {c: pts[labels == c].mean(axis=0) for c in classes}
    within = np.concatenate([np.linalg.norm(pts[labels == c] - centroids[c], axis=1)
                             for c in classes])
    inter = [np.linalg.norm(centroids[a] - centroids[b])
             for i, a in enumerate(classes) for b in classes[i + 1:]]
    return float(within.mean() / np.mean(inter))


# ---------------------------------------------------------------------------
# dump files


def dump_filename(epoch, layer):
    return f"cls_epoch{epoch}_layer{layer}.csv"


def write_dump(dump: LayerDump, out_dir):
    h = dump.vectors.shape[1]
    header = "example_id,label," + ",".join(f"v{i}" for i in range(h))
    lines = [header]
    for eid, lab, vec in zip(dump.example_ids, dump.labels, dump.vectors):
        lines.append(f"{int(eid)},{int(lab)}," + ",".join(repr(float(v)) for v in vec))
    path = os.path.join(out_dir, dump_filename(dump.epoch, dump.layer))
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))
    return path


def read_dump(path, epoch=None, layer=None):
    with open(path, encoding="utf-8") as f:
        header = f.readline()
        rows = [line.strip().split(",") for line in f if line.strip()]
    if epoch is None or layer is None:
        name = os.path.basename(path)
        stem = name[len("cls_epoch"):-len(".csv")]
        e, l = stem.split("_layer")
        epoch, layer = int(e), int(l)
    ids = np.array([int(r[0]) for r in rows])
    labels = np.array([int(r[1]) for r in rows])
    vectors = np.array([[float(v) for v in r[2:]] for r in rows])
    return LayerDump(epoch=epoch, layer=layer, example_ids=ids, labels=labels,
                     vectors=vectors)


def dump_trace(model, arrays, epoch, layers, out_dir, batch_size=64):
    """Dump the eval-mode [CLS] state of every example at the given layers.

    Layers are 1-based; requesting a layer above the model's count errors.
    Returns the written paths.
    """
    L = model.config.L
    for layer in layers:
        if not 1 <= layer <= L:
            raise ValueError(f"layer {layer} out of range 1..{L}")
    tok, seg, mask, labels = arrays
    n = len(labels)
    per_layer = [np.empty((n, model.config.H)) for _ in range(L)]
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        for li, block in enumerate(model.trace_batch(tok[lo:hi], seg[lo:hi], mask[lo:hi])):
            per_layer[li][lo:hi] = block
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    ids = np.arange(n)
    for layer in layers:
        dump = LayerDump(epoch=epoch, layer=layer, example_ids=ids, labels=labels,
                         vectors=per_layer[layer - 1])
        paths.append(write_dump(dump, out_dir))
    return paths


def project_dump_dir(dumps_dir, out_dir, k=2):
    """Project every dump CSV in a directory; emit point CSVs + a score table.

    Writes ``proj_epoch{e}_layer{l}.csv`` files (example_id, label, x, y)
    and ``cluster_scores.csv`` (epoch, layer, cluster_score,
    explained_var0, explained_var1).
    """
    os.makedirs(out_dir, exist_ok=True)
    names = sorted(n for n in os.listdir(dumps_dir)
                   if n.startswith("cls_epoch") and n.endswith(".csv"))
    if not names:
        raise FileNotFoundError(f"no dump CSVs found in {dumps_dir}")
    score_rows = []
    for name in names:
        dump = read_dump(os.path.join(dumps_dir, name))
        proj = pca_project(dump, k=k)
        lines = ["example_id,label," + ",".join(f"p{i}" for i in range(k))]
        for eid, lab, pt in zip(proj.example_ids, proj.labels, proj.points):
            lines.append(f"{int(eid)},{int(lab)}," + ",".join(repr(float(v)) for v in pt))
        out = os.path.join(out_dir, f"proj_epoch{dump.epoch}_layer{dump.layer}.csv")
        atomic_write_bytes(out, ("\n".join(lines) + "\n").encode("utf-8"))
        score = cluster_score(proj)
        score_rows.append((dump.epoch, dump.layer, score,
                           proj.explained_variance[0],
                           proj.explained_variance[1] if k > 1 else 0.0))
    lines = ["epoch,layer,cluster_score,explained_var0,explained_var1"]
    for e, l, s, v0, v1 in sorted(score_rows):
        lines.append(f"{e},{l},{repr(s)},{repr(float(v0))},{repr(float(v1))}")
    atomic_write_bytes(os.path.join(out_dir, "cluster_scores.csv"),
                       ("\n".join(lines) + "\n").encode("utf-8"))
    return score_rows
