"""Unseen-class feature synthesis, latent-feature augmentation, the final
softmax recognizer, and the generalized zero-shot metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import data as dt
from . import engine as en
from . import networks as nets

PROV_REAL_SEEN = 0
PROV_SYNTH_UNSEEN = 1


@dataclass
class RecognitionSet:
    """Training table for the final classifier.

    Augmented rows are laid out [x ; f1 ; f2 ; h-hat]; plain rows are just x.
    """

    features: np.ndarray
    labels: np.ndarray
    provenance: np.ndarray      # PROV_* per row
    augmented: bool


@dataclass
class GzslMetrics:
    per_class: dict             # class id -> top-1 accuracy in percent
    unseen_acc: float           # U: mean over unseen classes
    seen_acc: float             # S: mean over seen classes
    harmonic: float             # H
    confusion: dict = field(default_factory=dict)   # true -> {pred -> count}

    def to_dict(self) -> dict:
        return {
            "U": self.unseen_acc,
            "S": self.seen_acc,
            "H": self.harmonic,
            "per_class": {str(k): v for k, v in sorted(self.per_class.items())},
        }

    def csv_row(self) -> str:
        return f"{self.unseen_acc!r},{self.seen_acc!r},{self.harmonic!r}"


def synthesize_unseen(g_model: nets.MlpModel, attributes: np.ndarray,
                      unseen_classes, n_syn: int, rng: en.RngStream):
    """n_syn generator draws per unseen class, each with fresh noise."""
    unseen_classes = np.asarray(unseen_classes, dtype=np.int64)
    if len(unseen_classes) == 0:
        raise ValueError("unseen class set is empty")
    d_z = g_model.layers[0].in_dim - attributes.shape[1]
    feats, labels = [], []
    for c in unseen_classes:
        if n_syn == 0:
            continue
        graph = en.Graph()
        z = en.sample_gaussian(graph, rng, (n_syn, d_z))
        h = graph.constant(np.tile(attributes[c], (n_syn, 1)))
        feats.append(nets.forward_generator(g_model, z, h, trainable=False).data)
        labels.append(np.full(n_syn, c, dtype=np.int64))
    if not feats:
        d_x = g_model.layers[-1].out_dim
        return np.zeros((0, d_x)), np.zeros(0, dtype=np.int64)
    return np.concatenate(feats), np.concatenate(labels)


def augment_with_latents(i_model: nets.MlpModel, features: np.ndarray,
                         labels: np.ndarray, chunk: int = 512) -> RecognitionSet:
    """Concatenate [x ; f1 ; f2 ; h-hat] per row, preserving row order."""
    parts = []
    for lo in range(0, len(features), chunk):
        graph = en.Graph()
        x = graph.constant(features[lo:lo + chunk])
        hhat, f1, f2 = nets.forward_inference(i_model, x, trainable=False)
        parts.append(np.concatenate([x.data, f1.data, f2.data, hhat.data], axis=1))
    width = features.shape[1] + 2 * i_model.layers[0].out_dim + i_model.layers[-1].out_dim
    stacked = np.concatenate(parts) if parts else np.zeros((0, width))
    return RecognitionSet(stacked, np.asarray(labels, dtype=np.int64),
                          np.zeros(len(stacked), dtype=np.int64), augmented=True)


def build_recognition_set(ds: dt.GzslDataset, synth_x: np.ndarray, synth_y: np.ndarray,
                          i_model: nets.MlpModel = None) -> RecognitionSet:
    """Real train-seen rows plus synthesized unseen rows, augmented through
    the inference network when it is supplied."""
    train_idx = ds.partition[dt.TRAIN_SEEN]
    x = np.concatenate([ds.features[train_idx], synth_x])
    y = np.concatenate([ds.labels[train_idx], synth_y])
    prov = np.concatenate([
        np.full(len(train_idx), PROV_REAL_SEEN, dtype=np.int64),
        np.full(len(synth_x), PROV_SYNTH_UNSEEN, dtype=np.int64),
    ])
    if i_model is None:
        return RecognitionSet(x, y, prov, augmented=False)
    rs = augment_with_latents(i_model, x, y)
    rs.provenance = prov
    return rs


def train_recognizer(rs: RecognitionSet, class_ids, epochs: int, lr: float,
                     rng: en.RngStream, batch_size: int = 64) -> nets.MlpModel:
    """Single linear softmax layer over the full seen+unseen label space."""
    class_ids = np.asarray(sorted(class_ids), dtype=np.int64)
    if len(np.unique(rs.labels)) < 2:
        raise ValueError("need at least 2 classes to train the recognizer")
    index = np.full(int(class_ids.max()) + 1, -1, dtype=np.int64)
    index[class_ids] = np.arange(len(class_ids))
    clf = nets.build_linear_classifier(rs.features.shape[1], len(class_ids), rng)
    adam = en.AdamState(clf.params())
    n = len(rs.features)
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            rows = order[lo:lo + batch_size]
            graph = en.Graph()
            logits = nets.forward_classifier(clf, graph.constant(rs.features[rows]))
            loss = en.softmax_cross_entropy(logits, index[rs.labels[rows]])
            leaves = [t for pair in clf.bind(graph, True) for t in pair]
            grads = en.backward(loss, leaves)
            en.adam_step(clf.params(), [grads[t] for t in leaves], adam, lr, 0.9, 0.999)
    return clf


def predict(clf: nets.MlpModel, features: np.ndarray, class_ids) -> np.ndarray:
    class_ids = np.asarray(sorted(class_ids), dtype=np.int64)
    graph = en.Graph()
    logits = nets.forward_classifier(clf, graph.constant(features), trainable=False)
    return class_ids[np.argmax(logits.data, axis=1)]


def per_class_accuracy(preds, labels, class_set) -> dict:
    """Top-1 accuracy per class, in percent; every class needs a sample."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    out = {}
    for c in sorted(class_set):
        mask = labels == c
        if not mask.any():
            raise ValueError(f"class {c} has no test samples")
        out[int(c)] = 100.0 * float(np.mean(preds[mask] == c))
    return out


def harmonic_mean(u: float, s: float) -> float:
    if u < 0 or s < 0:
        raise ValueError("accuracies must be nonnegative")
    if u + s == 0:
        return 0.0
    return 2.0 * u * s / (u + s)


def evaluate_gzsl(recognizer: nets.MlpModel, i_model: nets.MlpModel,
                  ds: dt.GzslDataset) -> GzslMetrics:
    """Classify every test sample (seen and unseen partitions) over the full
    label space; i_model=None evaluates on plain features."""
    for p in (dt.TEST_SEEN, dt.TEST_UNSEEN):
        if len(ds.partition[p]) == 0:
            raise ValueError(f"test partition {p!r} is empty")
    idx = np.concatenate([ds.partition[dt.TEST_SEEN], ds.partition[dt.TEST_UNSEEN]])
    feats = ds.features[idx]
    labels = ds.labels[idx]
    if i_model is not None:
        feats = augment_with_latents(i_model, feats, labels).features
    class_ids = np.concatenate([ds.seen_classes, ds.unseen_classes])
    preds = predict(recognizer, feats, class_ids)

    per_class = per_class_accuracy(preds, labels, class_ids.tolist())
    seen_accs = [per_class[int(c)] for c in ds.seen_classes]
    unseen_accs = [per_class[int(c)] for c in ds.unseen_classes]
    s = float(np.mean(seen_accs))
    u = float(np.mean(unseen_accs))
    confusion = {}
    for t, p in zip(labels.tolist(), preds.tolist()):
        confusion.setdefault(int(t), {}).setdefault(int(p), 0)
        confusion[int(t)][int(p)] += 1
    return GzslMetrics(per_class, u, s, harmonic_mean(u, s), confusion)
