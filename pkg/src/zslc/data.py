"""Synthetic GZSL dataset generation, CSV/JSON ingestion, normalization,
splits, and batching.

File formats (UTF-8, LF newlines, float64 round-trip decimal text):
  features.csv   header ``label,f0..f{d-1}``, one sample per row
  attributes.csv header ``label,a0..a{dh-1}``, one class per row
  splits.json    ``{"seen_classes": [...], "unseen_classes": [...],
                    "partition": {"train_seen": [...], "test_seen": [...],
                                  "test_unseen": [...]}}`` (row indices)
Class labels are the integers 0..C-1 and index the attribute table.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from . import engine as en

TRAIN_SEEN = "train_seen"
TEST_SEEN = "test_seen"
TEST_UNSEEN = "test_unseen"
PARTITIONS = (TRAIN_SEEN, TEST_SEEN, TEST_UNSEEN)


class DataFormatError(ValueError):
    """A dataset file failed to parse or violated the schema."""


@dataclass(frozen=True)
class GzslDataset:
    features: np.ndarray        # N x d_x
    labels: np.ndarray          # N, int class ids
    attributes: np.ndarray      # C x d_h, row y = h_y
    seen_classes: np.ndarray
    unseen_classes: np.ndarray
    partition: dict             # name -> row index array

    def __post_init__(self):
        self.validate()

    @property
    def d_x(self) -> int:
        return self.features.shape[1]

    @property
    def d_h(self) -> int:
        return self.attributes.shape[1]

    def validate(self):
        n = len(self.features)
        if len(self.labels) != n:
            raise DataFormatError("labels/features length mismatch")
        seen = set(self.seen_classes.tolist())
        unseen = set(self.unseen_classes.tolist())
        if seen & unseen:
            raise DataFormatError(f"seen/unseen class overlap: {sorted(seen & unseen)}")
        c = len(self.attributes)
        present = set(np.unique(self.labels).tolist())
        if present - set(range(c)):
            raise DataFormatError("sample label without an attribute row")
        if (seen | unseen) - set(range(c)):
            raise DataFormatError("split class without an attribute row")
        if not np.all(np.isfinite(self.attributes)):
            raise DataFormatError("attributes must be finite")
        if np.any(~self.attributes.any(axis=1)):
            raise DataFormatError("all-zero attribute row")
        if set(self.partition) != set(PARTITIONS):
            raise DataFormatError(f"partition must have keys {PARTITIONS}")
        all_idx = np.concatenate([self.partition[p] for p in PARTITIONS]) if n else np.array([])
        if len(all_idx) != len(set(all_idx.tolist())):
            raise DataFormatError("partitions overlap")
        if len(all_idx) and (all_idx.min() < 0 or all_idx.max() >= n):
            raise DataFormatError("partition index out of range")
        for p in (TRAIN_SEEN, TEST_SEEN):
            bad = set(self.labels[self.partition[p]].tolist()) - seen
            if bad:
                raise DataFormatError(f"{p} contains non-seen labels {sorted(bad)}")
        bad = set(self.labels[self.partition[TEST_UNSEEN]].tolist()) - unseen
        if bad:
            raise DataFormatError(f"test_unseen contains non-unseen labels {sorted(bad)}")


@dataclass
class SynthSpec:
    n_seen: int = 5
    n_unseen: int = 5
    d_x: int = 32
    d_h: int = 8
    train_per_class: int = 100
    test_per_class: int = 30
    sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_seen < 2 or self.n_unseen < 1:
            raise ValueError("need n_seen >= 2 and n_unseen >= 1")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


def generate_synthetic(spec: SynthSpec) -> GzslDataset:
    """Classes get fixed sparse nonnegative attributes; features are a noisy
    nonlinear image of them: x = relu(M h_y) + sigma * gaussian with one
    global random map M, so the visual-semantic coupling is learnable."""
    n_classes = spec.n_seen + spec.n_unseen
    attr_rng = en.RngStream(spec.seed, "synth/attr")
    map_rng = en.RngStream(spec.seed, "synth/map")
    noise_rng = en.RngStream(spec.seed, "synth/noise")

    attrs = np.zeros((n_classes, spec.d_h))
    for c in range(n_classes):
        while not attrs[c].any():  # re-draw the rare all-zero row
            vals = attr_rng.uniform((spec.d_h,))
            mask = attr_rng.uniform((spec.d_h,)) < 0.5
            attrs[c] = np.where(mask, vals, 0.0)

    m = map_rng.normal((spec.d_x, spec.d_h))
    means = np.maximum(attrs @ m.T, 0.0)

    feats, labels, part = [], [], {p: [] for p in PARTITIONS}
    row = 0
    for c in range(n_classes):
        seen = c < spec.n_seen
        counts = [(TRAIN_SEEN, spec.train_per_class), (TEST_SEEN, spec.test_per_class)] if seen \
            else [(TEST_UNSEEN, spec.test_per_class)]
        for pname, count in counts:
            feats.append(means[c] + spec.sigma * noise_rng.normal((count, spec.d_x)))
            labels.append(np.full(count, c, dtype=np.int64))
            part[pname].extend(range(row, row + count))
            row += count
    return GzslDataset(
        features=np.concatenate(feats),
        labels=np.concatenate(labels),
        attributes=attrs,
        seen_classes=np.arange(spec.n_seen),
        unseen_classes=np.arange(spec.n_seen, n_classes),
        partition={p: np.array(v, dtype=np.int64) for p, v in part.items()},
    )


# ---------------------------------------------------------------------------
# files


def _write_csv(path, header, int_col, float_rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for key, row in zip(int_col, float_rows):
            fh.write(str(int(key)) + "," + ",".join(repr(float(v)) for v in row) + "\n")


def _parse_float(token: str, path, lineno: int) -> float:
    try:
        v = float(token)
    except ValueError:
        raise DataFormatError(f"{path}:{lineno}: bad float {token!r}") from None
    if not np.isfinite(v):
        raise DataFormatError(f"{path}:{lineno}: NaN/Inf literal rejected")
    return v


def _read_csv(path, prefix):
    keys, rows, width = [], [], None
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        if not header or header[0] != "label" or any(not c.startswith(prefix) for c in header[1:]):
            raise DataFormatError(f"{path}:1: expected header label,{prefix}0,...")
        width = len(header) - 1
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != width + 1:
                raise DataFormatError(f"{path}:{lineno}: expected {width + 1} cells, got {len(cells)}")
            try:
                keys.append(int(cells[0]))
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: bad label {cells[0]!r}") from None
            rows.append([_parse_float(t, path, lineno) for t in cells[1:]])
    return np.array(keys, dtype=np.int64), np.array(rows, dtype=np.float64).reshape(len(rows), width)


def save_dataset(ds: GzslDataset, features_path, attributes_path, splits_path):
    _write_csv(features_path, ["label"] + [f"f{i}" for i in range(ds.d_x)],
               ds.labels, ds.features)
    _write_csv(attributes_path, ["label"] + [f"a{i}" for i in range(ds.d_h)],
               range(len(ds.attributes)), ds.attributes)
    doc = {
        "seen_classes": ds.seen_classes.tolist(),
        "unseen_classes": ds.unseen_classes.tolist(),
        "partition": {p: ds.partition[p].tolist() for p in PARTITIONS},
    }
    with open(splits_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_dataset(features_path, attributes_path, splits_path) -> GzslDataset:
    labels, features = _read_csv(features_path, "f")
    attr_ids, attrs = _read_csv(attributes_path, "a")
    if not np.array_equal(attr_ids, np.arange(len(attr_ids))):
        raise DataFormatError(f"{attributes_path}: class labels must be 0..C-1 in order")
    try:
        with open(splits_path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{splits_path}: {e}") from None
    for key in ("seen_classes", "unseen_classes", "partition"):
        if key not in doc:
            raise DataFormatError(f"{splits_path}: missing key {key!r}")
    try:
        return GzslDataset(
            features=features,
            labels=labels,
            attributes=attrs,
            seen_classes=np.array(sorted(doc["seen_classes"]), dtype=np.int64),
            unseen_classes=np.array(sorted(doc["unseen_classes"]), dtype=np.int64),
            partition={p: np.array(doc["partition"].get(p, []), dtype=np.int64)
                       for p in PARTITIONS},
        )
    except DataFormatError:
        raise
    except (TypeError, KeyError, ValueError) as e:
        raise DataFormatError(f"{splits_path}: {e}") from None


# ---------------------------------------------------------------------------
# normalization and batching


def normalize_features(ds: GzslDataset, mode: str) -> GzslDataset:
    """Rescale features; statistics come from train-seen rows only."""
    if mode == "none":
        return ds
    if mode == "unit-l2":
        norms = np.linalg.norm(ds.features, axis=1, keepdims=True)
        scaled = np.where(norms > 0, ds.features / np.where(norms > 0, norms, 1.0), 0.0)
        return replace(ds, features=scaled)
    if mode == "min-max":
        train = ds.features[ds.partition[TRAIN_SEEN]]
        lo = train.min(axis=0)
        span = train.max(axis=0) - lo
        span = np.where(span > 0, span, 1.0)
        return replace(ds, features=(ds.features - lo) / span)
    raise ValueError(f"unknown normalization mode {mode!r}")


def batches(ds: GzslDataset, partition: str, batch_size: int,
            rng: en.RngStream = None, shuffle: bool = True):
    """Yield (x, y, h_y) batches covering the partition exactly once."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    idx = ds.partition[partition]
    if len(idx) == 0:
        raise ValueError(f"partition {partition!r} is empty")
    if shuffle:
        idx = idx[rng.permutation(len(idx))]
    for lo in range(0, len(idx), batch_size):
        rows = idx[lo:lo + batch_size]
        y = ds.labels[rows]
        yield ds.features[rows], y, ds.attributes[y]
