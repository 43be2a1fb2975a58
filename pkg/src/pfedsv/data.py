"""Synthetic blob datasets, IDX image loading, and non-IID client partitioning."""

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from pfedsv.errors import (
    BadMagic,
    DimensionMismatch,
    InfeasiblePartition,
    SliceTooSmall,
    TruncatedFile,
)
from pfedsv.rngs import as_generator

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with integer class labels."""

    features: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    class_count: int

    def __post_init__(self):
        features = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if features.ndim != 2 or labels.ndim != 1 or features.shape[0] != labels.shape[0]:
            raise DimensionMismatch(
                f"features {features.shape} and labels {labels.shape} do not align"
            )
        if features.shape[0] < 1:
            raise DimensionMismatch("dataset must hold at least one sample")
        if labels.min() < 0 or labels.max() >= self.class_count:
            raise DimensionMismatch(
                f"labels must lie in [0, {self.class_count}), got "
                f"[{labels.min()}, {labels.max()}]"
            )
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.features.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class PartitionSpec:
    """Row-index assignment of one dataset across clients."""

    client_indices: tuple
    label_sets: tuple

    def __post_init__(self):
        indices = tuple(np.asarray(ix, dtype=np.int64) for ix in self.client_indices)
        labels = tuple(frozenset(int(v) for v in ls) for ls in self.label_sets)
        if len(indices) != len(labels):
            raise DimensionMismatch("client_indices and label_sets differ in length")
        flat = np.concatenate([ix for ix in indices if len(ix)]) if indices else np.array([])
        if len(flat) != len(np.unique(flat)):
            raise DimensionMismatch("client index lists overlap")
        object.__setattr__(self, "client_indices", indices)
        object.__setattr__(self, "label_sets", labels)

    @property
    def num_clients(self) -> int:
        return len(self.client_indices)


@dataclass(frozen=True)
class ClientSplit:
    """One client's local data, cut into train / validation / test."""

    train: Dataset
    validation: Dataset
    test: Dataset


def subset(ds: Dataset, indices) -> Dataset:
    return Dataset(ds.features[indices], ds.labels[indices], ds.class_count)


def synth_blobs(num_classes, dim, per_class, spread, rng) -> Dataset:
    """Gaussian blob per class, centers uniform in the unit hypercube.

    Features are min-max rescaled per column into [0, 1] afterwards, which
    keeps classes linearly separable whenever the raw blobs are.
    """
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    if spread <= 0:
        raise ValueError("spread must be > 0")
    rng = as_generator(rng)
    centers = rng.uniform(0.0, 1.0, (num_classes, dim))
    labels = np.repeat(np.arange(num_classes), per_class)
    feats = centers[labels] + rng.normal(0.0, spread, (len(labels), dim))
    lo = feats.min(axis=0)
    span = feats.max(axis=0) - lo
    span[span == 0] = 1.0  # constant column stays constant
    feats = (feats - lo) / span
    return Dataset(feats, labels, num_classes)


def _read_exact(fh, count, path):
    buf = fh.read(count)
    if len(buf) != count:
        raise TruncatedFile(f"{path}: wanted {count} bytes, got {len(buf)}")
    return buf


def load_idx(images_path, labels_path) -> Dataset:
    """Read the big-endian unsigned-byte image/label pair format."""
    with open(images_path, "rb") as fh:
        (magic,) = struct.unpack(">I", _read_exact(fh, 4, images_path))
        if magic != IDX_IMAGES_MAGIC:
            raise BadMagic(f"{images_path}: magic {magic:#010x}, expected 0x00000803")
        count, rows, cols = struct.unpack(">III", _read_exact(fh, 12, images_path))
        raw = _read_exact(fh, count * rows * cols, images_path)
    feats = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0
    feats = feats.reshape(count, rows * cols)
    with open(labels_path, "rb") as fh:
        (magic,) = struct.unpack(">I", _read_exact(fh, 4, labels_path))
        if magic != IDX_LABELS_MAGIC:
            raise BadMagic(f"{labels_path}: magic {magic:#010x}, expected 0x00000801")
        (label_count,) = struct.unpack(">I", _read_exact(fh, 4, labels_path))
        labels = np.frombuffer(_read_exact(fh, label_count, labels_path), dtype=np.uint8)
    if label_count != count:
        raise DimensionMismatch(f"{count} images but {label_count} labels")
    labels = labels.astype(np.int64)
    return Dataset(feats, labels, int(labels.max()) + 1)


def partition_pathological(ds: Dataset, num_clients, labels_per_client, rng) -> PartitionSpec:
    """Label-homogeneous shards, each client drawing shards of distinct labels.

    Shard counts per label are as even as possible; clients pick greedily from
    whichever labels have the most shards left, which always succeeds when the
    upfront feasibility checks pass.
    """
    if num_clients < 1:
        raise ValueError("num_clients must be >= 1")
    if labels_per_client < 1:
        raise ValueError("labels_per_client must be >= 1")
    rng = as_generator(rng)
    present = np.unique(ds.labels)
    if labels_per_client > len(present):
        raise InfeasiblePartition(
            f"{labels_per_client} labels per client but only {len(present)} labels present"
        )
    total_shards = num_clients * labels_per_client
    counts = np.full(len(present), total_shards // len(present), dtype=np.int64)
    extra = total_shards % len(present)
    if extra:
        counts[rng.choice(len(present), size=extra, replace=False)] += 1
    if counts.max() > num_clients:
        raise InfeasiblePartition(
            "a label would need more shards than there are clients to take them"
        )
    shards = {}
    for lbl, n_shards in zip(present, counts):
        if n_shards == 0:
            continue
        idx = np.flatnonzero(ds.labels == lbl)
        if len(idx) < n_shards:
            raise InfeasiblePartition(
                f"label {lbl} has {len(idx)} samples, cannot form {n_shards} shards"
            )
        shards[int(lbl)] = list(np.array_split(rng.permutation(idx), n_shards))
    remaining = counts.copy()
    client_indices, label_sets = [], []
    for _ in range(num_clients):
        tie = rng.permutation(len(present))
        order = sorted(range(len(present)), key=lambda i: (-remaining[i], tie[i]))
        chosen = [i for i in order if remaining[i] > 0][:labels_per_client]
        if len(chosen) < labels_per_client:
            raise InfeasiblePartition("ran out of shard labels mid-assignment")
        rows = []
        for i in chosen:
            remaining[i] -= 1
            rows.append(shards[int(present[i])].pop())
        client_indices.append(np.sort(np.concatenate(rows)))
        label_sets.append(frozenset(int(present[i]) for i in chosen))
    return PartitionSpec(tuple(client_indices), tuple(label_sets))


def partition_dirichlet(ds: Dataset, num_clients, alpha, rng) -> PartitionSpec:
    """Per-class Dirichlet(alpha) proportions; alpha tunes heterogeneity."""
    if num_clients < 1:
        raise ValueError("num_clients must be >= 1")
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    if len(ds) < 2 * num_clients:
        raise InfeasiblePartition(
            f"{len(ds)} samples cannot give {num_clients} clients two samples each"
        )
    rng = as_generator(rng)
    buckets = [[] for _ in range(num_clients)]
    for lbl in np.unique(ds.labels):
        idx = rng.permutation(np.flatnonzero(ds.labels == lbl))
        props = rng.dirichlet(np.full(num_clients, float(alpha)))
        cuts = (np.cumsum(props)[:-1] * len(idx)).astype(np.int64)
        for client, chunk in enumerate(np.split(idx, cuts)):
            buckets[client].extend(chunk.tolist())
    # degenerate draws can starve a client; top it up from the fullest one
    sizes = np.array([len(b) for b in buckets])
    while sizes.min() < 2:
        needy, donor = int(sizes.argmin()), int(sizes.argmax())
        buckets[needy].append(buckets[donor].pop())
        sizes[needy] += 1
        sizes[donor] -= 1
    client_indices = tuple(np.sort(np.array(b, dtype=np.int64)) for b in buckets)
    label_sets = tuple(frozenset(ds.labels[ix].tolist()) for ix in client_indices)
    return PartitionSpec(client_indices, label_sets)


def split_client(ds_slice: Dataset, val_frac, test_frac, rng) -> ClientSplit:
    """Shuffled train/validation/test cut; floors, but at least one sample each."""
    if val_frac <= 0 or test_frac <= 0 or val_frac + test_frac >= 1:
        raise ValueError("need 0 < val_frac, test_frac and val_frac + test_frac < 1")
    n = len(ds_slice)
    if n < 3:
        raise SliceTooSmall(f"{n} samples cannot be split three ways")
    rng = as_generator(rng)
    n_val = max(1, int(n * val_frac))
    n_test = max(1, int(n * test_frac))
    n_train = n - n_val - n_test
    perm = rng.permutation(n)
    return ClientSplit(
        train=subset(ds_slice, perm[:n_train]),
        validation=subset(ds_slice, perm[n_train : n_train + n_val]),
        test=subset(ds_slice, perm[n_train + n_val :]),
    )


def relevance_truth(spec: PartitionSpec) -> np.ndarray:
    """Boolean matrix: clients sharing at least one label, self excluded."""
    n = spec.num_clients
    out = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            if spec.label_sets[i] & spec.label_sets[j]:
                out[i, j] = out[j, i] = True
    return out


def label_histogram(spec: PartitionSpec, ds: Dataset) -> np.ndarray:
    """Per-client label counts, shape (num_clients, class_count)."""
    out = np.zeros((spec.num_clients, ds.class_count), dtype=np.int64)
    for client, ix in enumerate(spec.client_indices):
        lbl, cnt = np.unique(ds.labels[ix], return_counts=True)
        out[client, lbl] = cnt
    return out


def write_label_histogram(spec: PartitionSpec, ds: Dataset, path) -> None:
    """CSV of (client_id, label, count) over the full client x label grid."""
    hist = label_histogram(spec, ds)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["client_id", "label", "count"])
        for client in range(hist.shape[0]):
            for lbl in range(hist.shape[1]):
                writer.writerow([client, lbl, int(hist[client, lbl])])
