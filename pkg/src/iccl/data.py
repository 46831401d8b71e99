"""Synthetic clustered datasets, two-view augmentation and a plain-text vector format."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DatasetFormatError(ValueError):
    """Malformed dataset file; the message names the offending line (and column)."""


@dataclass(frozen=True)
class LabeledDataset:
    """``samples`` is ``N x D``. Labels are for evaluation only, never for training losses.

    ``centers`` holds the generating class centers for synthetic data.
    """

    samples: np.ndarray
    labels: np.ndarray
    num_classes: int
    rng_seed: int | None = None
    centers: np.ndarray | None = None

    def __post_init__(self):
        if self.samples.ndim != 2:
            raise ValueError("samples must be a 2-D array")
        if self.labels.shape != (self.samples.shape[0],):
            raise ValueError("need exactly one label per sample")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        counts = np.bincount(self.labels, minlength=self.num_classes)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            raise ValueError(f"classes without samples: {empty.tolist()}")

    @property
    def dim(self):
        return self.samples.shape[1]

    def __len__(self):
        return self.samples.shape[0]

    def subset(self, idx):
        return LabeledDataset(self.samples[idx], self.labels[idx], self.num_classes, self.rng_seed, self.centers)


@dataclass(frozen=True)
class AugmentConfig:
    noise_sigma: float = 0.3
    mask_fraction: float = 0.2
    scale_jitter: float = 0.0

    def __post_init__(self):
        if self.noise_sigma < 0 or self.scale_jitter < 0:
            raise ValueError("noise_sigma and scale_jitter must be non-negative")
        if not 0 <= self.mask_fraction < 1:
            raise ValueError("mask_fraction must lie in [0, 1)")


def make_blobs(num_classes, dim, n_per_class, spread=3.0, seed=0, sigma=1.0, nuisance_dims=0, nuisance_sigma=0.0):
    """Gaussian clusters around ``spread``-scaled random unit directions.

    Class directions live in the first ``dim - nuisance_dims`` coordinates,
    where samples get isotropic noise of std ``sigma``. The last
    ``nuisance_dims`` coordinates carry class-independent noise of std
    ``nuisance_sigma``: a per-sample offset that moves every class center
    equally far away but dominates cosine geometry when large. Rows are
    shuffled; everything depends only on ``seed``.
    """
    if num_classes < 2 or dim < 2:
        raise ValueError("need at least 2 classes and 2 dimensions")
    if n_per_class < 1 or spread <= 0 or sigma < 0 or nuisance_sigma < 0:
        raise ValueError("n_per_class must be >= 1, spread > 0 and noise scales >= 0")
    if not 0 <= nuisance_dims <= dim - 2:
        raise ValueError("nuisance_dims must leave at least 2 signal dimensions")
    rng = np.random.default_rng(seed)
    sig = dim - nuisance_dims
    dirs = rng.standard_normal((num_classes, sig))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    centers = np.zeros((num_classes, dim))
    centers[:, :sig] = spread * dirs
    labels = np.repeat(np.arange(num_classes), n_per_class)
    scale = np.full(dim, float(sigma))
    scale[sig:] = nuisance_sigma
    samples = centers[labels] + scale * rng.standard_normal((labels.size, dim))
    order = rng.permutation(labels.size)
    return LabeledDataset(samples[order], labels[order], num_classes, seed, centers)


def class_centers(dataset):
    """Generating centers when known, otherwise per-class sample means."""
    if dataset.centers is not None:
        return dataset.centers
    return np.stack(
        [dataset.samples[dataset.labels == k].mean(axis=0) for k in range(dataset.num_classes)]
    )


def nearest_center_rate(dataset, cfg, seed=0):
    """Fraction of augmented views whose nearest class center is their own class."""
    rng = np.random.default_rng(seed)
    views = _augment(dataset.samples, cfg, rng)
    centers = class_centers(dataset)
    d2 = np.sum((views[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    return float(np.mean(d2.argmin(axis=1) == dataset.labels))


def _augment(x, cfg, rng):
    x = np.asarray(x, dtype=np.float64)
    lead = x.shape[:-1] + (1,)
    jitter = rng.uniform(-cfg.scale_jitter, cfg.scale_jitter, size=lead) if cfg.scale_jitter else 0.0
    out = x * (1.0 + jitter)
    if cfg.noise_sigma:
        out = out + cfg.noise_sigma * rng.standard_normal(x.shape)
    if cfg.mask_fraction:
        out = np.where(rng.random(x.shape) < cfg.mask_fraction, 0.0, out)
    return out


def two_views(sample, cfg, rng):
    """Two independent augmentations of one sample (or of every row of a batch)."""
    return _augment(sample, cfg, rng), _augment(sample, cfg, rng)


def save_vector_dataset(dataset, path):
    lines = [f"#dim={dataset.dim} classes={dataset.num_classes}"]
    for lab, row in zip(dataset.labels.tolist(), dataset.samples.tolist()):
        lines.append(",".join([str(lab)] + [repr(v) for v in row]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_header(line):
    fields = {}
    for tok in line[1:].split():
        key, sep, val = tok.partition("=")
        if not sep:
            raise DatasetFormatError(f"line 1: malformed header token {tok!r}")
        fields[key] = val
    try:
        return int(fields["dim"]), int(fields["classes"])
    except (KeyError, ValueError) as exc:
        raise DatasetFormatError("line 1: header must be '#dim=D classes=K'") from exc


def load_vector_dataset(path):
    """Read ``label,v1,...,vD`` lines under a ``#dim=D classes=K`` header."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise DatasetFormatError("line 1: missing '#dim=D classes=K' header")
    dim, k = _parse_header(lines[0])
    labels, rows = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != dim + 1:
            raise DatasetFormatError(
                f"line {lineno}: expected {dim + 1} fields (label + {dim} values), got {len(cells)}"
            )
        try:
            lab = int(cells[0])
        except ValueError as exc:
            raise DatasetFormatError(f"line {lineno}, column 1: bad label {cells[0]!r}") from exc
        if not 0 <= lab < k:
            raise DatasetFormatError(f"line {lineno}, column 1: unknown label {lab} (classes={k})")
        row = []
        for col, cell in enumerate(cells[1:], start=2):
            try:
                row.append(float(cell))
            except ValueError as exc:
                raise DatasetFormatError(f"line {lineno}, column {col}: bad number {cell!r}") from exc
        labels.append(lab)
        rows.append(row)
    samples = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    return LabeledDataset(samples, np.array(labels, dtype=np.int64), k)
