"""Synthetic mixtures, vector "views", CSV I/O and batching."""
import csv
from dataclasses import dataclass

import numpy as np


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) < 1:
            raise ValueError("features must be a non-empty 2-D matrix")
        if len(self.labels) != len(self.features):
            raise ValueError("one label per row required")
        if np.any(self.labels < -1) or np.any(self.labels >= self.class_count):
            raise ValueError(f"labels must lie in {{-1, 0..{self.class_count - 1}}}")

    def __len__(self):
        return len(self.features)

    @property
    def dim(self):
        return self.features.shape[1]


@dataclass(frozen=True)
class ViewConfig:
    noise_sigma: float = 0.5
    mask_prob: float = 0.1
    scale_jitter: float = 0.1

    def __post_init__(self):
        if self.noise_sigma < 0 or self.scale_jitter < 0:
            raise ValueError("noise and scale jitter must be nonnegative")
        if not 0.0 <= self.mask_prob < 1.0:
            raise ValueError("mask_prob must lie in [0, 1)")


def gen_mixture(C: int, D: int, n_per_class: int, separation: float, seed: int = 0) -> Dataset:
    """Balanced isotropic Gaussian mixture.

    Class means are random directions scaled to norm ``separation``;
    within-class noise is standard normal. Rows are grouped by class.
    """
    if C < 2 or D < 2 or n_per_class < 1 or not separation > 0:
        raise ValueError(f"invalid mixture parameters C={C}, D={D}, n={n_per_class}, sep={separation}")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((C, D))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)
    labels = np.repeat(np.arange(C), n_per_class)
    X = means[labels] + rng.standard_normal((C * n_per_class, D))
    ds = Dataset(X, labels, C)
    ds.means = means
    return ds


def make_views(x, cfg: ViewConfig, rng):
    """Two independent stochastic transforms of ``x`` (a vector or a batch).

    Each view: add N(0, sigma^2) noise, zero each coordinate with probability
    ``mask_prob``, multiply each sample by ``1 + u``, u ~ U(-j, j).
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    x = np.asarray(x, dtype=np.float64)
    return _view(x, cfg, rng), _view(x, cfg, rng)


def _view(x, cfg, rng):
    v = x.copy()
    if cfg.noise_sigma > 0:
        v += cfg.noise_sigma * rng.standard_normal(x.shape)
    if cfg.mask_prob > 0:
        v *= rng.random(x.shape) >= cfg.mask_prob
    if cfg.scale_jitter > 0:
        shape = x.shape[:-1] + (1,)
        v *= 1.0 + rng.uniform(-cfg.scale_jitter, cfg.scale_jitter, size=shape)
    return v


def batches(n: int, batch_size: int, rng):
    """Shuffled full batches for one epoch; the short remainder is dropped."""
    if batch_size > n:
        raise ValueError(f"batch size {batch_size} exceeds dataset size {n}")
    perm = rng.permutation(n)
    for i in range(n // batch_size):
        yield perm[i * batch_size:(i + 1) * batch_size]


def sample_labeled(ds: Dataset, n_per_class: int, seed=0):
    """Pick ``n_per_class`` labeled indices per class, without replacement."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = []
    for c in range(ds.class_count):
        pool = np.flatnonzero(ds.labels == c)
        if len(pool) < n_per_class:
            raise ValueError(f"class {c} has {len(pool)} labeled samples, need {n_per_class}")
        out.append(np.sort(rng.choice(pool, size=n_per_class, replace=False)))
    return np.concatenate(out) if out else np.array([], dtype=np.int64)


def save_csv(ds: Dataset, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{j}" for j in range(ds.dim)] + ["label"])
        for row, y in zip(ds.features, ds.labels):
            # repr round-trips float64 exactly
            w.writerow([repr(float(v)) for v in row] + [int(y)])


def load_csv(path, class_count=None) -> Dataset:
    """Read ``f0,...,f{D-1},label`` rows; ``label = -1`` marks unlabeled."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        D = len(header) - 1
        if D < 1 or header[-1].strip() != "label":
            raise ValueError(f"{path}: header must be f0,...,f{{D-1}},label")
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != D + 1:
                raise ValueError(f"{path}:{lineno}: expected {D + 1} fields, got {len(row)}")
            try:
                feats.append([float(v) for v in row[:-1]])
                labels.append(int(row[-1]))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if not feats:
        raise ValueError(f"{path}: no data rows")
    labels = np.asarray(labels, dtype=np.int64)
    if class_count is None:
        class_count = max(int(labels.max()) + 1, 1)
    return Dataset(np.asarray(feats), labels, class_count)
