"""Dataset ingestion, standardization, splitting, and synthetic data.

CSV is the only ingestion format: comma separated, optional header row,
decimal-point floats, UTF-8.  Standardization statistics always come from
the training split alone and are applied to both splits.
"""

import csv
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "Dataset",
    "load_csv",
    "split_standardize",
    "synthetic_t_regression",
    "minibatch_indices",
]

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: list = field(default_factory=list)
    x_mean: Optional[np.ndarray] = None
    x_sd: Optional[np.ndarray] = None
    y_mean: Optional[float] = None
    y_sd: Optional[float] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if not np.isfinite(self.X).all() or not np.isfinite(self.y).all():
            raise ValueError("dataset contains non-finite entries")
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X and y row counts differ")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def unstandardize_y(self, y_std: np.ndarray) -> np.ndarray:
        if self.y_mean is None:
            return np.asarray(y_std)
        return np.asarray(y_std) * self.y_sd + self.y_mean


def load_csv(path: str, target_column, has_header: bool = True) -> Dataset:
    """Load a numeric CSV, extracting one column as the regression target.

    Rows containing non-numeric cells are dropped with a warning listing
    their (1-based) line numbers.  ``target_column`` is a header name when
    ``has_header`` is true, otherwise a 0-based column index.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise FileNotFoundError(f"cannot open dataset file {path!r}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path!r} is empty")

    if has_header:
        header = [h.strip() for h in rows[0]]
        body = rows[1:]
        first_line = 2
        if str(target_column) not in header:
            raise ValueError(f"target column {target_column!r} not found in header {header}")
        tgt = header.index(str(target_column))
    else:
        header = None
        body = rows
        first_line = 1
        tgt = int(target_column)
        if body and not _numeric_row(body[0]):
            raise ValueError("row 1 is not numeric; file appears to have a header (pass has_header=True)")

    n_cols = len(rows[0])
    good, bad_lines = [], []
    for i, row in enumerate(body):
        if len(row) == n_cols and _numeric_row(row):
            good.append([float(c) for c in row])
        else:
            bad_lines.append(first_line + i)
    if bad_lines:
        warnings.warn(f"dropped {len(bad_lines)} malformed row(s) at line(s) {bad_lines}")
    if not good:
        raise ValueError(f"no usable numeric rows in {path!r}")

    data = np.asarray(good, dtype=np.float64)
    y = data[:, tgt]
    X = np.delete(data, tgt, axis=1)
    if header is not None:
        names = [h for j, h in enumerate(header) if j != tgt]
    else:
        names = [f"x{j}" for j in range(X.shape[1])]
    return Dataset(X=X, y=y, feature_names=names)


def _numeric_row(row) -> bool:
    try:
        [float(c) for c in row]
        return True
    except ValueError:
        return False


def split_standardize(d: Dataset, train_frac: float, seed: int):
    """Shuffled split plus standardization with train-only statistics.

    Zero-variance feature columns (on the training split) are dropped with
    a warning.  Returns (train, test) Datasets carrying the statistics.
    """
    if not 0.0 < train_frac < 1.0:
        raise ValueError("train_frac must be in (0, 1)")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(d.n)
    n_train = int(round(train_frac * d.n))
    n_train = min(max(n_train, 1), d.n - 1)
    tr, te = perm[:n_train], perm[n_train:]

    Xtr, Xte = d.X[tr], d.X[te]
    ytr, yte = d.y[tr], d.y[te]

    x_mean = Xtr.mean(axis=0)
    x_sd = Xtr.std(axis=0)
    keep = x_sd > 0
    if not keep.all():
        dropped = [d.feature_names[j] if d.feature_names else str(j) for j in np.where(~keep)[0]]
        warnings.warn(f"dropped zero-variance column(s): {dropped}")
    x_mean, x_sd = x_mean[keep], x_sd[keep]
    names = [n for n, k in zip(d.feature_names, keep) if k] if d.feature_names else []
    y_mean = float(ytr.mean())
    y_sd = float(ytr.std())
    if y_sd == 0.0:
        raise ValueError("training targets are constant; nothing to regress")

    def std(X, y):
        return (X[:, keep] - x_mean) / x_sd, (y - y_mean) / y_sd

    Xtr_s, ytr_s = std(Xtr, ytr)
    Xte_s, yte_s = std(Xte, yte)
    train = Dataset(Xtr_s, ytr_s, names, x_mean, x_sd, y_mean, y_sd)
    test = Dataset(Xte_s, yte_s, names, x_mean, x_sd, y_mean, y_sd)
    return train, test


def synthetic_t_regression(N: int, D: int, noise_df: float, noise_scale: float, seed: int) -> Dataset:
    """Heavy-tailed regression benchmark: smooth signal plus Student-t noise."""
    if noise_df <= 2.0:
        raise ValueError("noise_df must exceed 2")
    rng = np.random.default_rng(seed)
    X = rng.uniform(-2.0, 2.0, size=(N, D))
    y = np.sin(3.0 * X[:, 0])
    if D >= 2:
        y = y + 0.5 * X[:, 1]
    if noise_scale != 0.0:
        y = y + noise_scale * rng.standard_t(noise_df, N)
    return Dataset(X=X, y=y, feature_names=[f"x{j}" for j in range(D)])


def minibatch_indices(N: int, B: int, seed: int, t: int) -> np.ndarray:
    """Uniform sample of B distinct indices, deterministic in (seed, t)."""
    if B < 1:
        raise ValueError("B must be >= 1")
    if B > N:
        warnings.warn(f"batch size {B} exceeds dataset size {N}; using all rows")
        return np.arange(N)
    rng = np.random.default_rng((seed, t))
    return rng.choice(N, size=B, replace=False)
