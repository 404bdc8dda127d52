"""Synthetic datasets, normalization, and CSV ingestion/export.

Datasets hold raw (unnormalized) sequences plus a normalization record
fitted on the training split only; models always see normalized values.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DataError
from .rng import RngStream


@dataclass(frozen=True)
class Normalization:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray) -> "Normalization":
        flat = values.reshape(-1, values.shape[-1])
        std = flat.std(axis=0)
        return cls(flat.mean(axis=0), np.where(std < 1e-12, 1.0, std))

    @classmethod
    def identity(cls, dim: int) -> "Normalization":
        return cls(np.zeros(dim), np.ones(dim))

    def tiled(self, s: int) -> tuple[np.ndarray, np.ndarray]:
        """Mean/std repeated for frame-stacked tokens."""
        return np.tile(self.mean, s), np.tile(self.std, s)

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def invert(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


@dataclass
class Dataset:
    """Uniform-length sequences (N, T, D), raw scale, with train-split norm."""
    sequences: np.ndarray
    norm: Normalization
    split: str = "train"

    @property
    def n(self) -> int:
        return self.sequences.shape[0]

    def normalized(self) -> np.ndarray:
        return self.norm.apply(self.sequences)


# ----------------------------------------------------------------------
# compositional cross trajectories

CROSS_CORNERS = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])


def make_cross_dataset(n: int, length: int = 24, noise: float = 0.015,
                       rng: RngStream | None = None, warp: float = 3.0) -> Dataset:
    """Corner-to-opposite-corner trajectories on the unit square.

    Two families (main diagonal and anti-diagonal), equal mix, random
    direction, linear paths traversed under a random monotone time warp
    (so pace varies but every path completes), with a mid-path wiggle that
    vanishes at the endpoints plus i.i.d. jitter of scale `noise`. Clipped
    to the square. warp <= 0 disables the reparameterization.
    """
    if n < 1:
        raise ContractError("need at least one trajectory")
    rng = rng or RngStream(0)
    if warp > 0:
        # Dirichlet(warp) increments: random pace, tau(0)=0, tau(end)=1
        k_shape = max(1, int(round(warp)))
        u = rng.uniform((n, length - 1, k_shape))
        gaps = -np.log(np.clip(u, 1e-12, None)).sum(axis=2)
        tau = np.concatenate([np.zeros((n, 1)), np.cumsum(gaps, axis=1)], axis=1)
        t = (tau / tau[:, -1:])[:, :, None]
    else:
        t = np.broadcast_to(np.linspace(0.0, 1.0, length)[None, :, None],
                            (n, length, 1)).copy()
    family = rng.integers(0, 2, (n,))              # 0: main diagonal, 1: anti
    flip = rng.integers(0, 2, (n,))
    start = np.where(family[:, None] == 0, CROSS_CORNERS[0], CROSS_CORNERS[2])
    end = np.where(family[:, None] == 0, CROSS_CORNERS[1], CROSS_CORNERS[3])
    swap = flip == 1
    start[swap], end[swap] = end[swap], start[swap].copy()
    base = start[:, None, :] * (1 - t) + end[:, None, :] * t
    envelope = np.sin(np.pi * t)                    # zero at both endpoints
    wiggle_phase = rng.uniform((n, 1, 2)) * 2 * np.pi
    wiggle = 0.05 * envelope * np.sin(2 * np.pi * t + wiggle_phase)
    jitter = noise * rng.normal((n, length, 2))
    values = np.clip(base + wiggle + jitter, 0.0, 1.0)
    return Dataset(values, Normalization.fit(values))


def cross_family(sequence: np.ndarray) -> int:
    """Classify a trajectory by which diagonal its endpoints lie on."""
    ends = np.stack([sequence[0], sequence[-1]])
    d_main = np.linalg.norm(ends[:, None] - CROSS_CORNERS[:2][None], axis=-1).min(axis=1).sum()
    d_anti = np.linalg.norm(ends[:, None] - CROSS_CORNERS[2:][None], axis=-1).min(axis=1).sum()
    return 0 if d_main <= d_anti else 1


# ----------------------------------------------------------------------
# seasonal multivariate series

@dataclass
class SeasonalData:
    train: np.ndarray               # (T_train, D) raw
    val: np.ndarray
    test: np.ndarray
    norm: Normalization             # fitted on train only

    def windows(self, split: str, length: int, stride: int = 1) -> np.ndarray:
        """Normalized sliding windows (N, length, D) from one split."""
        series = self.norm.apply(getattr(self, split))
        t = series.shape[0]
        if length > t:
            raise ContractError(f"window length {length} exceeds {split} length {t}")
        starts = range(0, t - length + 1, stride)
        return np.stack([series[s:s + length] for s in starts])


def make_seasonal_series(d: int, length: int, periods=(12, 24), rng: RngStream | None = None,
                         noise: float = 0.1, ar_coef: float = 0.8,
                         splits=(0.7, 0.15, 0.15)) -> SeasonalData:
    """Sums of sinusoids with random amplitudes/phases plus AR(1) noise,
    split by time into train/val/test."""
    if d < 1 or length < 1:
        raise ContractError("need d >= 1 and length >= 1")
    rng = rng or RngStream(0)
    t = np.arange(length)[None, :]
    series = np.zeros((d, length))
    for p in periods:
        amp = 0.5 + rng.uniform((d, 1))
        phase = rng.uniform((d, 1)) * 2 * np.pi
        series += amp * np.sin(2 * np.pi * t / p + phase)
    if noise > 0:
        innov = noise * rng.normal((d, length))
        ar = np.zeros((d, length))
        for i in range(length):
            ar[:, i] = (ar_coef * ar[:, i - 1] if i else 0.0) + innov[:, i]
        series += ar
    series = series.T                                   # (T, D)
    n_train = int(round(splits[0] * length))
    n_val = int(round(splits[1] * length))
    train = series[:n_train]
    val = series[n_train:n_train + n_val]
    test = series[n_train + n_val:]
    return SeasonalData(train, val, test, Normalization.fit(train))


# ----------------------------------------------------------------------
# simple linear-Gaussian processes for verification experiments

@dataclass(frozen=True)
class Ar1Process:
    """x_{t+1} = offset + coef @ x_t + chol @ w; x_1 ~ N(mu1, chol1 chol1')."""
    coef: np.ndarray
    offset: np.ndarray
    chol: np.ndarray
    mu1: np.ndarray
    chol1: np.ndarray

    @property
    def dim(self) -> int:
        return self.coef.shape[0]

    def sample(self, n: int, length: int, rng: RngStream) -> np.ndarray:
        d = self.dim
        out = np.zeros((n, length, d))
        w = rng.normal((n, length, d))
        out[:, 0] = self.mu1 + w[:, 0] @ self.chol1.T
        for t in range(1, length):
            out[:, t] = self.offset + out[:, t - 1] @ self.coef.T + w[:, t] @ self.chol.T
        return out

    def joint_moments(self, length: int) -> tuple[np.ndarray, np.ndarray]:
        """Mean and covariance of the stacked sequence (length*d,)."""
        d = self.dim
        mean = np.zeros((length, d))
        mean[0] = self.mu1
        for t in range(1, length):
            mean[t] = self.offset + self.coef @ mean[t - 1]
        cov = np.zeros((length, d, length, d))
        cov[0, :, 0, :] = self.chol1 @ self.chol1.T
        q = self.chol @ self.chol.T
        for t in range(1, length):
            cov[t, :, t, :] = self.coef @ cov[t - 1, :, t - 1, :] @ self.coef.T + q
            for s in range(t):
                cov[t, :, s, :] = self.coef @ cov[t - 1, :, s, :]
                cov[s, :, t, :] = cov[t, :, s, :].T
        return mean.reshape(-1), cov.reshape(length * d, length * d)


def default_ar1(dim: int = 2) -> Ar1Process:
    """A stationary rotating 2-D process with means away from zero.

    The first token is drawn from the stationary law, so every conditional
    is time-invariant; rotation keeps nontrivial cross-correlations.
    """
    rho, theta = 0.45, 0.35
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    coef = rho * rot
    target_mean = np.array([2.0, -1.2])
    offset = (np.eye(dim) - coef) @ target_mean
    sig = 0.25
    chol = sig * np.eye(dim)
    # rotation keeps the stationary covariance isotropic: sig^2/(1-rho^2) I
    chol1 = (sig / np.sqrt(1.0 - rho * rho)) * np.eye(dim)
    return Ar1Process(coef, offset, chol, target_mean, chol1)


def make_oscillator_dataset(n: int, length: int, rng: RngStream, freq: float = 0.35,
                            radius_range=(0.9, 1.1), noise: float = 0.02) -> Dataset:
    """Noisy circular oscillations: x_t = r [sin, cos](freq*t + phase)."""
    t = np.arange(length)[None, :]
    phase = rng.uniform((n, 1)) * 2 * np.pi
    radius = radius_range[0] + rng.uniform((n, 1)) * (radius_range[1] - radius_range[0])
    angle = freq * t + phase
    values = np.stack([radius * np.sin(angle), radius * np.cos(angle)], axis=-1)
    values += noise * rng.normal(values.shape)
    return Dataset(values, Normalization.fit(values))


# ----------------------------------------------------------------------
# CSV ingestion and export

def sliding_windows(series: np.ndarray, length: int, stride: int = 1) -> np.ndarray:
    """(N, length, D) windows over a (T, D) series."""
    series = np.asarray(series, dtype=np.float64)
    if length > series.shape[0]:
        raise ContractError(f"window length {length} exceeds series length {series.shape[0]}")
    starts = range(0, series.shape[0] - length + 1, stride)
    return np.stack([series[s:s + length] for s in starts])


@dataclass(frozen=True)
class CsvLayout:
    """Column layout: a time column, feature columns, optional sequence id.

    An empty feature_cols tuple means "every column except time and seq"."""
    time_col: str = "t"
    feature_cols: tuple = ()
    seq_col: str | None = "seq"


class _ChunkedRows:
    """Row accumulator backed by fixed-size float64 blocks; keeps ingestion
    memory close to the final array size instead of python-object scale."""

    def __init__(self, width: int, chunk: int):
        self.width = width
        self.chunk = chunk
        self.blocks: list[np.ndarray] = []
        self.fill = 0

    def append(self, row):
        if not self.blocks or self.fill == self.chunk:
            self.blocks.append(np.empty((self.chunk, self.width)))
            self.fill = 0
        self.blocks[-1][self.fill] = row
        self.fill += 1

    def __len__(self):
        return (len(self.blocks) - 1) * self.chunk + self.fill if self.blocks else 0

    def array(self) -> np.ndarray:
        if not self.blocks:
            return np.empty((0, self.width))
        parts = self.blocks[:-1] + [self.blocks[-1][:self.fill]]
        return np.concatenate(parts) if len(parts) > 1 else parts[0].copy()


def ingest_csv(path, layout: CsvLayout, chunk: int = 8192) -> Dataset:
    """Stream a CSV into a Dataset, one row at a time.

    Rows are grouped by the sequence column (all sequences must have equal
    length); values round-trip exactly through export_csv. Peak memory stays
    proportional to the parsed array, not to python-object row storage.
    """
    groups: dict[str, _ChunkedRows] = {}
    order: list = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty file")
        cols = {name: i for i, name in enumerate(header)}
        features = layout.feature_cols or tuple(
            c for c in header if c != layout.time_col and c != layout.seq_col)
        for name in (layout.time_col, *features):
            if name not in cols:
                raise DataError(f"missing column {name!r}")
        if layout.seq_col is not None and layout.seq_col not in cols:
            raise DataError(f"missing column {layout.seq_col!r}")
        feat_idx = [cols[c] for c in features]
        seq_idx = cols[layout.seq_col] if layout.seq_col is not None else None
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width:
                raise DataError(f"expected {width} cells, got {len(row)}", line=lineno)
            try:
                feats = [float(row[i]) for i in feat_idx]
            except ValueError as exc:
                raise DataError(f"non-numeric cell ({exc})", line=lineno) from None
            key = row[seq_idx] if seq_idx is not None else "0"
            buf = groups.get(key)
            if buf is None:
                buf = groups[key] = _ChunkedRows(len(feat_idx), chunk)
                order.append(key)
            buf.append(feats)
    if not groups:
        raise DataError("no data rows")
    lengths = {len(v) for v in groups.values()}
    if len(lengths) != 1:
        raise DataError(f"sequences have unequal lengths {sorted(lengths)}")
    values = np.stack([groups[k].array() for k in order])
    return Dataset(values, Normalization.fit(values))


def export_csv(path, dataset: Dataset, layout: CsvLayout) -> None:
    """Inverse of ingest_csv; float repr preserves values exactly."""
    seqs = dataset.sequences
    features = layout.feature_cols or tuple(f"f{i}" for i in range(seqs.shape[-1]))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ([layout.seq_col] if layout.seq_col else []) + [layout.time_col] + list(features)
        writer.writerow(header)
        for i, seq in enumerate(seqs):
            for t, row in enumerate(seq):
                prefix = [str(i)] if layout.seq_col else []
                writer.writerow(prefix + [str(t)] + [repr(float(v)) for v in row])
