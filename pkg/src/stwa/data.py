"""Series storage, CSV I/O, normalization, splitting and windowing."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .stgen import ConfigError

TICKS_PER_DAY = 288  # 5-minute sampling


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class SeriesStore:
    values: np.ndarray  # (N, T, F)
    sensor_ids: list
    interval_minutes: int = 5

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ValueError(f"values must be (N, T, F), got shape {self.values.shape}")
        if len(self.sensor_ids) != self.values.shape[0]:
            raise ValueError("one sensor id per series is required")
        if np.isnan(self.values).any():
            raise ValueError("store contains NaN; apply a gap policy first")
        self.values.setflags(write=False)

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def n_sensors(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]


def fill_gaps(values: np.ndarray) -> np.ndarray:
    """Forward-fill along time, then back-fill any leading gap."""
    out = values.copy()
    n, t, f = out.shape
    for i in range(n):
        for j in range(f):
            col = out[i, :, j]
            mask = np.isnan(col)
            if not mask.any():
                continue
            if mask.all():
                raise ParseError(f"series {i} has no observed values")
            idx = np.where(~mask, np.arange(t), 0)
            np.maximum.accumulate(idx, out=idx)
            col[:] = col[idx]
            first = np.argmax(~np.isnan(col))
            col[:first] = col[first]
    return out


def load_csv(path, gap_policy: str = "ffill", interval_minutes: int = 5) -> SeriesStore:
    """Read a header of sensor ids followed by one row per timestamp (F=1)."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        rows = []
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"{path}:{reader.line_num}: expected {len(header)} columns, got {len(row)}"
                )
            try:
                rows.append([float(c) if c.strip() else math.nan for c in row])
            except ValueError:
                raise ParseError(f"{path}:{reader.line_num}: non-numeric cell in {row!r}") from None
    if not rows:
        raise ParseError(f"{path}: no timestamps")
    values = np.array(rows, dtype=np.float64).T[:, :, None]
    if np.isnan(values).any():
        if gap_policy != "ffill":
            raise ParseError(f"{path}: missing values and gap policy {gap_policy!r}")
        values = fill_gaps(values)
    return SeriesStore(values, [h.strip() for h in header], interval_minutes)


def save_csv(store: SeriesStore, path) -> None:
    if store.values.shape[2] != 1:
        raise ValueError("CSV export supports F=1 only")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(store.sensor_ids)
        for row in store.values[:, :, 0].T:
            w.writerow([repr(float(v)) for v in row])


def synth_traffic(N: int, T: int, seed: int = 0, noise: float = 5.0) -> SeriesStore:
    """Synthetic flows with location-specific daily cycles and a weekend dip.

    Each sensor gets its own phase and amplitude; weekends (days 5 and 6 of
    every week) scale the daily swing by a sensor-specific factor.
    """
    if N < 1 or T < 1:
        raise ValueError(f"N and T must be >= 1, got N={N}, T={T}")
    rng = np.random.default_rng(seed)
    t = np.arange(T)
    phase = rng.uniform(0, 2 * np.pi, N)
    amp = rng.uniform(50, 150, N)
    base = rng.uniform(200, 300, N)
    weekend_factor = rng.uniform(0.3, 0.7, N)
    weekend = ((t // TICKS_PER_DAY) % 7) >= 5
    values = np.empty((N, T))
    for i in range(N):
        swing = np.where(weekend, weekend_factor[i], 1.0) * amp[i]
        daily = np.sin(2 * np.pi * t / TICKS_PER_DAY + phase[i])
        values[i] = base[i] + swing * daily + noise * rng.standard_normal(T)
    return SeriesStore(values[:, :, None], [f"s{i}" for i in range(N)])


@dataclass(frozen=True)
class Split:
    name: str
    values: np.ndarray  # (N, T_split, F)
    start: int  # absolute index of the first timestamp

    def __len__(self) -> int:
        return self.values.shape[1]


def chronological_split(store: SeriesStore, ratios=(0.6, 0.2, 0.2),
                        min_length: int | None = None) -> tuple[Split, Split, Split]:
    if abs(sum(ratios) - 1.0) > 1e-9 or len(ratios) != 3:
        raise ConfigError(f"split ratios must be three values summing to 1, got {ratios}")
    T_ = store.length
    n_train = int(round(ratios[0] * T_))
    n_val = int(round(ratios[1] * T_))
    bounds = [(0, n_train), (n_train, n_train + n_val), (n_train + n_val, T_)]
    out = []
    for name, (a, b) in zip(("train", "val", "test"), bounds):
        if min_length is not None and b - a < min_length:
            raise ConfigError(f"{name} split has {b - a} timestamps, needs at least {min_length}")
        out.append(Split(name, store.values[:, a:b], a))
    return tuple(out)


@dataclass
class Normalizer:
    """Per-sensor z-score statistics fitted on the training split."""

    mean: np.ndarray  # (N, F)
    std: np.ndarray  # (N, F)

    STD_FLOOR = 1e-8

    @classmethod
    def fit(cls, split: Split) -> "Normalizer":
        if split.name != "train":
            raise ValueError(f"normalizer must be fitted on the train split, got {split.name!r}")
        mean = split.values.mean(axis=1)
        std = np.maximum(split.values.std(axis=1), cls.STD_FLOOR)
        return cls(mean, std)

    def normalize(self, values: np.ndarray) -> np.ndarray:
        """``values`` is ``(..., N, T, F)``."""
        return (values - self.mean[:, None, :]) / self.std[:, None, :]

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        return values * self.std[:, None, :] + self.mean[:, None, :]

    denormalize_windows = denormalize

    def apply(self, split: Split) -> Split:
        return Split(split.name, self.normalize(split.values), split.start)


@dataclass(frozen=True)
class Windows:
    x: np.ndarray  # (M, N, H, F)
    y: np.ndarray  # (M, N, U, F)

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, i):
        return self.x[i], self.y[i]


def make_windows(split: Split, H: int, U: int) -> Windows:
    """Stride-1 (input, target) pairs fully inside ``split``."""
    n, length, f = split.values.shape
    if length < H + U:
        raise ConfigError(f"{split.name} split length {length} < H+U={H + U}")
    count = length - H - U + 1
    v = split.values
    x = np.stack([v[:, s:s + H] for s in range(count)])
    y = np.stack([v[:, s + H:s + H + U] for s in range(count)])
    return Windows(x, y)


@dataclass
class Dataset:
    train: Windows
    val: Windows
    test: Windows
    normalizer: Normalizer
    sensor_ids: list = field(default_factory=list)


def prepare(store: SeriesStore, H: int, U: int, ratios=(0.6, 0.2, 0.2)) -> Dataset:
    train, val, test = chronological_split(store, ratios, min_length=H + U)
    norm = Normalizer.fit(train)
    wins = [make_windows(norm.apply(s), H, U) for s in (train, val, test)]
    return Dataset(*wins, normalizer=norm, sensor_ids=list(store.sensor_ids))
