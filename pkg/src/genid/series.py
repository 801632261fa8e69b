"""Uniformly sampled multichannel time series."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True, eq=False)
class MultiSeries:
    """A (T, C) block of samples with one label per column.

    ``data[t, c]`` is channel ``labels[c]`` at time ``t0 + t / sample_rate``.
    """

    sample_rate: float
    labels: tuple
    data: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2:
            raise InvalidArgumentError(f"series data must be 2-D, got shape {data.shape}")
        labels = tuple(str(s) for s in self.labels)
        if len(labels) != data.shape[1]:
            raise InvalidArgumentError(
                f"{len(labels)} labels for {data.shape[1]} channels"
            )
        if len(set(labels)) != len(labels):
            raise InvalidArgumentError(f"duplicate channel labels in {labels}")
        if not (np.isfinite(self.sample_rate) and self.sample_rate > 0):
            raise InvalidArgumentError("sample_rate must be positive and finite")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    @classmethod
    def from_channels(cls, sample_rate, channels, t0=0.0):
        """Build from an ordered mapping or sequence of ``(label, values)``."""
        items = list(channels.items()) if hasattr(channels, "items") else list(channels)
        if not items:
            return cls(sample_rate, (), np.zeros((0, 0)), t0)
        labels = [k for k, _ in items]
        cols = [np.asarray(v, dtype=float) for _, v in items]
        if len({c.shape for c in cols}) != 1:
            raise InvalidArgumentError("all channels must have equal length")
        return cls(sample_rate, tuple(labels), np.column_stack(cols), t0)

    def __len__(self):
        return self.data.shape[0]

    @property
    def dt(self):
        return 1.0 / self.sample_rate

    @property
    def times(self):
        return self.t0 + np.arange(len(self)) * self.dt

    def __getitem__(self, label):
        try:
            return self.data[:, self.labels.index(label)]
        except ValueError:
            raise KeyError(label) from None

    def select(self, labels: Sequence[str]) -> "MultiSeries":
        idx = [self.labels.index(s) for s in labels]
        return MultiSeries(self.sample_rate, tuple(labels), self.data[:, idx], self.t0)

    def window(self, start, stop=None) -> "MultiSeries":
        stop = len(self) if stop is None else stop
        return MultiSeries(
            self.sample_rate, self.labels, self.data[start:stop], self.t0 + start * self.dt
        )

    def with_data(self, data, labels=None, t0=None) -> "MultiSeries":
        return MultiSeries(
            self.sample_rate,
            self.labels if labels is None else labels,
            data,
            self.t0 if t0 is None else t0,
        )

    def equals(self, other, tol=0.0):
        if not isinstance(other, MultiSeries):
            return False
        if self.labels != other.labels or self.data.shape != other.data.shape:
            return False
        if self.sample_rate != other.sample_rate:
            return False
        if tol == 0.0:
            return bool(np.array_equal(self.data, other.data))
        return bool(np.allclose(self.data, other.data, rtol=0.0, atol=tol))
