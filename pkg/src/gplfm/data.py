"""Containers for multi-channel time series with gaps."""

from __future__ import annotations

import datetime
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DataError, QueryError


class Sample(NamedTuple):
    t: float
    y: float


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float).reshape(-1)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Channel:
    """One output series: strictly increasing times (days) and values."""

    id: str
    times: np.ndarray
    values: np.ndarray
    name: str = ""
    unit: str = ""

    def __post_init__(self):
        if not self.id:
            raise DataError("channel id must be non-empty")
        times, values = _frozen(self.times), _frozen(self.values)
        if times.shape != values.shape:
            raise DataError(f"channel {self.id!r}: {times.size} times but {values.size} values")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
            raise DataError(f"channel {self.id!r}: non-finite sample")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise DataError(f"channel {self.id!r}: timestamps must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if not self.name:
            object.__setattr__(self, "name", self.id)

    def __len__(self):
        return self.times.size

    @property
    def samples(self) -> list[Sample]:
        return [Sample(float(t), float(y)) for t, y in zip(self.times, self.values)]

    def replace(self, times=None, values=None) -> "Channel":
        return Channel(
            self.id,
            self.times if times is None else times,
            self.values if values is None else values,
            self.name,
            self.unit,
        )

    def __eq__(self, other):
        if not isinstance(other, Channel):
            return NotImplemented
        return (
            self.id == other.id
            and self.name == other.name
            and self.unit == other.unit
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True, eq=False)
class TimeSeriesSet:
    """Ordered collection of ``Q`` channels.

    ``origin`` is the calendar date of day offset 0 when the data were
    ingested from ISO dates; it only affects how times are written back out.
    """

    channels: tuple
    origin: datetime.date | None = field(default=None)

    def __post_init__(self):
        channels = tuple(self.channels)
        if not channels:
            raise DataError("a TimeSeriesSet needs at least one channel")
        ids = [c.id for c in channels]
        if len(set(ids)) != len(ids):
            raise DataError(f"duplicate channel ids: {ids}")
        object.__setattr__(self, "channels", channels)

    @classmethod
    def from_arrays(cls, series: dict, origin=None) -> "TimeSeriesSet":
        """Build from ``{id: (times, values)}``, preserving dict order."""
        return cls(tuple(Channel(k, t, y) for k, (t, y) in series.items()), origin)

    @property
    def Q(self) -> int:
        return len(self.channels)

    @property
    def ids(self) -> list[str]:
        return [c.id for c in self.channels]

    @property
    def counts(self) -> list[int]:
        return [len(c) for c in self.channels]

    @property
    def n_total(self) -> int:
        return sum(self.counts)

    def index(self, channel_id: str) -> int:
        for i, c in enumerate(self.channels):
            if c.id == channel_id:
                return i
        raise QueryError(f"unknown channel {channel_id!r}; known: {self.ids}")

    def __getitem__(self, key) -> Channel:
        if isinstance(key, str):
            return self.channels[self.index(key)]
        return self.channels[key]

    def __iter__(self):
        return iter(self.channels)

    def stacked(self):
        """Concatenate all channels: ``(times, values, channel_index)``."""
        t = np.concatenate([c.times for c in self.channels])
        y = np.concatenate([c.values for c in self.channels])
        idx = np.concatenate([np.full(len(c), i) for i, c in enumerate(self.channels)])
        return t, y, idx

    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.counts)]).astype(int)

    def span(self) -> tuple[float, float]:
        t = np.concatenate([c.times for c in self.channels])
        if t.size == 0:
            return 0.0, 0.0
        return float(t.min()), float(t.max())

    def reordered(self, order: Sequence) -> "TimeSeriesSet":
        """Channels in a new order, given as ids or indices."""
        return TimeSeriesSet(tuple(self[k] for k in order), self.origin)

    def replace_channel(self, channel: Channel) -> "TimeSeriesSet":
        i = self.index(channel.id)
        chans = list(self.channels)
        chans[i] = channel
        return TimeSeriesSet(tuple(chans), self.origin)

    def masked(self, keep: dict) -> "TimeSeriesSet":
        """Drop samples; ``keep`` maps channel id to a boolean mask."""
        chans = []
        for c in self.channels:
            m = keep.get(c.id)
            chans.append(c if m is None else c.replace(c.times[m], c.values[m]))
        return TimeSeriesSet(tuple(chans), self.origin)

    def __eq__(self, other):
        if not isinstance(other, TimeSeriesSet):
            return NotImplemented
        return self.origin == other.origin and self.channels == other.channels

    def __repr__(self):
        body = ", ".join(f"{c.id}:{len(c)}" for c in self.channels)
        return f"TimeSeriesSet({body})"
