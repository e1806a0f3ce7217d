"""CSV time series in and out.

Two layouts are read: *long* (one ``time,channel,value`` row per sample)
and *wide* (a time column plus one column per channel).  Times are either
ISO-8601 dates / datetimes or real day offsets; dates become day offsets
from the earliest timestamp, which is kept as ``TimeSeriesSet.origin`` so
that exports write dates back.
"""

from __future__ import annotations

import csv
import datetime
import io
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .data import Channel, TimeSeriesSet
from .errors import ConfigError, DataError

_EMPTY = {"", "na", "nan", "null", "none"}


@dataclass(frozen=True)
class CsvSchema:
    """How to read a file.

    ``missing`` is ``"empty"`` (only blank / NA cells are gaps),
    ``"negative"`` (blank cells and negative values) or a number used as a
    sentinel.  ``columns`` restricts a wide file to some channels.
    """

    layout: str = "long"
    time_column: str = "time"
    channel_column: str = "channel"
    value_column: str = "value"
    columns: tuple | None = None
    missing: object = "negative"

    def __post_init__(self):
        if self.layout not in ("long", "wide"):
            raise ConfigError(f"layout must be 'long' or 'wide', got {self.layout!r}")
        if not (self.missing in ("empty", "negative") or isinstance(self.missing, (int, float))):
            raise ConfigError(f"missing policy must be 'empty', 'negative' or a number, got {self.missing!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "CsvSchema":
        d = dict(d)
        if d.get("columns") is not None:
            d["columns"] = tuple(d["columns"])
        return cls(**d)

    def is_missing(self, value: float) -> bool:
        if self.missing == "negative":
            return value < 0
        if self.missing == "empty":
            return False
        return value == float(self.missing)


def _parse_time(text, line):
    text = text.strip()
    try:
        return float(text), False
    except ValueError:
        pass
    try:
        if len(text) == 10:
            d = datetime.date.fromisoformat(text)
            return datetime.datetime(d.year, d.month, d.day), True
        return datetime.datetime.fromisoformat(text), True
    except ValueError:
        raise DataError(f"cannot parse time {text!r}", line) from None


def _parse_value(text, line, column):
    if text.strip().lower() in _EMPTY:
        return None
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"cannot parse value {text!r} in column {column!r}", line) from None
    if not np.isfinite(v):
        raise DataError(f"non-finite value {text!r} in column {column!r}", line)
    return v


def _records(fh, schema: CsvSchema):
    """Yield ``(line, time_text, channel, value_text)``."""
    reader = csv.reader(fh)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError("empty file", 1) from None
    if schema.time_column not in header:
        raise DataError(f"missing time column {schema.time_column!r}", 1)
    ti = header.index(schema.time_column)
    if schema.layout == "long":
        for name in (schema.channel_column, schema.value_column):
            if name not in header:
                raise DataError(f"missing column {name!r}", 1)
        ci, vi = header.index(schema.channel_column), header.index(schema.value_column)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} fields, got {len(row)}", line)
            if not row[ci].strip():
                raise DataError("empty channel id", line)
            yield line, row[ti], row[ci].strip(), row[vi]
    else:
        cols = [h for h in header if h != schema.time_column] if schema.columns is None else list(schema.columns)
        for c in cols:
            if c not in header:
                raise DataError(f"missing channel column {c!r}", 1)
        idx = [(c, header.index(c)) for c in cols]
        yield from ((0, None, c, None) for c in cols)  # declares channel order
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} fields, got {len(row)}", line)
            for c, i in idx:
                yield line, row[ti], c, row[i]


def read_csv(fh, schema: CsvSchema | None = None, origin=None) -> TimeSeriesSet:
    """Parse an open text stream; see :func:`ingest`."""
    schema = schema or CsvSchema()
    order, rows = [], []
    kinds = set()
    for line, ttext, ch, vtext in _records(fh, schema):
        if ch not in order:
            order.append(ch)
        if ttext is None:
            continue
        t, is_date = _parse_time(ttext, line)
        kinds.add(is_date)
        if len(kinds) > 1:
            raise DataError("mixed date and numeric times", line)
        v = _parse_value(vtext, line, ch)
        rows.append((line, ch, t, v))
    if not order:
        raise DataError("no channels found", 1)
    dates = kinds == {True}
    if dates:
        first = min(r[2] for r in rows)
        if origin is None:
            origin = first.date() if first == datetime.datetime(first.year, first.month, first.day) else first
        base = origin if isinstance(origin, datetime.datetime) else datetime.datetime(origin.year, origin.month, origin.day)
        rows = [(ln, ch, (t - base).total_seconds() / 86400.0, v) for ln, ch, t, v in rows]
    elif origin is not None:
        raise DataError("an origin only applies to date-valued times", 1)
    per = {c: {} for c in order}
    for line, ch, t, v in rows:
        if t in per[ch]:
            raise DataError(f"duplicate timestamp {t:g} for channel {ch!r}", line)
        per[ch][t] = v
    chans = []
    for c in order:
        items = sorted((t, v) for t, v in per[c].items() if v is not None and not schema.is_missing(v))
        t = np.array([a for a, _ in items], float)
        y = np.array([b for _, b in items], float)
        chans.append(Channel(c, t, y))
    return TimeSeriesSet(tuple(chans), origin if dates else None)


def ingest(path, schema: CsvSchema | None = None, origin=None) -> TimeSeriesSet:
    """Read a CSV file into a :class:`TimeSeriesSet`.

    Samples matching the missing policy are dropped, channels are sorted in
    time and duplicate ``(channel, time)`` pairs are rejected.  Parse errors
    carry the 1-based line number.
    """
    try:
        with open(path, newline="") as fh:
            return read_csv(fh, schema, origin)
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None


def format_time(t: float, origin) -> str:
    if origin is None:
        return repr(float(t))
    base = origin if isinstance(origin, datetime.datetime) else datetime.datetime(origin.year, origin.month, origin.day)
    when = base + datetime.timedelta(days=float(t))
    if when.hour == when.minute == when.second == when.microsecond == 0 and not isinstance(origin, datetime.datetime):
        return when.date().isoformat()
    return when.isoformat()


def atomic_write(path, text: str):
    """Write via a temporary file in the same directory and rename over ``path``."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=d)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def to_csv(data: TimeSeriesSet) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time", "channel", "value"])
    for c in data.channels:
        for t, y in zip(c.times, c.values):
            w.writerow([format_time(t, data.origin), c.id, repr(float(y))])
    return buf.getvalue()


def export(data: TimeSeriesSet, path):
    """Long-format CSV that :func:`ingest` reads back to an equal set.

    Channels with no samples cannot be represented and are dropped.
    """
    atomic_write(path, to_csv(data))
