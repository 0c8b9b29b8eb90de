"""Multiscale representation store: encode long-history backcast windows at
daily/weekly/monthly/quarterly scales and persist the vectors in a checksummed
binary file keyed by (series_id, anchor timestamp).

Long windows are average-pooled down to the shortest scale's length before
encoding (one coarse step per pool block, blocks aligned to the window end),
so every scale enters the encoder at the same sequence length and quarterly
windows stay tractable.  Pooling only ever looks backward, preserving the
no-leakage guarantee.
"""

from __future__ import annotations

import struct
import zlib
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .data import TimeSeries
from .encoder import Encoder
from .errors import ArtifactError, ContractViolation, DataError

_MAGIC = b"FCRS"
_VERSION = 1


@dataclass(frozen=True)
class ScaleSpec:
    name: str
    length: int  # backcast length in timesteps

    def __post_init__(self):
        if self.length < 4:
            raise ContractViolation(f"scale {self.name!r}: length must be >= 4")


def default_scales(stride_seconds: int) -> list[ScaleSpec]:
    """Daily/weekly/monthly/quarterly backcast lengths for a given stride."""
    day = round(86400 / stride_seconds)
    if day < 4:
        raise ContractViolation(
            f"stride {stride_seconds}s leaves fewer than 4 steps per day; "
            "supply an explicit scale table"
        )
    return [ScaleSpec("daily", day), ScaleSpec("weekly", 7 * day),
            ScaleSpec("monthly", 30 * day), ScaleSpec("quarterly", 90 * day)]


@dataclass(frozen=True)
class MultiscaleRepresentation:
    """Final-timestamp representation of each scale's window ending at anchor."""

    series_id: str
    anchor: int  # epoch-seconds timestamp
    vectors: dict[str, np.ndarray]
    dropped: tuple[str, ...] = ()


def encode_multiscale(encoder: Encoder, series: TimeSeries, anchor_ts: int,
                      scales: list[ScaleSpec],
                      allow_partial: bool = False) -> MultiscaleRepresentation:
    """Encode the windows (anchor - length, anchor] for every scale.

    With allow_partial, scales whose window overruns the available history are
    dropped (recorded in `dropped`); otherwise any overrun is an error naming
    the first anchor that would satisfy every scale.
    """
    idx = int(np.searchsorted(series.timestamps, anchor_ts))
    if idx >= series.length or series.timestamps[idx] != anchor_ts:
        raise ContractViolation(
            f"anchor {anchor_ts} is not a timestamp of series {series.series_id!r}"
        )
    base = min(s.length for s in scales)
    vectors: dict[str, np.ndarray] = {}
    dropped: list[str] = []
    for scale in scales:
        pool = max(1, scale.length // base)
        used = pool * base
        start = idx - used + 1
        if start < 0:
            if allow_partial:
                dropped.append(scale.name)
                continue
            raise DataError(_insufficient_history_message(series, used, scale))
        window = series.values[start:idx + 1]
        pooled = window.reshape(base, pool, series.n_channels).mean(axis=1)
        vectors[scale.name] = encoder.summary(pooled)
    if not vectors:
        longest = max(s.length for s in scales)
        used = max(1, longest // base) * base
        raise DataError(_insufficient_history_message(series, used, scales[-1]))
    return MultiscaleRepresentation(series.series_id, int(anchor_ts), vectors,
                                    tuple(dropped))


def _insufficient_history_message(series: TimeSeries, needed: int,
                                  scale: ScaleSpec) -> str:
    if series.length >= needed:
        first_ok = int(series.timestamps[needed - 1])
        hint = f"first satisfiable anchor is {first_ok}"
    else:
        hint = f"series has only {series.length} points, {needed} needed"
    return (f"insufficient history for scale {scale.name!r} "
            f"(window {needed}) in series {series.series_id!r}; {hint}")


class ReprStore:
    """In-memory index of multiscale representations with binary persistence.

    Concurrency: many readers or one writer; the index is only mutated by
    put() and load().
    """

    def __init__(self, dim: int, scales: list[ScaleSpec]):
        self.dim = int(dim)
        self.scales = list(scales)
        self._records: dict[tuple[str, int], MultiscaleRepresentation] = {}
        self._anchors: dict[str, list[int]] = {}

    def __len__(self) -> int:
        return len(self._records)

    def put(self, rep: MultiscaleRepresentation) -> None:
        names = {s.name for s in self.scales}
        for name, vec in rep.vectors.items():
            if name not in names:
                raise ArtifactError(f"schema error: unknown scale {name!r}")
            if vec.shape != (self.dim,):
                raise ArtifactError(
                    f"schema error: vector for {name!r} has shape {vec.shape}, "
                    f"store expects ({self.dim},)"
                )
        key = (rep.series_id, int(rep.anchor))
        fresh = key not in self._records
        self._records[key] = rep
        if fresh:
            anchors = self._anchors.setdefault(rep.series_id, [])
            pos = bisect_right(anchors, rep.anchor)
            anchors.insert(pos, int(rep.anchor))

    def get(self, series_id: str, anchor: int) -> MultiscaleRepresentation | None:
        rep = self._records.get((series_id, int(anchor)))
        if rep is None:
            return None
        return MultiscaleRepresentation(
            rep.series_id, rep.anchor,
            {k: v.copy() for k, v in rep.vectors.items()}, rep.dropped,
        )

    def nearest_anchor(self, series_id: str, t: int) -> int | None:
        """Greatest stored anchor <= t; never an anchor after t."""
        anchors = self._anchors.get(series_id)
        if not anchors:
            return None
        pos = bisect_right(anchors, int(t))
        return anchors[pos - 1] if pos else None

    def records(self):
        for key in sorted(self._records):
            yield self._records[key]

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        scale_names = [s.name for s in self.scales]
        blob = bytearray()
        blob += _MAGIC
        blob += struct.pack("<HIH", _VERSION, self.dim, len(self.scales))
        for s in self.scales:
            encoded = s.name.encode()
            blob += struct.pack("<H", len(encoded)) + encoded
            blob += struct.pack("<I", s.length)
        blob += struct.pack("<Q", len(self._records))
        for rep in self.records():
            body = bytearray()
            sid = rep.series_id.encode()
            body += struct.pack("<H", len(sid)) + sid
            body += struct.pack("<q", rep.anchor)
            body += struct.pack("<B", len(rep.vectors))
            for name in scale_names:
                if name not in rep.vectors:
                    continue
                body += struct.pack("<B", scale_names.index(name))
                body += rep.vectors[name].astype("<f8").tobytes()
            body += struct.pack("<B", len(rep.dropped))
            for name in rep.dropped:
                body += struct.pack("<B", scale_names.index(name))
            blob += struct.pack("<I", len(body)) + body
            blob += struct.pack("<I", zlib.crc32(bytes(body)))
        with open(path, "wb") as fh:
            fh.write(bytes(blob))

    @classmethod
    def load(cls, path) -> "ReprStore":
        try:
            with open(path, "rb") as fh:
                raw = fh.read()
        except OSError as exc:
            raise ArtifactError(f"cannot open store file {path}: {exc}") from None
        reader = _Reader(raw, path)
        if reader.take(4) != _MAGIC:
            raise ArtifactError(f"{path}: not a representation store file")
        version, dim, n_scales = reader.unpack("<HIH")
        if version != _VERSION:
            raise ArtifactError(
                f"{path}: store format version {version} unsupported "
                f"(expected {_VERSION}); re-run the encode stage"
            )
        scales = []
        for _ in range(n_scales):
            (name_len,) = reader.unpack("<H")
            name = reader.take(name_len).decode()
            (length,) = reader.unpack("<I")
            scales.append(ScaleSpec(name, length))
        store = cls(dim, scales)
        (n_records,) = reader.unpack("<Q")
        names = [s.name for s in scales]
        for i in range(n_records):
            (body_len,) = reader.unpack("<I")
            body = reader.take(body_len)
            (crc,) = reader.unpack("<I")
            if zlib.crc32(body) != crc:
                raise ArtifactError(f"{path}: record {i} failed its checksum")
            store.put(_parse_record(body, names, dim, path))
        if reader.remaining():
            raise ArtifactError(f"{path}: {reader.remaining()} trailing bytes")
        return store


def _parse_record(body: bytes, names: list[str], dim: int, path) -> MultiscaleRepresentation:
    reader = _Reader(body, path)
    (sid_len,) = reader.unpack("<H")
    sid = reader.take(sid_len).decode()
    (anchor,) = reader.unpack("<q")
    (n_vec,) = reader.unpack("<B")
    vectors = {}
    for _ in range(n_vec):
        (scale_idx,) = reader.unpack("<B")
        vec = np.frombuffer(reader.take(dim * 8), dtype="<f8").copy()
        vectors[names[scale_idx]] = vec
    (n_dropped,) = reader.unpack("<B")
    dropped = tuple(names[reader.unpack("<B")[0]] for _ in range(n_dropped))
    return MultiscaleRepresentation(sid, anchor, vectors, dropped)


@dataclass
class _Reader:
    raw: bytes
    path: object
    pos: int = field(default=0)

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise ArtifactError(f"{self.path}: truncated store file")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def remaining(self) -> int:
        return len(self.raw) - self.pos
