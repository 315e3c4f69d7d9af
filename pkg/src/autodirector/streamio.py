"""Feature stream files and edit decision lists.

A stream file is a single ASCII header line ``SDFS1 K T D`` followed by
T records of K*D little-endian float32 values, one record per second.
An EDL file is one text line per output segment.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import ContractViolation, DataError, StreamError

STREAM_MAGIC = "SDFS1"


def write_stream(path, features: np.ndarray) -> None:
    """Write a (T, K, D) feature array as a stream file."""
    features = np.asarray(features, dtype=np.float32)
    if features.ndim != 3:
        raise ContractViolation("stream features must be (T, K, D)")
    t, k, d = features.shape
    with open(path, "wb") as f:
        f.write(f"{STREAM_MAGIC} {k} {t} {d}\n".encode("ascii"))
        f.write(np.ascontiguousarray(features, dtype="<f4").tobytes())


@dataclass
class StreamSource:
    """Pull-based reader over a stream file."""

    path: str
    num_views: int = field(init=False)
    total_seconds: int = field(init=False)
    channels: int = field(init=False)

    def __post_init__(self):
        with open(self.path, "rb") as f:
            header = f.readline().decode("ascii", errors="replace").strip()
        parts = header.split()
        if len(parts) != 4 or parts[0] != STREAM_MAGIC:
            raise StreamError(f"{self.path}: bad stream header {header!r}")
        try:
            self.num_views, self.total_seconds, self.channels = (
                int(parts[1]), int(parts[2]), int(parts[3]))
        except ValueError:
            raise StreamError(f"{self.path}: non-integer header field") from None
        if min(self.num_views, self.total_seconds, self.channels) < 1:
            raise StreamError(f"{self.path}: degenerate stream dimensions")

    def iter_seconds(self) -> Iterator[np.ndarray]:
        """Yield one (K, D) float32 record per second."""
        record = self.num_views * self.channels * 4
        with open(self.path, "rb") as f:
            f.readline()
            for t in range(self.total_seconds):
                raw = f.read(record)
                if len(raw) != record:
                    raise StreamError(
                        f"{self.path}: truncated at second {t}")
                yield np.frombuffer(raw, dtype="<f4").reshape(
                    self.num_views, self.channels).astype(np.float32)

    def read_all(self) -> np.ndarray:
        """Load the whole stream as a (T, K, D) array."""
        return np.stack(list(self.iter_seconds()), axis=0)


# ------------------------------------------------------------------- EDL


@dataclass
class EdlEntry:
    """One output segment: where it plays, what it shows, how fast."""

    out_start: float
    out_end: float
    view: int
    src_start: float
    src_end: float
    speed: float
    tags: tuple[str, ...] = ()

    def __post_init__(self):
        if self.out_end <= self.out_start:
            raise ContractViolation("EDL entry with non-positive duration")
        if self.speed <= 0:
            raise ContractViolation("EDL entry with non-positive speed")
        expect = self.speed * (self.out_end - self.out_start)
        if abs((self.src_end - self.src_start) - expect) > 2e-3:
            raise ContractViolation(
                "source span must equal speed times output span")


@dataclass
class EditDecisionList:
    entries: list[EdlEntry] = field(default_factory=list)

    def validate(self, span_start: float, span_end: float,
                 tol: float = 1e-6) -> None:
        """Check the timeline is sorted, gap free and covers the span."""
        if not self.entries:
            raise ContractViolation("empty timeline")
        if abs(self.entries[0].out_start - span_start) > tol:
            raise ContractViolation("timeline does not start at span start")
        if abs(self.entries[-1].out_end - span_end) > tol:
            raise ContractViolation("timeline does not end at span end")
        for prev, cur in zip(self.entries, self.entries[1:]):
            if abs(cur.out_start - prev.out_end) > tol:
                raise ContractViolation(
                    f"gap or overlap at {prev.out_end}..{cur.out_start}")


def format_edl_line(e: EdlEntry) -> str:
    tags = ",".join(e.tags) if e.tags else "-"
    return (f"{e.out_start:.3f} {e.out_end:.3f} {e.view} "
            f"{e.src_start:.3f} {e.src_end:.3f} {e.speed:.3f} {tags}")


def write_edl(path, edl: EditDecisionList) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for e in edl.entries:
            f.write(format_edl_line(e) + "\n")


def read_edl(path) -> EditDecisionList:
    entries = []
    with open(path, "r", encoding="utf-8") as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 7:
                raise DataError(f"{path}:{ln}: expected 7 fields")
            try:
                tags = tuple(parts[6].split(",")) if parts[6] != "-" else ()
                entries.append(EdlEntry(
                    out_start=float(parts[0]), out_end=float(parts[1]),
                    view=int(parts[2]), src_start=float(parts[3]),
                    src_end=float(parts[4]), speed=float(parts[5]),
                    tags=tags))
            except (ValueError, ContractViolation) as e:
                raise DataError(f"{path}:{ln}: {e}") from None
    return EditDecisionList(entries=entries)
