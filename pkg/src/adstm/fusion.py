"""
FGRID frame I/O and multi-source observation stacking.

FGRID v1 is a small text format: a ``#FGRID v1`` line, six ``key: value``
headers (source, time, n1, n2, origin, step) and then ``n1`` rows of ``n2``
space-separated decimals, ``NaN`` marking a missing pixel.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .grid import GridSpec

log = logging.getLogger(__name__)

AOD_BOUNDS = (-0.05, 5.0)
ALIGN_TOLERANCE = timedelta(seconds=30)
_HEADER_KEYS = ("source", "time", "n1", "n2", "origin", "step")
_NUMBER = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")


class FGRIDError(ValueError):
    pass


class EmptyDataError(ValueError):
    """No usable observations in the requested window."""


@dataclass
class ObservationFrame:
    source_id: str
    timestamp: datetime
    values: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"frame shape {self.values.shape} does not match grid {self.grid.shape}")

    @property
    def mask(self) -> np.ndarray:
        """True where a value was observed."""
        return np.isfinite(self.values)

    @property
    def missing_count(self) -> int:
        return int(self.values.size - self.mask.sum())


def parse_time(text):
    try:
        ts = datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    except ValueError as exc:
        raise FGRIDError(f"bad RFC3339 time {text!r}") from exc
    if ts.tzinfo is None:
        raise FGRIDError(f"time {text!r} lacks a UTC offset")
    return ts


def format_time(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_frame(data, bounds=AOD_BOUNDS, strict: bool = True) -> ObservationFrame:
    """Parse one FGRID v1 document.

    Out-of-bounds values raise when ``strict``; otherwise they are logged
    and treated as missing.
    """
    if isinstance(data, (bytes, bytearray)):
        try:
            data = bytes(data).decode("utf-8-sig")
        except UnicodeDecodeError as exc:
            raise FGRIDError("FGRID input is not UTF-8") from exc
    data = data.lstrip("\ufeff")
    lines = data.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].strip() != "#FGRID v1":
        raise FGRIDError("missing '#FGRID v1' magic line")
    if len(lines) < 1 + len(_HEADER_KEYS):
        raise FGRIDError("truncated header")

    head = {}
    for key, line in zip(_HEADER_KEYS, lines[1:7]):
        k, sep, v = line.partition(":")
        if not sep or k.strip() != key:
            raise FGRIDError(f"expected header '{key}:', got {line!r}")
        head[key] = v.strip()
    try:
        n1, n2 = int(head["n1"]), int(head["n2"])
        lat0, lon0 = (float(x) for x in head["origin"].split())
        dlat, dlon = (float(x) for x in head["step"].split())
    except ValueError as exc:
        raise FGRIDError(f"malformed header: {exc}") from exc
    try:
        grid = GridSpec(n1, n2, lat0, lon0, dlat, dlon)
    except ValueError as exc:
        raise FGRIDError(str(exc)) from exc
    source = head["source"]
    if not source:
        raise FGRIDError("empty source id")
    ts = parse_time(head["time"])

    rows = lines[7:]
    if len(rows) != n1:
        raise FGRIDError(f"dimension mismatch: header says n1={n1}, found {len(rows)} data rows")
    values = np.empty((n1, n2))
    for i, row in enumerate(rows):
        toks = row.split()
        if len(toks) != n2:
            raise FGRIDError(f"dimension mismatch: row {i} has {len(toks)} values, expected n2={n2}")
        for j, tok in enumerate(toks):
            if tok == "NaN":
                values[i, j] = np.nan
            elif _NUMBER.match(tok):
                values[i, j] = float(tok)
            else:
                raise FGRIDError(f"non-numeric cell {tok!r} at row {i}, column {j}")

    lo, hi = bounds
    bad = np.isfinite(values) & ((values < lo) | (values > hi))
    if bad.any():
        i, j = np.argwhere(bad)[0]
        msg = f"value {values[i, j]:g} at ({i}, {j}) outside bounds [{lo:g}, {hi:g}]"
        if strict:
            raise FGRIDError(msg)
        log.warning("%s; %d such values treated as missing", msg, int(bad.sum()))
        values[bad] = np.nan
    return ObservationFrame(source, ts, values, grid)


def format_frame(frame: ObservationFrame) -> str:
    g = frame.grid
    out = [
        "#FGRID v1",
        f"source: {frame.source_id}",
        f"time: {format_time(frame.timestamp)}",
        f"n1: {g.n1}",
        f"n2: {g.n2}",
        f"origin: {g.origin_lat!r} {g.origin_lon!r}",
        f"step: {g.step_lat!r} {g.step_lon!r}",
    ]
    for row in frame.values:
        out.append(" ".join("NaN" if not np.isfinite(x) else repr(float(x)) for x in row))
    return "\n".join(out) + "\n"


@dataclass
class SourceStream:
    source_id: str
    frames: list
    cadence: timedelta = timedelta(minutes=5)

    def __post_init__(self):
        self.frames = sorted(self.frames, key=lambda f: f.timestamp)
        times = [f.timestamp for f in self.frames]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"stream {self.source_id}: timestamps must be strictly increasing")
        if any(f.source_id != self.source_id for f in self.frames):
            raise ValueError(f"stream {self.source_id}: frame from another source")

    @property
    def times(self):
        return [f.timestamp for f in self.frames]

    def frame_at(self, t: datetime, tolerance: timedelta = ALIGN_TOLERANCE):
        """The frame reported at ``t`` (within tolerance), or None.

        A frame that is closer to ``t`` than to any neighbouring cadence slot
        but outside the tolerance is misaligned and raises.
        """
        for f in self.frames:
            off = abs(f.timestamp - t)
            if off <= tolerance:
                return f
            if off < self.cadence / 2:
                raise ValueError(
                    f"stream {self.source_id}: frame at {format_time(f.timestamp)} is misaligned "
                    f"with {format_time(t)} by {off.total_seconds():.0f}s (tolerance {tolerance.total_seconds():.0f}s)")
        return None


def build_downsample_mask(grid: GridSpec, g1: int, g2: int) -> np.ndarray:
    """Flat pixel indices of a uniform ``g1 x g2`` sub-grid.

    Sub-grid point ``j`` sits at the cell holding the centre of the ``j``-th
    of ``g`` equal blocks, i.e. ``floor((j + 1/2) n / g)``.
    """
    if not (1 <= g1 <= grid.n1 and 1 <= g2 <= grid.n2):
        raise ValueError(f"downsample grid {(g1, g2)} invalid for grid {grid.shape}")
    r = np.floor((np.arange(g1) + 0.5) * grid.n1 / g1).astype(int)
    c = np.floor((np.arange(g2) + 0.5) * grid.n2 / g2).astype(int)
    return (r[:, None] * grid.n2 + c[None, :]).ravel()


def selector_matrix(indices, n: int) -> np.ndarray:
    """Dense 0/1 row selector, one 1 per row."""
    K = np.zeros((len(indices), n))
    K[np.arange(len(indices)), indices] = 1.0
    return K


@dataclass
class FusedObservation:
    """Observations of all reporting sources at one time, stacked by source id."""

    time: datetime
    grid: GridSpec
    y: np.ndarray
    source_ids: list
    pixel_index: list  # per source: flat indices into the grid (K_t^(m) rows)
    rows: list = field(default_factory=list)  # per source: slice into y

    @property
    def size(self) -> int:
        return len(self.y)

    def source_of_row(self, source_order) -> np.ndarray:
        """Position of each row's source in ``source_order``."""
        out = np.empty(self.size, dtype=int)
        for sid, sl in zip(self.source_ids, self.rows):
            out[sl] = source_order.index(sid)
        return out

    def observation_matrix(self, F: np.ndarray, augmented: bool = True) -> np.ndarray:
        """Stack ``[K_t^(m) F, 0]``; the zero block spans the bias half of the state."""
        idx = np.concatenate(self.pixel_index) if self.pixel_index else np.zeros(0, int)
        H = F[idx]
        if augmented:
            H = np.hstack([H, np.zeros_like(H)])
        return H

    def scatter(self, source_id) -> np.ndarray:
        """Put one source's observed values back on the grid (NaN elsewhere)."""
        k = self.source_ids.index(source_id)
        out = np.full(self.grid.size, np.nan)
        out[self.pixel_index[k]] = self.y[self.rows[k]]
        return out.reshape(self.grid.shape)


def fuse(streams, t: datetime, grid: GridSpec, downsample=None,
         tolerance: timedelta = ALIGN_TOLERANCE) -> FusedObservation:
    """Stack the observed pixels of every source reporting at ``t``.

    ``downsample`` is an optional ``(g1, g2)``; the sub-grid selector is
    applied before the missing-data selector, so only observed sub-grid
    pixels survive.
    """
    keep = None
    if downsample is not None:
        keep = np.zeros(grid.size, bool)
        keep[build_downsample_mask(grid, *downsample)] = True
    ys, ids, idxs, rows = [], [], [], []
    start = 0
    for stream in sorted(streams, key=lambda s: s.source_id):
        frame = stream.frame_at(t, tolerance)
        if frame is None:
            continue
        if frame.grid.shape != grid.shape:
            raise ValueError(f"source {stream.source_id} frame shape {frame.grid.shape} != grid {grid.shape}")
        ok = frame.mask.ravel()
        if keep is not None:
            ok = ok & keep
        idx = np.flatnonzero(ok)
        ys.append(frame.values.ravel()[idx])
        ids.append(stream.source_id)
        idxs.append(idx)
        rows.append(slice(start, start + len(idx)))
        start += len(idx)
    y = np.concatenate(ys) if ys else np.zeros(0)
    return FusedObservation(t, grid, y, ids, idxs, rows)


def fill_first_frame(obs: FusedObservation) -> np.ndarray:
    """Per-pixel mean over sources, remaining gaps filled with the overall mean."""
    g = obs.grid
    total = np.zeros(g.size)
    count = np.zeros(g.size)
    for idx, sl in zip(obs.pixel_index, obs.rows):
        total[idx] += obs.y[sl]
        count[idx] += 1
    if not count.any():
        return np.zeros(g.shape)
    field_ = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    field_[count == 0] = np.nanmean(field_)
    return field_.reshape(g.shape)


def read_key_values(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        k, sep, v = line.partition("=")
        if not sep or not k.strip():
            raise ValueError(f"{path}:{n}: expected 'key = value', got {raw!r}")
        out[k.strip()] = v.strip()
    return out


def load_streams(directory, bounds=AOD_BOUNDS, strict: bool = True, cadence: timedelta = timedelta(minutes=5),
                 exclude=("truth",)) -> list:
    """Read every ``*.fgrid`` file under ``directory`` into per-source streams.

    Frames are grouped by the ``source`` header, not by file location.
    Sub-directories named in ``exclude`` are skipped.
    """
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"no such directory: {root}")
    by_source = {}
    for p in sorted(root.rglob("*.fgrid")):
        if set(p.relative_to(root).parts[:-1]) & set(exclude):
            continue
        try:
            fr = parse_frame(p.read_bytes(), bounds, strict)
        except FGRIDError as exc:
            raise FGRIDError(f"{p}: {exc}") from exc
        by_source.setdefault(fr.source_id, []).append(fr)
    if not by_source:
        raise EmptyDataError(f"no FGRID frames under {root}")
    return [SourceStream(sid, frames, cadence) for sid, frames in sorted(by_source.items())]


def common_times(streams) -> list:
    """Sorted union of frame timestamps over all streams."""
    return sorted({t for s in streams for t in s.times})
