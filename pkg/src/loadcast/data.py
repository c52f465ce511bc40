"""Loading, validation, splitting, windowing, and sampling of monthly demand series.

The engine ingests long-form CSV (``series_id,year,month,value``) or a JSON
manifest of per-series arrays. Series are validated on load: strictly positive
values, contiguous months, and enough history to hold at least one training
window plus the held-out evaluation blocks.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_LOOKBACK = 12
DEFAULT_HORIZON = 12

CSV_HEADER = ("series_id", "year", "month", "value")


class DatasetError(ValueError):
    """Input data is unreadable or violates a series invariant."""


def month_index(year: int, month: int) -> int:
    return year * 12 + (month - 1)


def index_to_month(index: int) -> tuple[int, int]:
    year, m = divmod(index, 12)
    return year, m + 1


@dataclass(frozen=True)
class TimeSeries:
    """One country's monthly demand history, chronologically ordered.

    Immutable after construction; the value buffer is marked read-only so the
    same instance can be shared by concurrent trainers.
    """

    id: str
    start: tuple[int, int]  # (year, month) of the first observation
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise DatasetError(f"series '{self.id}': values must be one-dimensional")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "start", (int(self.start[0]), int(self.start[1])))

    def __len__(self) -> int:
        return int(self.values.size)

    def month_at(self, index: int) -> tuple[int, int]:
        """Calendar (year, month) of the observation at a 0-based offset."""
        return index_to_month(month_index(*self.start) + index)


def validate_series(series: TimeSeries, min_length: int) -> None:
    """Check positivity, finiteness, and minimum length; raise DatasetError."""
    if len(series) < min_length:
        raise DatasetError(
            f"series '{series.id}' has {len(series)} months, needs at least {min_length}"
        )
    if not np.all(np.isfinite(series.values)):
        raise DatasetError(f"series '{series.id}' contains non-finite values")
    if np.any(series.values <= 0.0):
        offset = int(np.argmax(series.values <= 0.0))
        raise DatasetError(
            f"series '{series.id}' has non-positive value at offset {offset}: "
            "demand values must be strictly positive"
        )


def _read_csv_rows(path: Path) -> dict[str, list[tuple[int, float, str]]]:
    per_id: dict[str, list[tuple[int, float, str]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(c.strip() for c in header) != CSV_HEADER:
            raise DatasetError(
                f"{path}: expected header '{','.join(CSV_HEADER)}', got {header}"
            )
        for rowno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if row[0].lstrip().startswith("#"):
                continue
            if len(row) != 4:
                raise DatasetError(f"{path}: row {rowno}: expected 4 fields, got {len(row)}")
            sid = row[0].strip()
            try:
                year, month, value = int(row[1]), int(row[2]), float(row[3])
            except ValueError as exc:
                raise DatasetError(f"{path}: row {rowno}: {exc}") from None
            if not 1 <= month <= 12:
                raise DatasetError(f"{path}: row {rowno}: month {month} out of range 1..12")
            if not np.isfinite(value) or value <= 0.0:
                raise DatasetError(
                    f"{path}: row {rowno}: value {value} violates the strictly-positive rule"
                )
            per_id.setdefault(sid, []).append((month_index(year, month), value, f"row {rowno}"))
    return per_id


def _read_json_rows(path: Path) -> dict[str, list[tuple[int, float, str]]]:
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or not isinstance(doc.get("series"), list):
        raise DatasetError(f"{path}: expected an object with a 'series' list")
    per_id: dict[str, list[tuple[int, float, str]]] = {}
    for k, entry in enumerate(doc["series"]):
        where = f"series entry {k}"
        if not isinstance(entry, dict) or not {"id", "start", "values"} <= entry.keys():
            raise DatasetError(f"{path}: {where}: needs 'id', 'start', 'values'")
        sid = str(entry["id"])
        if sid in per_id:
            raise DatasetError(f"{path}: {where}: duplicate series id '{sid}'")
        start = entry["start"]
        if len(start) != 2 or not 1 <= int(start[1]) <= 12:
            raise DatasetError(f"{path}: {where}: start must be [year, month 1..12]")
        base = month_index(int(start[0]), int(start[1]))
        rows = []
        for j, value in enumerate(entry["values"]):
            value = float(value)
            if not np.isfinite(value) or value <= 0.0:
                raise DatasetError(
                    f"{path}: {where}: value at position {j} is {value}; "
                    "demand values must be strictly positive"
                )
            rows.append((base + j, value, f"position {j}"))
        per_id[sid] = rows
    return per_id


def load_dataset(
    path,
    format: str = "auto",
    *,
    min_length: int = DEFAULT_LOOKBACK + 2 * DEFAULT_HORIZON,
    on_short: str = "error",
) -> list[TimeSeries]:
    """Load and validate a dataset, returning one TimeSeries per distinct id.

    ``format`` is "csv", "json", or "auto" (by file extension). Series shorter
    than ``min_length`` are a hard error unless ``on_short="drop"``, which
    drops them with a warning. Months must be contiguous within each series;
    rows may arrive unsorted.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")
    if format == "auto":
        format = "json" if path.suffix.lower() == ".json" else "csv"
    if format == "csv":
        per_id = _read_csv_rows(path)
    elif format == "json":
        per_id = _read_json_rows(path)
    else:
        raise DatasetError(f"unknown dataset format '{format}'")
    if not per_id:
        raise DatasetError(f"{path}: no data rows")
    if on_short not in ("error", "drop"):
        raise DatasetError(f"on_short must be 'error' or 'drop', got '{on_short}'")

    out: list[TimeSeries] = []
    short: list[str] = []
    for sid in sorted(per_id):
        rows = sorted(per_id[sid])
        for (ia, _, wa), (ib, _, wb) in zip(rows, rows[1:]):
            if ib == ia:
                raise DatasetError(f"{path}: series '{sid}': duplicate month at {wb}")
            if ib != ia + 1:
                raise DatasetError(
                    f"{path}: series '{sid}': gap in month sequence between {wa} and {wb}"
                )
        series = TimeSeries(sid, index_to_month(rows[0][0]), np.array([r[1] for r in rows]))
        if len(series) < min_length:
            short.append(f"{sid} ({len(series)} months)")
            continue
        validate_series(series, min_length)
        out.append(series)
    if short:
        msg = f"{path}: series shorter than {min_length} months: {', '.join(short)}"
        if on_short == "error":
            raise DatasetError(msg)
        warnings.warn(msg)
    if not out:
        raise DatasetError(f"{path}: no series left after the length check")
    return out


def write_dataset_csv(series_list, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for series in series_list:
            for i, value in enumerate(series.values):
                year, month = series.month_at(i)
                writer.writerow([series.id, year, month, repr(float(value))])


def write_dataset_json(series_list, path) -> None:
    doc = {
        "series": [
            {"id": s.id, "start": list(s.start), "values": [float(v) for v in s.values]}
            for s in series_list
        ]
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Splitting and windowing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    """Chronological split: the final block is the test set, the block before
    it the validation set (``val_months=0`` merges validation into training)."""

    test_months: int = 12
    val_months: int = 12

    def __post_init__(self):
        if self.test_months < 0 or self.val_months < 0:
            raise ValueError("split month counts must be >= 0")


@dataclass(frozen=True)
class RegionSplit:
    """Half-open index ranges into a series; concatenating them reconstructs it."""

    train: tuple[int, int]
    val: tuple[int, int]
    test: tuple[int, int]


def split(series: TimeSeries, spec: SplitSpec | None = None, *, min_train: int = 0) -> RegionSplit:
    """Partition a series into train/validation/test regions.

    ``min_train`` lets callers require enough training months for at least one
    window (typically lookback + horizon).
    """
    spec = spec or SplitSpec()
    n = len(series)
    held = spec.test_months + spec.val_months
    train_stop = n - held
    if train_stop < min_train:
        raise DatasetError(
            f"series '{series.id}' is too short for the requested split: {n} months leave "
            f"{max(train_stop, 0)} training months, {min_train} required"
        )
    return RegionSplit(
        train=(0, train_stop),
        val=(train_stop, train_stop + spec.val_months),
        test=(n - spec.test_months, n),
    )


@dataclass(frozen=True)
class Window:
    """A training/evaluation pair: lookback ``x`` and target ``y``.

    ``anchor`` is the absolute index of the last lookback month in the source
    series, so windows can be re-sliced and leakage-checked.
    """

    x: np.ndarray
    y: np.ndarray
    series_id: str
    anchor: int


def make_windows(
    series: TimeSeries,
    region: tuple[int, int],
    lookback: int,
    horizon: int,
    *,
    allow_empty: bool = True,
) -> list[Window]:
    """All stride-1 windows whose lookback and target both lie inside ``region``."""
    start, stop = region
    count = (stop - start) - lookback - horizon + 1
    if count <= 0:
        if allow_empty:
            return []
        raise DatasetError(
            f"series '{series.id}': region of {stop - start} months cannot host a "
            f"{lookback}+{horizon} window"
        )
    out = []
    for anchor in range(start + lookback - 1, stop - horizon):
        out.append(
            Window(
                x=series.values[anchor - lookback + 1 : anchor + 1],
                y=series.values[anchor + 1 : anchor + 1 + horizon],
                series_id=series.id,
                anchor=anchor,
            )
        )
    return out


def training_windows(
    series_list, spec: SplitSpec | None = None, lookback: int = DEFAULT_LOOKBACK,
    horizon: int = DEFAULT_HORIZON,
) -> list[list[Window]]:
    """Per-series training windows (possibly empty lists for short series)."""
    spec = spec or SplitSpec()
    return [
        make_windows(s, split(s, spec).train, lookback, horizon) for s in series_list
    ]


def evaluation_windows(
    series_list, spec: SplitSpec | None = None, lookback: int = DEFAULT_LOOKBACK,
    horizon: int = DEFAULT_HORIZON, region: str = "test",
) -> list[Window]:
    """One window per series: lookback ends right before the chosen region."""
    if region not in ("val", "test"):
        raise ValueError("region must be 'val' or 'test'")
    spec = spec or SplitSpec()
    out = []
    for series in series_list:
        regions = split(series, spec)
        start, stop = getattr(regions, region)
        if stop - start == 0:
            raise DatasetError(f"series '{series.id}' has an empty {region} region")
        if stop - start != horizon:
            raise DatasetError(
                f"series '{series.id}': {region} region spans {stop - start} months "
                f"but the forecast horizon is {horizon}"
            )
        if start < lookback:
            raise DatasetError(
                f"series '{series.id}': fewer than {lookback} months precede the {region} region"
            )
        out.append(
            Window(
                x=series.values[start - lookback : start],
                y=series.values[start:stop],
                series_id=series.id,
                anchor=start - 1,
            )
        )
    return out


class StratifiedSampler:
    """Infinite window stream: uniform over series, then uniform within the series.

    Every series has the same expected representation per batch regardless of
    its length. Single-owner (stateful RNG); reproducible from the seed for an
    identical sequence of draw calls.
    """

    def __init__(self, windows_per_series, seed):
        groups = [list(g) for g in windows_per_series if len(g) > 0]
        if not groups:
            raise DatasetError("all per-series window collections are empty")
        self._groups = groups
        self._sizes = np.array([len(g) for g in groups], dtype=np.int64)
        self._rng = np.random.default_rng(seed)

    @property
    def n_series(self) -> int:
        return len(self._groups)

    def draw(self) -> Window:
        return self.draw_batch(1)[0]

    def draw_batch_indices(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """(series index, window index) pairs; the primitive behind draw_batch."""
        sidx = self._rng.integers(len(self._groups), size=n)
        widx = self._rng.integers(self._sizes[sidx])
        return sidx, widx

    def draw_batch(self, n: int) -> list[Window]:
        sidx, widx = self.draw_batch_indices(n)
        return [self._groups[s][w] for s, w in zip(sidx, widx)]

    def __iter__(self):
        while True:
            yield self.draw()


# ---------------------------------------------------------------------------
# Synthetic benchmark
# ---------------------------------------------------------------------------

def synthetic_dataset(
    n_series: int = 8,
    months: int = 60,
    *,
    amplitude: float = 0.2,
    trend_per_year: float = 0.02,
    noise: float = 0.01,
    seed: int = 0,
    start: tuple[int, int] = (2010, 1),
) -> list[TimeSeries]:
    """Benchmark generator: sinusoidal seasonality + linear trend + multiplicative noise.

    Per series, a random base level (log-uniform) and seasonal phase; the
    seasonal swing is ``amplitude`` of the level, the trend ``trend_per_year``
    per year, and the noise factor ``1 + noise * N(0,1)`` (clipped away from 0).
    """
    rng = np.random.default_rng(seed)
    series = []
    t = np.arange(months, dtype=np.float64)
    for i in range(n_series):
        level = float(np.exp(rng.uniform(np.log(2e3), np.log(8e4))))
        phase = float(rng.uniform(0.0, 12.0))
        seasonal = 1.0 + amplitude * np.sin(2.0 * np.pi * (t + phase) / 12.0)
        trend = 1.0 + trend_per_year * t / 12.0
        factor = np.clip(1.0 + noise * rng.standard_normal(months), 0.05, None)
        series.append(TimeSeries(f"S{i:02d}", start, level * seasonal * trend * factor))
    return series
