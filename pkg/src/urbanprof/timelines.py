"""CDR aggregation into the per-cell timeline tensor and its z-score form.

Activity is binned into eight coarse daily time-slots:

    [00-07) [07-09) [09-11) [11-14) [14-17) [17-19) [19-21) [21-24)

All five activity channels (sms in/out, call in/out, internet) are summed
into one scalar per record before tensor construction; per-channel tensors
are an extension point.  Timestamps are epoch minutes (UTC); a fixed UTC
offset shifts them into local time for slot/day assignment (no DST logic).
"""

from __future__ import annotations

import calendar
import csv
import datetime as dt
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .grid import GridSpec

SLOT_BOUNDS_H = (0, 7, 9, 11, 14, 17, 19, 21, 24)
N_SLOTS = 8

CDR_CSV_HEADER = ["cell_id", "timestamp", "sms_in", "sms_out", "call_in", "call_out", "internet"]

FLAG_CONSTANT = "constant"  # zero variance; z-scores undefined, row zeroed

_EPOCH = dt.datetime(1970, 1, 1)


@dataclass(frozen=True)
class CdrRecord:
    cell: int
    timestamp: int  # epoch minutes, UTC
    sms_in: float = 0.0
    sms_out: float = 0.0
    call_in: float = 0.0
    call_out: float = 0.0
    internet: float = 0.0

    def __post_init__(self) -> None:
        for name in ("sms_in", "sms_out", "call_in", "call_out", "internet"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise DataError(f"CDR field {name} must be finite and non-negative")

    @property
    def total(self) -> float:
        return self.sms_in + self.sms_out + self.call_in + self.call_out + self.internet


def epoch_minutes(timestamp: str) -> int:
    """Parse ISO-8601 ``YYYY-MM-DDTHH:MM`` into epoch minutes."""
    try:
        t = dt.datetime.strptime(timestamp, "%Y-%m-%dT%H:%M")
    except ValueError:
        raise DataError(f"bad timestamp {timestamp!r}, expected YYYY-MM-DDTHH:MM") from None
    return int((t - _EPOCH).total_seconds()) // 60


def format_epoch_minutes(minutes: int) -> str:
    return (_EPOCH + dt.timedelta(minutes=minutes)).strftime("%Y-%m-%dT%H:%M")


def parse_cdr_csv(source) -> list[CdrRecord]:
    """Read CDR records; blank numeric fields read as 0 (provider sparsity).

    Row numbers in errors are file line numbers (header = line 1).
    """
    from .poi import _open_text

    stream, close = _open_text(source)
    try:
        reader = csv.reader(stream)
        header = next(reader, None)
        if header != CDR_CSV_HEADER:
            raise DataError(f"CDR CSV header must be {','.join(CDR_CSV_HEADER)!r}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CDR_CSV_HEADER):
                raise DataError(f"CDR CSV row {lineno}: expected {len(CDR_CSV_HEADER)} fields")
            try:
                cell = int(row[0])
                ts = epoch_minutes(row[1])
                counts = [float(x) if x.strip() else 0.0 for x in row[2:7]]
            except (ValueError, DataError) as exc:
                raise DataError(f"CDR CSV row {lineno}: {exc}") from None
            records.append(CdrRecord(cell, ts, *counts))
        return records
    finally:
        if close:
            stream.close()


def write_cdr_csv(records: list[CdrRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(CDR_CSV_HEADER)
        for r in records:
            w.writerow(
                [
                    r.cell,
                    format_epoch_minutes(r.timestamp),
                    f"{r.sms_in:.6g}",
                    f"{r.sms_out:.6g}",
                    f"{r.call_in:.6g}",
                    f"{r.call_out:.6g}",
                    f"{r.internet:.6g}",
                ]
            )


def slot_of(hour: int, minute: int = 0) -> int:
    """Slot index of a local clock time; intervals are half-open [start, end)."""
    if not (0 <= hour < 24 and 0 <= minute < 60):
        raise DataError(f"invalid time {hour:02d}:{minute:02d}")
    for i in range(N_SLOTS):
        if hour < SLOT_BOUNDS_H[i + 1]:
            return i
    raise AssertionError("unreachable")


@dataclass
class TimelineTensor:
    """Raw activity totals, shape (n_cells, N_SLOTS, days_in_month)."""

    raw: np.ndarray
    month: tuple[int, int]  # (year, month)

    @property
    def n_cells(self) -> int:
        return self.raw.shape[0]

    @property
    def n_days(self) -> int:
        return self.raw.shape[2]


def days_in_month(month: tuple[int, int]) -> int:
    return calendar.monthrange(month[0], month[1])[1]


def build_tensor(
    records: list[CdrRecord],
    grid: GridSpec,
    month: tuple[int, int],
    utc_offset_minutes: int = 0,
) -> TimelineTensor:
    """Aggregate record totals into raw[cell][slot][day]; additive on collisions."""
    year, mon = month
    d = days_in_month(month)
    raw = np.zeros((grid.n_cells, N_SLOTS, d))
    for r in records:
        if not (0 <= r.cell < grid.n_cells):
            raise DataError(f"CDR record for unknown cell id {r.cell}")
        local = _EPOCH + dt.timedelta(minutes=r.timestamp + utc_offset_minutes)
        if (local.year, local.month) != (year, mon):
            raise DataError(
                f"CDR record at {format_epoch_minutes(r.timestamp)} falls outside {year}-{mon:02d}"
            )
        raw[r.cell, slot_of(local.hour, local.minute), local.day - 1] += r.total
    return TimelineTensor(raw=raw, month=month)


@dataclass
class NormalizedTimeline:
    """Per-cell z-scored tensor; constant cells are flagged and zeroed."""

    z: np.ndarray
    mu: np.ndarray  # per-cell mean over all slot x day entries
    sigma: np.ndarray  # per-cell population standard deviation
    flagged: frozenset[int]
    month: tuple[int, int]

    @property
    def n_cells(self) -> int:
        return self.z.shape[0]


def zscore(t: TimelineTensor) -> NormalizedTimeline:
    """z[i,j,k] = (raw[i,j,k] - mu_i) / sigma_i with population sigma over p*d entries."""
    flat = t.raw.reshape(t.n_cells, -1)
    mu = flat.mean(axis=1)
    sigma = flat.std(axis=1)  # population (ddof=0)
    flagged = frozenset(int(i) for i in np.nonzero(sigma == 0)[0])
    safe = np.where(sigma == 0, 1.0, sigma)
    z = (t.raw - mu[:, None, None]) / safe[:, None, None]
    for i in flagged:
        z[i] = 0.0
    return NormalizedTimeline(z=z, mu=mu, sigma=sigma, flagged=flagged, month=t.month)


def weekday_masks(month: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """(weekday, weekend) boolean masks over the month's zero-based day indices."""
    year, mon = month
    d = days_in_month(month)
    wd = np.array([dt.date(year, mon, day + 1).weekday() < 5 for day in range(d)])
    return wd, ~wd


def timeline_features(nt: NormalizedTimeline, mode: str = "mean_day") -> np.ndarray:
    """Per-cell feature vectors for clustering/classification.

    mean_day: q = 8, the mean over days of each slot.
    weekday_weekend: q = 16, slot means over Mon-Fri days then Sat-Sun days.
    """
    if mode == "mean_day":
        return nt.z.mean(axis=2)
    if mode == "weekday_weekend":
        wd, we = weekday_masks(nt.month)
        parts = []
        for mask in (wd, we):
            if not mask.any():
                parts.append(np.zeros((nt.n_cells, N_SLOTS)))
            else:
                parts.append(nt.z[:, :, mask].mean(axis=2))
        return np.concatenate(parts, axis=1)
    raise DataError(f"unknown feature mode {mode!r}")


def feature_names(mode: str) -> list[str]:
    if mode == "mean_day":
        return [f"slot_{j}" for j in range(N_SLOTS)]
    if mode == "weekday_weekend":
        return [f"wd_slot_{j}" for j in range(N_SLOTS)] + [f"we_slot_{j}" for j in range(N_SLOTS)]
    raise DataError(f"unknown feature mode {mode!r}")


def write_normalized_csv(nt: NormalizedTimeline, z_path: str, flags_path: str) -> None:
    with open(z_path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["cell_id", "slot", "day", "z"])
        n, p, d = nt.z.shape
        for i in range(n):
            for j in range(p):
                for k in range(d):
                    w.writerow([i, j, k, f"{nt.z[i, j, k]:.12g}"])
    with open(flags_path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["cell_id", "flag"])
        for i in sorted(nt.flagged):
            w.writerow([i, FLAG_CONSTANT])
