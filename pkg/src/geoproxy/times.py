"""Calendar/time helpers. Sample times are float days since 1970-01-01."""

from __future__ import annotations

import datetime as _dt

import numpy as np

_EPOCH = np.datetime64("1970-01-01")


def epoch_day(date: _dt.date) -> int:
    return (np.datetime64(date) - _EPOCH).astype(int)


def from_epoch_day(day: float) -> _dt.date:
    return (_EPOCH + np.timedelta64(int(np.floor(day)), "D")).astype(_dt.date)


def parse_date(text: str) -> _dt.date:
    return _dt.date.fromisoformat(text)


def day_of_year(days) -> np.ndarray:
    """Float day-of-year (Jan 1 -> 1.0) for float epoch days; vectorized."""
    days = np.atleast_1d(np.asarray(days, dtype=np.float64))
    whole = np.floor(days).astype(np.int64)
    frac = days - whole
    dates = _EPOCH + whole.astype("timedelta64[D]")
    year_start = dates.astype("datetime64[Y]").astype("datetime64[D]")
    return (dates - year_start).astype(np.int64) + 1.0 + frac


def year_of(days) -> np.ndarray:
    days = np.atleast_1d(np.asarray(days, dtype=np.float64))
    whole = np.floor(days).astype(np.int64)
    dates = _EPOCH + whole.astype("timedelta64[D]")
    return dates.astype("datetime64[Y]").astype(np.int64) + 1970
