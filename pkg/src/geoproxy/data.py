"""Point-table and raster dataset formats, space-time raster sampling, and
z-score normalization fit on the training split only.

Formats are plain text plus one flat binary blob so they stay diffable and
language neutral:

* ``points.tsv``: tab-separated, header ``id site lon lat date f_1..f_k y``.
* ``<name>.spec`` / ``<name>.bin``: key=value sidecar describing the grid and
  time axis; values little-endian float64, laid out t-major, then row-major
  (y, x), then channel.
"""

from __future__ import annotations

import csv
import datetime as _dt
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import times


class DataFormatError(ValueError):
    """Malformed dataset file; message carries the line or column."""


class ExtentError(ValueError):
    """Query outside the raster's spatial extent or time axis."""


@dataclass
class LabeledSample:
    sample_id: int
    site_id: int
    lon: float
    lat: float
    date: _dt.date
    features: np.ndarray
    y: float


@dataclass
class SiteTable:
    ids: np.ndarray      # (s,) int
    lons: np.ndarray     # (s,)
    lats: np.ndarray     # (s,)

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class LabeledTable:
    """Column-oriented store of labeled samples (one row per sample)."""

    ids: np.ndarray          # (n,) int
    site_ids: np.ndarray     # (n,) int
    lons: np.ndarray         # (n,)
    lats: np.ndarray         # (n,)
    t_days: np.ndarray       # (n,) float epoch days
    features: np.ndarray     # (n, k)
    y: np.ndarray            # (n,)
    feature_names: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ids)

    def sample(self, i: int) -> LabeledSample:
        return LabeledSample(
            sample_id=int(self.ids[i]),
            site_id=int(self.site_ids[i]),
            lon=float(self.lons[i]),
            lat=float(self.lats[i]),
            date=times.from_epoch_day(self.t_days[i]),
            features=self.features[i],
            y=float(self.y[i]),
        )

    def subset(self, row_idx: np.ndarray) -> "LabeledTable":
        return LabeledTable(
            ids=self.ids[row_idx],
            site_ids=self.site_ids[row_idx],
            lons=self.lons[row_idx],
            lats=self.lats[row_idx],
            t_days=self.t_days[row_idx],
            features=self.features[row_idx],
            y=self.y[row_idx],
            feature_names=self.feature_names,
        )

    def rows_for_ids(self, sample_ids) -> np.ndarray:
        order = {int(s): i for i, s in enumerate(self.ids)}
        return np.array([order[int(s)] for s in sample_ids], dtype=np.int64)

    def bounding_box(self) -> tuple[float, float, float, float]:
        return (float(self.lons.min()), float(self.lons.max()),
                float(self.lats.min()), float(self.lats.max()))


def build_site_table(lons: np.ndarray, lats: np.ndarray) -> tuple[SiteTable, np.ndarray]:
    """Deduplicate (lon, lat) pairs into sites; returns table plus per-row site id."""
    key_to_id: dict[tuple[float, float], int] = {}
    site_ids = np.empty(len(lons), dtype=np.int64)
    for i, key in enumerate(zip(lons.tolist(), lats.tolist())):
        if key not in key_to_id:
            key_to_id[key] = len(key_to_id)
        site_ids[i] = key_to_id[key]
    keys = list(key_to_id)
    table = SiteTable(
        ids=np.arange(len(keys), dtype=np.int64),
        lons=np.array([k[0] for k in keys]),
        lats=np.array([k[1] for k in keys]),
    )
    return table, site_ids


def load_labeled_table(path) -> tuple[LabeledTable, SiteTable]:
    """Parse ``points.tsv``; sites are deduplicated by exact (lon, lat)."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file, expected a header row")
        required = ["id", "site", "lon", "lat", "date"]
        if header[:5] != required or header[-1] != "y":
            raise DataFormatError(f"{path}: header must be id site lon lat date f_1..f_k y, got {header}")
        feature_names = header[5:-1]
        k = len(feature_names)

        ids, sites, lons, lats, days, feats, ys = [], [], [], [], [], [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 6 + k:
                raise DataFormatError(f"{path}:{line_no}: expected {6 + k} columns, got {len(row)}")
            try:
                ids.append(int(row[0]))
                sites.append(row[1])
                lons.append(float(row[2]))
                lats.append(float(row[3]))
                days.append(times.epoch_day(times.parse_date(row[4])))
                feats.append([float(v) for v in row[5:5 + k]])
                ys.append(float(row[5 + k]))
            except ValueError as exc:
                raise DataFormatError(f"{path}:{line_no}: {exc}") from exc

    lons = np.array(lons, dtype=np.float64)
    lats = np.array(lats, dtype=np.float64)
    features = np.array(feats, dtype=np.float64).reshape(len(ids), k)
    y = np.array(ys, dtype=np.float64)
    for name, col in zip(feature_names, features.T):
        if not np.all(np.isfinite(col)):
            raise DataFormatError(f"{path}: non-finite value in column '{name}'")
    if not np.all(np.isfinite(y)):
        raise DataFormatError(f"{path}: non-finite value in column 'y'")
    if np.any(np.abs(lons) > 180.0) or np.any(np.abs(lats) > 90.0):
        raise DataFormatError(f"{path}: coordinate outside lon [-180,180] / lat [-90,90]")

    site_table, site_ids = build_site_table(lons, lats)
    table = LabeledTable(
        ids=np.array(ids, dtype=np.int64),
        site_ids=site_ids,
        lons=lons,
        lats=lats,
        t_days=np.array(days, dtype=np.float64),
        features=features,
        y=y,
        feature_names=feature_names,
    )
    return table, site_table


def write_labeled_table(path, table: LabeledTable) -> None:
    names = table.feature_names or [f"f_{i + 1}" for i in range(table.features.shape[1])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(["id", "site", "lon", "lat", "date", *names, "y"])
        for i in range(len(table)):
            date = times.from_epoch_day(table.t_days[i]).isoformat()
            writer.writerow([
                int(table.ids[i]), int(table.site_ids[i]),
                repr(float(table.lons[i])), repr(float(table.lats[i])), date,
                *(repr(float(v)) for v in table.features[i]),
                repr(float(table.y[i])),
            ])


@dataclass
class ProxyField:
    """Gridded space-time raster of m proxy channels.

    ``origin`` is the lower-left corner of the grid; cell centers sit at
    origin + (index + 0.5) * cell_size. The time axis starts at ``t0``
    (epoch days) with ``t_step`` day spacing.
    """

    channel_names: list[str]
    lon0: float
    lat0: float
    cell_size: float
    nx: int
    ny: int
    t0: float
    t_step: float
    values: np.ndarray           # (nt, ny, nx, m)
    missing_value: float = -9999.0

    def __post_init__(self):
        expected = (self.values.shape[0], self.ny, self.nx, len(self.channel_names))
        if self.values.shape != expected:
            raise DataFormatError(f"raster values shape {self.values.shape} != {expected}")

    @property
    def nt(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return len(self.channel_names)

    def extent(self) -> tuple[float, float, float, float]:
        return (self.lon0, self.lon0 + self.nx * self.cell_size,
                self.lat0, self.lat0 + self.ny * self.cell_size)

    def time_span(self) -> tuple[float, float]:
        return self.t0, self.t0 + (self.nt - 1) * self.t_step

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        cx = self.lon0 + (np.arange(self.nx) + 0.5) * self.cell_size
        cy = self.lat0 + (np.arange(self.ny) + 0.5) * self.cell_size
        return cx, cy

    def sample(self, lon, lat, t_days) -> np.ndarray:
        """Bilinear in space, nearest in time; returns (n, m) with NaN = missing.

        Cells equal to the missing sentinel are dropped from the bilinear
        stencil and the remaining weights renormalized; if the whole stencil
        is missing the result is NaN for that channel.
        """
        lon = np.atleast_1d(np.asarray(lon, dtype=np.float64))
        lat = np.atleast_1d(np.asarray(lat, dtype=np.float64))
        t_days = np.atleast_1d(np.asarray(t_days, dtype=np.float64))
        lo_lon, hi_lon, lo_lat, hi_lat = self.extent()
        t_lo, t_hi = self.time_span()
        if np.any(lon < lo_lon) or np.any(lon > hi_lon) or np.any(lat < lo_lat) or np.any(lat > hi_lat):
            raise ExtentError(f"query outside raster extent lon [{lo_lon},{hi_lon}] lat [{lo_lat},{hi_lat}]")
        if np.any(t_days < t_lo - 0.5 * self.t_step) or np.any(t_days > t_hi + 0.5 * self.t_step):
            raise ExtentError(f"query outside time axis [{t_lo},{t_hi}] (epoch days)")

        ti = np.clip(np.rint((t_days - self.t0) / self.t_step).astype(np.int64), 0, self.nt - 1)
        # continuous index in cell-center space, clamped so edge queries
        # take the edge value
        u = np.clip((lon - self.lon0) / self.cell_size - 0.5, 0.0, self.nx - 1.0)
        v = np.clip((lat - self.lat0) / self.cell_size - 0.5, 0.0, self.ny - 1.0)
        i0 = np.floor(u).astype(np.int64)
        j0 = np.floor(v).astype(np.int64)
        i0 = np.minimum(i0, self.nx - 2) if self.nx > 1 else i0
        j0 = np.minimum(j0, self.ny - 2) if self.ny > 1 else j0
        i1 = np.minimum(i0 + 1, self.nx - 1)
        j1 = np.minimum(j0 + 1, self.ny - 1)
        fu = u - i0
        fv = v - j0

        corners = (
            (self.values[ti, j0, i0, :], (1.0 - fu) * (1.0 - fv)),
            (self.values[ti, j0, i1, :], fu * (1.0 - fv)),
            (self.values[ti, j1, i0, :], (1.0 - fu) * fv),
            (self.values[ti, j1, i1, :], fu * fv),
        )
        num = np.zeros((len(lon), self.n_channels))
        den = np.zeros((len(lon), self.n_channels))
        for vals, w in corners:
            ok = vals != self.missing_value
            num += np.where(ok, vals * w[:, None], 0.0)
            den += w[:, None] * ok
        with np.errstate(invalid="ignore", divide="ignore"):
            out = num / den
        out[den == 0.0] = np.nan
        return out


def write_field(spec_path, field_: ProxyField) -> None:
    spec_path = Path(spec_path)
    bin_path = spec_path.with_suffix(".bin")
    with open(spec_path, "w", encoding="ascii") as fh:
        fh.write(f"channels = {','.join(field_.channel_names)}\n")
        fh.write(f"lon0 = {field_.lon0!r}\n")
        fh.write(f"lat0 = {field_.lat0!r}\n")
        fh.write(f"cell_size = {field_.cell_size!r}\n")
        fh.write(f"nx = {field_.nx}\n")
        fh.write(f"ny = {field_.ny}\n")
        fh.write(f"t0 = {times.from_epoch_day(field_.t0).isoformat()}\n")
        fh.write(f"t_step_days = {field_.t_step!r}\n")
        fh.write(f"nt = {field_.nt}\n")
        fh.write(f"missing_value = {field_.missing_value!r}\n")
        fh.write(f"values = {bin_path.name}\n")
    with open(bin_path, "wb") as fh:
        fh.write(np.ascontiguousarray(field_.values, dtype="<f8").tobytes())


def load_field(spec_path) -> ProxyField:
    spec_path = Path(spec_path)
    kv: dict[str, str] = {}
    with open(spec_path, encoding="ascii") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataFormatError(f"{spec_path}:{line_no}: expected key = value")
            key, val = (part.strip() for part in line.split("=", 1))
            kv[key] = val
    try:
        names = kv["channels"].split(",")
        nx, ny, nt = int(kv["nx"]), int(kv["ny"]), int(kv["nt"])
        m = len(names)
        bin_path = spec_path.parent / kv["values"]
        raw = np.fromfile(bin_path, dtype="<f8")
        if raw.size != nt * ny * nx * m:
            raise DataFormatError(
                f"{bin_path}: {raw.size} values, expected nt*ny*nx*m = {nt * ny * nx * m}"
            )
        return ProxyField(
            channel_names=names,
            lon0=float(kv["lon0"]),
            lat0=float(kv["lat0"]),
            cell_size=float(kv["cell_size"]),
            nx=nx,
            ny=ny,
            t0=float(times.epoch_day(times.parse_date(kv["t0"]))),
            t_step=float(kv["t_step_days"]),
            values=raw.reshape(nt, ny, nx, m).astype(np.float64),
            missing_value=float(kv["missing_value"]),
        )
    except KeyError as exc:
        raise DataFormatError(f"{spec_path}: missing key {exc}") from exc


class ConstantColumnError(ValueError):
    """A column has zero variance on the training split; named in message."""


@dataclass
class ColumnStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def invert(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean


@dataclass
class NormalizationStats:
    """z-score statistics for features, target, and proxy channels."""

    features: ColumnStats
    target: ColumnStats
    proxy: ColumnStats | None


def _column_stats(matrix: np.ndarray, names: list[str]) -> ColumnStats:
    mean = matrix.mean(axis=0)
    std = matrix.std(axis=0)
    for name, s in zip(names, std):
        if s <= 0.0:
            raise ConstantColumnError(f"column '{name}' is constant on the training split")
    return ColumnStats(mean=mean, std=std)


def fit_normalization(train: LabeledTable, field_: ProxyField | None = None) -> NormalizationStats:
    """Fit z-score transforms on the training split (proxy stats use every
    non-missing raster cell, since proxies are sampled domain-wide)."""
    if len(train) == 0:
        raise ValueError("training split is empty")
    feat_names = train.feature_names or [f"f_{i + 1}" for i in range(train.features.shape[1])]
    features = _column_stats(train.features, feat_names)
    target = _column_stats(train.y[:, None], ["y"])
    proxy = None
    if field_ is not None:
        flat = field_.values.reshape(-1, field_.n_channels)
        cols = []
        for c, name in enumerate(field_.channel_names):
            col = flat[:, c]
            col = col[col != field_.missing_value]
            if col.size == 0 or col.std() <= 0.0:
                raise ConstantColumnError(f"proxy channel '{name}' is constant or all-missing")
            cols.append((col.mean(), col.std()))
        proxy = ColumnStats(mean=np.array([c[0] for c in cols]), std=np.array([c[1] for c in cols]))
    return NormalizationStats(features=features, target=target, proxy=proxy)
