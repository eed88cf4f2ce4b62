"""Spatial evaluation splits (site-coherent random, systematic checkerboard)
and the independent proxy minibatch sampler.

Checkerboard cells use half-open intervals on both axes, so every point lands
in exactly one cell; the 4 half-cell offsets times the train/test swap
enumerate 8 partitions.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import LabeledTable, ProxyField, SiteTable

TRAIN, VAL, TEST = "train", "val", "test"

OFFSET_VARIANTS = ("original", "right", "up", "both")


@dataclass
class SeedStreams:
    """Independent named RNG streams derived from one master seed."""

    master: int
    split: np.random.Generator
    init: np.random.Generator
    sampler: np.random.Generator
    noise: np.random.Generator


def named_stream(master_seed: int, name: str) -> np.random.Generator:
    tag = zlib.crc32(name.encode("ascii"))
    return np.random.default_rng(np.random.SeedSequence(entropy=int(master_seed), spawn_key=(tag,)))


def make_seed_streams(master_seed: int) -> SeedStreams:
    return SeedStreams(
        master=int(master_seed),
        split=named_stream(master_seed, "split"),
        init=named_stream(master_seed, "init"),
        sampler=named_stream(master_seed, "sampler"),
        noise=named_stream(master_seed, "noise"),
    )


@dataclass
class SplitAssignment:
    """Map sample id -> train/val/test plus the provenance header fields."""

    assignment: dict[int, str]
    header: dict[str, str]

    def ids(self, label: str) -> np.ndarray:
        return np.array(sorted(s for s, a in self.assignment.items() if a == label), dtype=np.int64)

    def counts(self) -> dict[str, int]:
        out = {TRAIN: 0, VAL: 0, TEST: 0}
        for a in self.assignment.values():
            out[a] += 1
        return out

    def save(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            for key, val in self.header.items():
                fh.write(f"# {key}={val}\n")
            fh.write("sample_id,split\n")
            for sid in sorted(self.assignment):
                fh.write(f"{sid},{self.assignment[sid]}\n")

    @classmethod
    def load(cls, path) -> "SplitAssignment":
        header: dict[str, str] = {}
        assignment: dict[int, str] = {}
        with open(path, encoding="ascii") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    key, _, val = line[1:].strip().partition("=")
                    header[key.strip()] = val.strip()
                    continue
                if line == "sample_id,split":
                    continue
                sid, label = line.split(",")
                if label not in (TRAIN, VAL, TEST):
                    raise ValueError(f"{path}: unknown split label {label!r}")
                assignment[int(sid)] = label
        return cls(assignment=assignment, header=header)


def uar_site_split(
    sites: SiteTable,
    table: LabeledTable,
    fraction: float,
    seed: int | np.random.Generator,
    val_share: float = 0.0,
) -> SplitAssignment:
    """Assign whole sites at random: first floor(fraction*n) permuted sites
    train, the rest test; ``val_share`` of the train sites (at least one when
    positive) carved out for validation. Samples inherit their site's side.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    if len(sites) < 2:
        raise ValueError("need at least 2 sites to split")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    perm = rng.permutation(len(sites))
    n_train = int(np.floor(fraction * len(sites)))
    train_sites = set(sites.ids[perm[:n_train]].tolist())
    val_sites: set[int] = set()
    if val_share > 0.0 and n_train > 1:
        n_val = max(1, int(round(val_share * n_train)))
        ordered = sites.ids[perm[:n_train]].tolist()
        val_sites = set(ordered[:n_val])
        train_sites -= val_sites

    assignment = {}
    for sid, site in zip(table.ids.tolist(), table.site_ids.tolist()):
        if site in train_sites:
            assignment[sid] = TRAIN
        elif site in val_sites:
            assignment[sid] = VAL
        else:
            assignment[sid] = TEST
    header = {"protocol": "uar", "fraction": repr(fraction), "val_share": repr(val_share),
              "seed": str(seed if not isinstance(seed, np.random.Generator) else "generator")}
    return SplitAssignment(assignment=assignment, header=header)


@dataclass
class CheckerboardConfig:
    delta: float
    origin: tuple[float, float]
    offset: str = "original"   # one of OFFSET_VARIANTS
    swap: bool = False

    def shifted_origin(self) -> tuple[float, float]:
        lon0, lat0 = self.origin
        half = self.delta / 2.0
        if self.offset == "right":
            return lon0 + half, lat0
        if self.offset == "up":
            return lon0, lat0 + half
        if self.offset == "both":
            return lon0 + half, lat0 + half
        if self.offset != "original":
            raise ValueError(f"offset must be one of {OFFSET_VARIANTS}, got {self.offset!r}")
        return lon0, lat0


def checkerboard_cells(lons: np.ndarray, lats: np.ndarray, cfg: CheckerboardConfig) -> np.ndarray:
    lon0, lat0 = cfg.shifted_origin()
    i = np.floor((lons - lon0) / cfg.delta).astype(np.int64)
    j = np.floor((lats - lat0) / cfg.delta).astype(np.int64)
    return (i + j) % 2  # 0 = even parity


def checkerboard_split(table: LabeledTable, cfg: CheckerboardConfig) -> SplitAssignment:
    """Even-parity cells train, odd-parity test; ``swap`` exchanges the two."""
    if cfg.delta <= 0.0:
        raise ValueError(f"checkerboard square side must be positive, got {cfg.delta}")
    parity = checkerboard_cells(table.lons, table.lats, cfg)
    train_parity = 1 if cfg.swap else 0
    assignment = {
        int(sid): (TRAIN if p == train_parity else TEST)
        for sid, p in zip(table.ids.tolist(), parity.tolist())
    }
    header = {"protocol": "checkerboard", "delta": repr(cfg.delta),
              "origin": f"{cfg.origin[0]!r} {cfg.origin[1]!r}",
              "offset": cfg.offset, "swap": str(int(cfg.swap))}
    return SplitAssignment(assignment=assignment, header=header)


def enumerate_checkerboard_partitions(delta: float, origin: tuple[float, float]) -> list[CheckerboardConfig]:
    return [
        CheckerboardConfig(delta=delta, origin=origin, offset=offset, swap=swap)
        for offset in OFFSET_VARIANTS
        for swap in (False, True)
    ]


def carve_validation(
    split: SplitAssignment,
    share: float,
    rng: np.random.Generator,
    table: LabeledTable | None = None,
) -> SplitAssignment:
    """Move a ``share`` of the train side to validation.

    With ``table`` given the carve is site-coherent (whole sites move), so
    the validation metric measures unseen-location prediction rather than
    within-site interpolation; otherwise individual samples move.
    """
    train_ids = split.ids(TRAIN)
    assignment = dict(split.assignment)
    if table is not None:
        rows = table.rows_for_ids(train_ids)
        train_sites = np.unique(table.site_ids[rows])
        n_val = int(round(share * len(train_sites)))
        if share > 0.0 and len(train_sites) > 1:
            n_val = max(1, n_val)
        chosen_sites = set(rng.permutation(train_sites)[:n_val].tolist())
        for sid, row in zip(train_ids.tolist(), rows.tolist()):
            if int(table.site_ids[row]) in chosen_sites:
                assignment[sid] = VAL
    else:
        n_val = int(round(share * len(train_ids)))
        if share > 0.0 and len(train_ids) > 1:
            n_val = max(1, n_val)
        for sid in rng.permutation(train_ids)[:n_val].tolist():
            assignment[sid] = VAL
    header = dict(split.header)
    header["val_share"] = repr(share)
    return SplitAssignment(assignment=assignment, header=header)


@dataclass
class SamplerConfig:
    batch_size: int = 256          # labeled minibatch size B
    rho: float = 16.0              # proxy batch size = round(rho * B)
    mode: str = "random-only"      # random-only | sites-only | sites+random
    seed: int = 0

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError(f"proxy sampling ratio must be >= 0, got {self.rho}")
        if self.mode not in ("random-only", "sites-only", "sites+random"):
            raise ValueError(f"unknown sampler mode {self.mode!r}")


class ProxyBatchSampler:
    """Draws proxy coordinate batches independently of label locations.

    random draws are uniform over the lon/lat box and (integer-day) uniform
    over the time span. Points whose proxy value is missing are dropped and
    redrawn, up to ``redraw_cap`` rounds per epoch.
    """

    def __init__(
        self,
        bounds: tuple[float, float, float, float],
        time_span: tuple[float, float],
        cfg: SamplerConfig,
        rng: np.random.Generator,
        field: ProxyField | None = None,
        redraw_cap: int = 10,
    ):
        self.bounds = bounds
        self.time_span = time_span
        self.cfg = cfg
        self.rng = rng
        self.field = field
        self.redraw_cap = redraw_cap
        self._redraws_this_epoch = 0

    def start_epoch(self) -> None:
        self._redraws_this_epoch = 0

    def _draw_random(self, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        lon0, lon1, lat0, lat1 = self.bounds
        lons = self.rng.uniform(lon0, lon1, size=n)
        lats = self.rng.uniform(lat0, lat1, size=n)
        t0, t1 = self.time_span
        days = self.rng.integers(int(t0), int(t1) + 1, size=n).astype(np.float64)
        return lons, lats, days

    def _filter_missing(self, lons, lats, days):
        if self.field is None or len(lons) == 0:
            return lons, lats, days
        z = self.field.sample(lons, lats, days)
        ok = ~np.any(np.isnan(z), axis=1)
        return lons[ok], lats[ok], days[ok]

    def sample(self, batch: LabeledTable | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Proxy batch for one step; ``batch`` is the labeled minibatch whose
        site coordinates the sites modes reuse."""
        mode = self.cfg.mode
        parts_lon, parts_lat, parts_day = [], [], []
        if mode in ("sites-only", "sites+random"):
            if batch is None or len(batch) == 0:
                raise ValueError(f"sampler mode {mode!r} requires a labeled batch")
            parts_lon.append(np.asarray(batch.lons, dtype=np.float64))
            parts_lat.append(np.asarray(batch.lats, dtype=np.float64))
            parts_day.append(np.asarray(batch.t_days, dtype=np.float64))
        if mode in ("random-only", "sites+random"):
            base = self.cfg.batch_size if batch is None else len(batch)
            want = int(round(self.cfg.rho * base))
            lons, lats, days = self._filter_missing(*self._draw_random(want))
            while len(lons) < want and self._redraws_this_epoch < self.redraw_cap:
                self._redraws_this_epoch += 1
                extra = self._filter_missing(*self._draw_random(want - len(lons)))
                lons = np.concatenate([lons, extra[0]])
                lats = np.concatenate([lats, extra[1]])
                days = np.concatenate([days, extra[2]])
            parts_lon.append(lons)
            parts_lat.append(lats)
            parts_day.append(days)
        if mode == "sites-only" and self.field is not None:
            parts_lon[0], parts_lat[0], parts_day[0] = self._filter_missing(
                parts_lon[0], parts_lat[0], parts_day[0]
            )
        return (np.concatenate(parts_lon), np.concatenate(parts_lat), np.concatenate(parts_day))


def write_partition_files(table: LabeledTable, delta: float, origin: tuple[float, float], out_dir) -> list[Path]:
    """Emit all 8 checkerboard partition files for one delta."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, cfg in enumerate(enumerate_checkerboard_partitions(delta, origin)):
        split = checkerboard_split(table, cfg)
        path = out_dir / f"checkerboard_d{delta:g}_p{k}.csv"
        split.save(path)
        paths.append(path)
    return paths
