"""Location-time encoders: multi-scale random Fourier features over Equal
Earth coordinates, cyclic day-of-year / linear year temporal branches, and a
frozen embedding table standing in for externally pretrained encoders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import times
from .nn import Mlp
from .projection import DomainRescaler

TEMPORAL_KINDS = ("day-of-year", "year", "none")


@dataclass
class RffBank:
    """Fixed (non-trainable) random frequencies, one matrix per scale level.

    Level k draws ``per_level`` rows from Normal(0, sigma_k^2); its encoding
    is a cosine half followed by a sine half (2 * per_level features). Levels
    are concatenated in ascending sigma order.
    """

    sigmas: tuple[float, ...]
    frequencies: list[np.ndarray]

    @classmethod
    def create(cls, rng: np.random.Generator, sigmas, per_level: int, in_dim: int = 2) -> "RffBank":
        ordered = tuple(sorted(float(s) for s in sigmas))
        freqs = [rng.normal(0.0, s, size=(per_level, in_dim)) for s in ordered]
        return cls(sigmas=ordered, frequencies=freqs)

    @property
    def out_dim(self) -> int:
        return sum(2 * w.shape[0] for w in self.frequencies)

    def encode(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        parts = []
        for w in self.frequencies:
            phase = 2.0 * np.pi * points @ w.T
            parts.append(np.cos(phase))
            parts.append(np.sin(phase))
        return np.concatenate(parts, axis=1)


def day_of_year_angle(t_days) -> np.ndarray:
    """Map day-of-year onto the unit-circle angle 2*pi*doy/365.25."""
    return 2.0 * np.pi * times.day_of_year(t_days) / 365.25


class LocationTimeEncoder:
    """Trainable map (lon, lat, t) -> embedding of dimension ``out_dim``.

    Spatial branch: Equal Earth projection rescaled to the domain box, then a
    multi-scale RFF bank. Temporal branch (optional): an RFF over the
    day-of-year circle point, or the year rescaled linearly to [-1, 1] over
    ``year_span``. A shared trunk MLP maps the concatenated features to the
    embedding. With temporal kind "none" the encoder is a pure function of
    (lon, lat).
    """

    GROUP_NAME = "loc_encoder"

    def __init__(
        self,
        rng: np.random.Generator,
        out_dim: int = 64,
        sigmas=(1.0, 4.0, 16.0, 64.0),
        per_level: int = 32,
        trunk_widths=(128, 128),
        temporal: str = "day-of-year",
        time_per_level: int = 8,
        time_sigma: float = 1.0,
        year_span: tuple[int, int] | None = None,
        domain_bounds: tuple[float, float, float, float] | None = None,
    ):
        if temporal not in TEMPORAL_KINDS:
            raise ValueError(f"temporal encoder kind must be one of {TEMPORAL_KINDS}, got {temporal!r}")
        bounds = domain_bounds or (-180.0, 180.0, -90.0, 90.0)
        self.rescaler = DomainRescaler(*bounds)
        self.spatial_bank = RffBank.create(rng, sigmas, per_level, in_dim=2)
        self.temporal = temporal
        self.time_bank = None
        self.year_span = year_span
        if temporal == "day-of-year":
            self.time_bank = RffBank.create(rng, [time_sigma], time_per_level, in_dim=2)
        elif temporal == "year" and year_span is None:
            raise ValueError("temporal kind 'year' requires year_span=(first, last)")
        self.out_dim = out_dim
        self.trunk = Mlp(self.feature_dim, list(trunk_widths), out_dim, rng, name="loc_trunk")

    @property
    def feature_dim(self) -> int:
        dim = self.spatial_bank.out_dim
        if self.temporal == "day-of-year":
            dim += self.time_bank.out_dim
        elif self.temporal == "year":
            dim += 1
        return dim

    def spatial_features(self, lon, lat) -> np.ndarray:
        return self.spatial_bank.encode(self.rescaler(lon, lat))

    def temporal_features(self, t_days) -> np.ndarray:
        """Per-point temporal features; empty (n, 0) for kind "none"."""
        t_days = np.atleast_1d(np.asarray(t_days, dtype=np.float64))
        if self.temporal == "day-of-year":
            theta = day_of_year_angle(t_days)
            circle = np.stack([np.cos(theta), np.sin(theta)], axis=1)
            return self.time_bank.encode(circle)
        if self.temporal == "year":
            y0, y1 = self.year_span
            year = times.year_of(t_days).astype(np.float64)
            scaled = np.zeros_like(year) if y1 == y0 else 2.0 * (year - y0) / (y1 - y0) - 1.0
            return scaled[:, None]
        return np.empty((t_days.shape[0], 0))

    def features(self, lon, lat, t_days) -> np.ndarray:
        spatial = self.spatial_features(lon, lat)
        if self.temporal == "none":
            return spatial
        return np.concatenate([spatial, self.temporal_features(t_days)], axis=1)

    def embed_tensor(self, lon, lat, t_days) -> ad.Tensor:
        """Embedding with the trunk on the tape (features are constants)."""
        return self.trunk(ad.constant(self.features(lon, lat, t_days), name="loc_features"))

    def embed(self, lon, lat, t_days) -> np.ndarray:
        return self.trunk.forward_array(self.features(lon, lat, t_days))

    def parameters(self) -> list[ad.Tensor]:
        return self.trunk.parameters()


class FrozenTableLookupError(KeyError):
    """Query coordinate has no stored neighbor within tolerance."""


class FrozenEmbeddingTable:
    """Nearest-neighbor store of precomputed location embeddings.

    Plays the role of an externally pretrained, frozen location encoder:
    lookups never contribute gradients. Queries must land within
    ``tolerance`` degrees (Euclidean in lon/lat) of a stored coordinate.
    """

    GROUP_NAME = "loc_encoder"

    def __init__(self, lons: np.ndarray, lats: np.ndarray, matrix: np.ndarray, tolerance: float = 1e-6):
        self.lons = np.asarray(lons, dtype=np.float64)
        self.lats = np.asarray(lats, dtype=np.float64)
        self.matrix = np.asarray(matrix, dtype=np.float64)
        if self.matrix.shape[0] != self.lons.shape[0]:
            raise ValueError("embedding row count does not match coordinate count")
        self.tolerance = float(tolerance)

    @property
    def out_dim(self) -> int:
        return self.matrix.shape[1]

    def embed(self, lon, lat, t_days=None) -> np.ndarray:
        lon = np.atleast_1d(np.asarray(lon, dtype=np.float64))
        lat = np.atleast_1d(np.asarray(lat, dtype=np.float64))
        d2 = (lon[:, None] - self.lons[None, :]) ** 2 + (lat[:, None] - self.lats[None, :]) ** 2
        idx = np.argmin(d2, axis=1)
        nearest = np.sqrt(d2[np.arange(len(lon)), idx])
        if np.any(nearest > self.tolerance):
            bad = int(np.argmax(nearest))
            raise FrozenTableLookupError(
                f"no stored embedding within {self.tolerance} deg of ({lon[bad]}, {lat[bad]})"
            )
        return self.matrix[idx]

    def embed_tensor(self, lon, lat, t_days=None) -> ad.Tensor:
        return ad.constant(self.embed(lon, lat), name="frozen_loc_embedding")

    def parameters(self) -> list[ad.Tensor]:
        return []

    def save(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(f"{len(self.lons)} {self.out_dim} {self.tolerance!r}\n")
            for lon, lat, row in zip(self.lons, self.lats, self.matrix):
                cells = " ".join(repr(float(v)) for v in row)
                fh.write(f"{float(lon)!r} {float(lat)!r} {cells}\n")

    @classmethod
    def load(cls, path) -> "FrozenEmbeddingTable":
        with open(path, encoding="ascii") as fh:
            first = fh.readline().split()
            n, d2, tol = int(first[0]), int(first[1]), float(first[2])
            rows = np.loadtxt(fh, dtype=np.float64, ndmin=2)
        if rows.shape != (n, d2 + 2):
            raise ValueError(f"frozen table {path}: expected {(n, d2 + 2)} values, got {rows.shape}")
        return cls(rows[:, 0], rows[:, 1], rows[:, 2:], tolerance=tol)


def table_from_encoder(encoder, lons, lats, t_day: float, tolerance: float = 1e-6) -> FrozenEmbeddingTable:
    """Freeze an encoder's embeddings at fixed coordinates and one time."""
    lons = np.asarray(lons, dtype=np.float64)
    lats = np.asarray(lats, dtype=np.float64)
    emb = encoder.embed(lons, lats, np.full(lons.shape, float(t_day)))
    return FrozenEmbeddingTable(lons, lats, emb, tolerance=tolerance)
