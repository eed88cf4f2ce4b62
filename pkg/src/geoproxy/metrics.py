"""Regression metrics, multi-run aggregation, and embedding-grid analyses
(PCA maps, per-time component ranges, spatial roughness).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import times


@dataclass
class MetricReport:
    r2: float | None
    rmse: float
    mae: float
    mbe: float
    n: int
    r2_reason: str | None = None

    def row(self) -> dict:
        return {"R2": "" if self.r2 is None else repr(self.r2),
                "RMSE": repr(self.rmse), "MAE": repr(self.mae),
                "MBE": repr(self.mbe), "n": self.n}


def compute_metrics(y_pred, y_true) -> MetricReport:
    y_pred = np.asarray(y_pred, dtype=np.float64)
    y_true = np.asarray(y_true, dtype=np.float64)
    if y_pred.shape != y_true.shape or y_pred.ndim != 1:
        raise ValueError(f"prediction/label shapes differ: {y_pred.shape} vs {y_true.shape}")
    if len(y_true) < 2:
        raise ValueError("need at least 2 points to compute metrics")
    if not (np.all(np.isfinite(y_pred)) and np.all(np.isfinite(y_true))):
        raise ValueError("metrics require finite predictions and labels")
    err = y_pred - y_true
    rmse = float(np.sqrt(np.mean(err * err)))
    mae = float(np.mean(np.abs(err)))
    mbe = float(np.mean(err))
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0.0:
        return MetricReport(r2=None, rmse=rmse, mae=mae, mbe=mbe, n=len(y_true),
                            r2_reason="labels are constant; R2 undefined")
    r2 = 1.0 - float(np.sum(err * err)) / ss_tot
    return MetricReport(r2=r2, rmse=rmse, mae=mae, mbe=mbe, n=len(y_true))


@dataclass
class AggregateReport:
    labels: list[str]
    n_runs: int
    mean: dict[str, float]
    se: dict[str, float] | None


def aggregate(reports: list[MetricReport], labels: list[str] | None = None) -> AggregateReport:
    """Unweighted mean and standard error (sample std / sqrt(runs)) per metric."""
    if not reports:
        raise ValueError("no reports to aggregate")
    labels = labels or [str(i) for i in range(len(reports))]
    cols = {
        "R2": [r.r2 for r in reports],
        "RMSE": [r.rmse for r in reports],
        "MAE": [r.mae for r in reports],
        "MBE": [r.mbe for r in reports],
    }
    mean = {}
    se: dict[str, float] | None = {} if len(reports) > 1 else None
    for key, vals in cols.items():
        if any(v is None for v in vals):
            continue
        arr = np.asarray(vals, dtype=np.float64)
        mean[key] = float(arr.mean())
        if se is not None:
            se[key] = float(arr.std(ddof=1) / np.sqrt(len(arr)))
    return AggregateReport(labels=labels, n_runs=len(reports), mean=mean, se=se)


def write_metrics_csv(path, rows: list[dict]) -> None:
    """One row per run/partition with columns exactly R2, RMSE, MAE, MBE, n
    (plus a leading label column when rows carry one)."""
    keys = ["R2", "RMSE", "MAE", "MBE", "n"]
    labeled = any("label" in r for r in rows)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow((["label"] if labeled else []) + keys)
        for r in rows:
            writer.writerow(([r.get("label", "")] if labeled else []) + [r[k] for k in keys])


# --- PCA by power iteration --------------------------------------------------


def pca_power_iteration(x: np.ndarray, n_components: int | None = None,
                        tol: float = 1e-10, max_iter: int = 10_000,
                        seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Centered PCA via power iteration with deflation.

    Returns (mean, components (k, d) row-orthonormal, explained_variance_ratio).
    Components are re-orthogonalized against earlier ones every iteration, so
    the basis stays orthonormal even in (near-)degenerate subspaces.
    """
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / max(1, len(x) - 1)
    d = cov.shape[0]
    k = d if n_components is None else min(n_components, d)
    total_var = float(np.trace(cov))
    rng = np.random.default_rng(seed)

    comps = np.zeros((k, d))
    eigvals = np.zeros(k)
    residual = cov.copy()
    for c in range(k):
        v = rng.normal(size=d)
        v /= np.linalg.norm(v)
        for _ in range(max_iter):
            w = residual @ v
            if c:
                w -= comps[:c].T @ (comps[:c] @ w)
            norm = np.linalg.norm(w)
            if norm < 1e-300:
                # no variance left in this direction; keep any orthonormal fill
                w = rng.normal(size=d)
                if c:
                    w -= comps[:c].T @ (comps[:c] @ w)
                w /= np.linalg.norm(w)
                v = w
                break
            w /= norm
            if np.linalg.norm(w - v) < tol or np.linalg.norm(w + v) < tol:
                v = w
                break
            v = w
        comps[c] = v
        eigvals[c] = float(v @ residual @ v)
        residual -= eigvals[c] * np.outer(v, v)
    eigvals = np.maximum(eigvals, 0.0)
    evr = eigvals / total_var if total_var > 0.0 else np.zeros(k)
    return mean, comps, evr


def first_component_roughness(scores: np.ndarray, nx: int, ny: int, n_times: int) -> float:
    """Mean absolute 4-neighbor difference of first-PC scores, normalized by
    the scores' standard deviation; 0 when the scores are constant.

    ``scores`` is flat over (time, y, x) in that (t-major, row-major) order.
    """
    std = float(scores.std())
    if std == 0.0:
        return 0.0
    grid = scores.reshape(n_times, ny, nx)
    diffs = []
    if ny > 1:
        diffs.append(np.abs(grid[:, 1:, :] - grid[:, :-1, :]).ravel())
    if nx > 1:
        diffs.append(np.abs(grid[:, :, 1:] - grid[:, :, :-1]).ravel())
    if not diffs:
        return 0.0
    return float(np.concatenate(diffs).mean() / std)


@dataclass
class EmbeddingGridExport:
    lons: np.ndarray             # (n_cells,)
    lats: np.ndarray             # (n_cells,)
    t_days: np.ndarray           # (n_times,)
    nx: int
    ny: int
    embeddings: np.ndarray       # (n_cells * n_times, d2), time-major
    pca_mean: np.ndarray
    pca_components: np.ndarray   # (k, d2)
    explained_variance_ratio: np.ndarray
    roughness: float

    def scores(self, component: int = 0) -> np.ndarray:
        return (self.embeddings - self.pca_mean) @ self.pca_components[component]


def export_embedding_grid(
    encoder,
    bounds: tuple[float, float, float, float],
    spacing: float,
    t_days,
    n_components: int = 4,
    pca_tol: float = 1e-10,
) -> EmbeddingGridExport:
    """Evaluate the location-time embedding on a regular grid x times, fit a
    PCA over all vectors, and compute the first-component roughness."""
    if encoder is None:
        raise ValueError("model has no location encoder to export")
    lon0, lon1, lat0, lat1 = bounds
    nx = max(1, int(round((lon1 - lon0) / spacing)))
    ny = max(1, int(round((lat1 - lat0) / spacing)))
    cx = lon0 + (np.arange(nx) + 0.5) * spacing
    cy = lat0 + (np.arange(ny) + 0.5) * spacing
    glon, glat = np.meshgrid(cx, cy)  # (ny, nx)
    flat_lon = glon.ravel()
    flat_lat = glat.ravel()
    t_days = np.atleast_1d(np.asarray(t_days, dtype=np.float64))

    blocks = []
    for t in t_days:
        blocks.append(encoder.embed(flat_lon, flat_lat, np.full(flat_lon.shape, t)))
    emb = np.concatenate(blocks, axis=0)

    d2 = emb.shape[1]
    k = min(max(n_components, 1), d2)
    mean, comps, evr = pca_power_iteration(emb, n_components=k, tol=pca_tol)
    first_scores = (emb - mean) @ comps[0]
    rough = first_component_roughness(first_scores, nx, ny, len(t_days))
    return EmbeddingGridExport(
        lons=flat_lon, lats=flat_lat, t_days=t_days, nx=nx, ny=ny,
        embeddings=emb, pca_mean=mean, pca_components=comps,
        explained_variance_ratio=evr, roughness=rough,
    )


def write_embedding_csvs(export: EmbeddingGridExport, out_dir) -> dict[str, Path]:
    """Emit embeddings.csv, pca_components.csv, and pca_timeseries.csv."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    d2 = export.embeddings.shape[1]
    k = export.pca_components.shape[0]
    n_cells = len(export.lons)

    emb_path = out_dir / "embeddings.csv"
    with open(emb_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["lon", "lat", "date"]
                        + [f"e_{i + 1}" for i in range(d2)]
                        + [f"pc_{c + 1}" for c in range(k)])
        centered = export.embeddings - export.pca_mean
        scores = centered @ export.pca_components.T
        for ti, t in enumerate(export.t_days):
            date = times.from_epoch_day(t).isoformat()
            for ci in range(n_cells):
                row_i = ti * n_cells + ci
                writer.writerow([repr(float(export.lons[ci])), repr(float(export.lats[ci])), date]
                                + [repr(v) for v in export.embeddings[row_i]]
                                + [repr(v) for v in scores[row_i]])

    comp_path = out_dir / "pca_components.csv"
    with open(comp_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["component", "explained_variance_ratio", "roughness_first_pc"]
                        + [f"loading_{i + 1}" for i in range(d2)])
        for c in range(k):
            rough = repr(export.roughness) if c == 0 else ""
            writer.writerow([c + 1, repr(float(export.explained_variance_ratio[c])), rough]
                            + [repr(v) for v in export.pca_components[c]])

    ts_path = out_dir / "pca_timeseries.csv"
    with open(ts_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ["date"]
        for c in range(k):
            header += [f"pc_{c + 1}_mean", f"pc_{c + 1}_min", f"pc_{c + 1}_max"]
        writer.writerow(header)
        centered = export.embeddings - export.pca_mean
        scores = centered @ export.pca_components.T
        for ti, t in enumerate(export.t_days):
            block = scores[ti * n_cells:(ti + 1) * n_cells]
            row = [times.from_epoch_day(t).isoformat()]
            for c in range(k):
                row += [repr(float(block[:, c].mean())), repr(float(block[:, c].min())),
                        repr(float(block[:, c].max()))]
            writer.writerow(row)
    return {"embeddings": emb_path, "components": comp_path, "timeseries": ts_path}
