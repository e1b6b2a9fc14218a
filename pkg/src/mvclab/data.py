"""Multi-view datasets: container, directory format, synthetic generator, masking."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .autodiff import ContractError


class FormatError(ValueError):
    """On-disk dataset violates the directory format."""


class ConfigurationError(ValueError):
    """Requested setting cannot be honoured for this dataset."""


@dataclass
class ViewSet:
    views: List[np.ndarray]
    labels: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None
    name: str = "viewset"

    def __post_init__(self):
        self.views = [np.asarray(v, dtype=np.float64) for v in self.views]
        if any(v.ndim != 2 for v in self.views):
            raise FormatError("every view must be a 2-D matrix")
        m = {v.shape[0] for v in self.views}
        if len(m) != 1:
            raise FormatError(f"views disagree on sample count: {sorted(m)}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels).astype(np.int64).reshape(-1)
            if self.labels.size != self.n_samples:
                raise FormatError("labels length differs from sample count")
        if self.mask is not None:
            self.mask = np.asarray(self.mask).astype(bool)
            if self.mask.shape != (self.n_samples, self.n_views):
                raise FormatError(f"mask must have shape {(self.n_samples, self.n_views)}")
            if not self.mask.any(axis=1).all():
                raise FormatError("every sample needs at least one available view")

    @property
    def n_views(self) -> int:
        return len(self.views)

    @property
    def n_samples(self) -> int:
        return self.views[0].shape[0]

    @property
    def dims(self) -> List[int]:
        return [v.shape[1] for v in self.views]

    @property
    def n_clusters(self) -> Optional[int]:
        return None if self.labels is None else int(np.unique(self.labels).size)

    def availability(self) -> np.ndarray:
        if self.mask is None:
            return np.ones((self.n_samples, self.n_views), dtype=bool)
        return self.mask

    def __eq__(self, other):
        if not isinstance(other, ViewSet):
            return NotImplemented
        same_opt = all(
            (a is None and b is None) or (a is not None and b is not None and np.array_equal(a, b))
            for a, b in ((self.labels, other.labels), (self.mask, other.mask)))
        return (self.name == other.name and self.n_views == other.n_views and same_opt
                and all(np.array_equal(a, b) for a, b in zip(self.views, other.views)))


# -- directory format ----------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_viewset(vs: ViewSet, directory) -> None:
    """Write view{v}.csv, labels.csv, mask.csv (when present) and manifest.json."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for v, x in enumerate(vs.views):
        with open(d / f"view{v}.csv", "w") as fh:
            for row in x:
                fh.write(",".join(_fmt(val) for val in row) + "\n")
    if vs.labels is not None:
        (d / "labels.csv").write_text("".join(f"{int(l)}\n" for l in vs.labels))
    if vs.mask is not None:
        (d / "mask.csv").write_text(
            "".join(",".join("1" if b else "0" for b in row) + "\n" for row in vs.mask))
    manifest = {"name": vs.name, "V": vs.n_views, "m": vs.n_samples, "dims": vs.dims}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _read_matrix(path: Path, width: int, rows: int) -> np.ndarray:
    try:
        x = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if rows == 0:
        return np.zeros((0, width))
    if x.shape != (rows, width):
        raise FormatError(f"{path}: expected {rows}x{width}, found {x.shape[0]}x{x.shape[1]}")
    return x


def load_viewset(directory) -> ViewSet:
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
    except FileNotFoundError as exc:
        raise FormatError(f"{d}: missing manifest.json") from exc
    n_views, m, dims = int(manifest["V"]), int(manifest["m"]), list(manifest["dims"])
    if len(dims) != n_views:
        raise FormatError(f"{d}: manifest lists {len(dims)} dims for {n_views} views")
    views = []
    for v in range(n_views):
        path = d / f"view{v}.csv"
        if not path.exists():
            raise FormatError(f"{d}: missing {path.name}")
        views.append(_read_matrix(path, dims[v], m))
    labels = None
    if (d / "labels.csv").exists():
        labels = np.loadtxt(d / "labels.csv", dtype=np.int64, ndmin=1)
        if labels.size != m:
            raise FormatError(f"{d}: labels.csv has {labels.size} rows, expected {m}")
    mask = None
    if (d / "mask.csv").exists():
        mask = np.loadtxt(d / "mask.csv", delimiter=",", dtype=np.int64, ndmin=2)
        if mask.shape != (m, n_views) or not np.isin(mask, (0, 1)).all():
            raise FormatError(f"{d}: mask.csv must hold {m} rows of {n_views} 0/1 flags")
        if not mask.any(axis=1).all():
            raise FormatError(f"{d}: mask.csv has a row with no available view")
    return ViewSet(views=views, labels=labels, mask=mask, name=str(manifest.get("name", d.name)))


# -- synthetic data -------------------------------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Gaussian clusters in a shared latent space, observed through per-view maps.

    View v = [latent @ A_v, nuisance_v * nuisance_scale] + noise, where A_v is
    a random (or identity) linear map to ``dims[v] - nuisance_dim`` columns and
    the nuisance block is drawn independently per view.
    """

    clusters: int = 3
    per_cluster: int = 100
    dims: Sequence[int] = (10, 15)
    latent_dim: int = 4
    nuisance_dim: int = 5
    nuisance_scale: float = 1.0
    noise: float = 0.1
    separation: float = 4.0
    maps: str = "random"
    seed: int = 0

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if self.clusters < 1 or self.per_cluster < 1 or self.latent_dim < 1:
            raise ContractError("cluster, sample and latent counts must be positive")
        if len(self.dims) < 2:
            raise ContractError("a multi-view dataset needs at least two views")
        if self.nuisance_dim < 0 or any(d - self.nuisance_dim < 1 for d in self.dims):
            raise ContractError("each view needs at least one non-nuisance column")
        if self.nuisance_scale < 0 or self.noise < 0:
            raise ContractError("nuisance scale and noise must be non-negative")
        if self.maps not in ("random", "identity"):
            raise ContractError("maps must be 'random' or 'identity'")


def synth_multiview(spec: SyntheticSpec) -> ViewSet:
    rng = np.random.default_rng(spec.seed)
    k, n = spec.clusters, spec.per_cluster
    centers = rng.normal(size=(k, spec.latent_dim))
    if k <= spec.latent_dim:
        # equidistant centres: orthonormal directions, pairwise distance separation * sqrt(2)
        q, _ = np.linalg.qr(centers.T)
        centers = q.T[:k]
    centers = centers * spec.separation
    labels = np.repeat(np.arange(k), n)
    latent = centers[labels] + rng.normal(size=(k * n, spec.latent_dim))
    views = []
    for dim in spec.dims:
        width = dim - spec.nuisance_dim
        if spec.maps == "identity":
            a = np.eye(spec.latent_dim, width)
        else:
            a = rng.normal(size=(spec.latent_dim, width)) / np.sqrt(spec.latent_dim)
        nuisance = rng.normal(size=(k * n, spec.nuisance_dim)) * spec.nuisance_scale
        x = np.hstack([latent @ a, nuisance])
        views.append(x + spec.noise * rng.normal(size=x.shape))
    return ViewSet(views=views, labels=labels, name=f"synth-k{k}-seed{spec.seed}")


def cross_view_rv(vs: ViewSet, a: int = 0, b: int = 1) -> float:
    """RV coefficient between two column-centred views (matrix correlation in [0, 1])."""
    x = vs.views[a] - vs.views[a].mean(axis=0)
    y = vs.views[b] - vs.views[b].mean(axis=0)
    sxy = x.T @ y
    sxx = x.T @ x
    syy = y.T @ y
    return float(np.sum(sxy ** 2) / np.sqrt(np.sum(sxx ** 2) * np.sum(syy ** 2)))


def apply_miss_mask(vs: ViewSet, eta: float, seed: int = 0) -> ViewSet:
    """Make round(eta * n) random samples incomplete, each keeping one random view."""
    if vs.n_views != 2:
        raise ConfigurationError("the miss-rate protocol is defined for bi-view data")
    if not 0.0 <= eta < 1.0:
        raise ConfigurationError("miss rate must lie in [0, 1)")
    n = vs.n_samples
    n_missing = int(round(eta * n))
    if n - n_missing < 2:
        raise ConfigurationError(f"miss rate {eta} leaves fewer than two complete samples")
    rng = np.random.default_rng(seed)
    mask = np.ones((n, 2), dtype=bool)
    rows = rng.choice(n, size=n_missing, replace=False)
    dropped = rng.integers(0, 2, size=n_missing)
    mask[rows, dropped] = False
    return replace(vs, views=[v.copy() for v in vs.views], mask=mask)


def normalize_minmax(vs: ViewSet) -> ViewSet:
    """Per-feature affine map to [0, 1]; constant columns become 0."""
    out = []
    for x in vs.views:
        lo, hi = x.min(axis=0), x.max(axis=0)
        span = hi - lo
        safe = np.where(span > 0, span, 1.0)
        out.append(np.where(span > 0, (x - lo) / safe, 0.0))
    return replace(vs, views=out)
