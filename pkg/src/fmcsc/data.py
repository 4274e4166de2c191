"""Multi-view datasets, their on-disk format, synthetic generation and
federated partitioning into multi-view / single-view client shards.

View indices are 0-based in code; on disk the view files are numbered from 1
(``view_1.bin`` ... ``view_V.bin``, ``dim.1=...``).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

VIEW_MAGIC = b"MVDS"
LABEL_MAGIC = b"MVLB"
FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class MultiViewDataset:
    views: tuple[np.ndarray, ...]
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if not self.views:
            raise DataError("dataset needs at least one view")
        n = self.labels.shape[0]
        for v, x in enumerate(self.views):
            if x.ndim != 2 or x.shape[0] != n:
                raise DataError(f"view {v} has shape {x.shape}, expected {n} rows")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"labels must lie in [0, {self.num_classes})")

    @property
    def num_samples(self) -> int:
        return int(self.labels.shape[0])

    @property
    def num_views(self) -> int:
        return len(self.views)

    @property
    def view_dims(self) -> list[int]:
        return [x.shape[1] for x in self.views]


def minmax_normalize(dataset: MultiViewDataset) -> MultiViewDataset:
    """Scale every feature column of every view into [0, 1]; constant columns map to 0."""
    views = []
    for x in dataset.views:
        x64 = x.astype(np.float64)
        lo = x64.min(axis=0, keepdims=True)
        span = x64.max(axis=0, keepdims=True) - lo
        span[span == 0] = 1.0
        views.append(((x64 - lo) / span).astype(np.float32))
    return MultiViewDataset(tuple(views), dataset.labels, dataset.num_classes)


# ---------------------------------------------------------------- file format


def save_dataset(dataset: MultiViewDataset, path: str | Path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    meta = [f"views={dataset.num_views}", f"samples={dataset.num_samples}", f"classes={dataset.num_classes}"]
    meta += [f"dim.{v + 1}={d}" for v, d in enumerate(dataset.view_dims)]
    (root / "meta").write_text("\n".join(meta) + "\n")
    for v, x in enumerate(dataset.views):
        rows, cols = x.shape
        header = VIEW_MAGIC + struct.pack("<III", FORMAT_VERSION, rows, cols)
        (root / f"view_{v + 1}.bin").write_bytes(header + np.ascontiguousarray(x, dtype="<f4").tobytes())
    labels = np.ascontiguousarray(dataset.labels, dtype="<u4")
    (root / "labels.bin").write_bytes(LABEL_MAGIC + struct.pack("<I", labels.size) + labels.tobytes())


def _read_meta(path: Path) -> dict[str, int]:
    if not path.is_file():
        raise DataError("missing meta file", str(path))
    meta: dict[str, int] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DataError(f"line {lineno}: expected key=value", str(path))
        try:
            meta[key.strip()] = int(value.strip())
        except ValueError:
            raise DataError(f"line {lineno}: {value.strip()!r} is not an integer", str(path)) from None
    for key in ("views", "samples", "classes"):
        if key not in meta:
            raise DataError(f"meta lacks {key!r}", str(path))
    return meta


def _read_view(path: Path, rows: int, cols: int) -> np.ndarray:
    if not path.is_file():
        raise DataError("missing view file", str(path))
    raw = path.read_bytes()
    if len(raw) < 16:
        raise DataError("truncated header", str(path), len(raw))
    if raw[:4] != VIEW_MAGIC:
        raise DataError(f"bad magic {raw[:4]!r}", str(path), 0)
    version, r, c = struct.unpack_from("<III", raw, 4)
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported version {version}", str(path), 4)
    if (r, c) != (rows, cols):
        raise DataError(f"header shape {r}x{c} disagrees with meta {rows}x{cols}", str(path), 8)
    expected = 16 + 4 * rows * cols
    if len(raw) != expected:
        raise DataError(f"payload is {len(raw)} bytes, expected {expected}", str(path), min(len(raw), expected))
    x = np.frombuffer(raw, dtype="<f4", offset=16).reshape(rows, cols)
    bad = np.flatnonzero(~np.isfinite(x))
    if bad.size:
        raise DataError("non-finite value", str(path), 16 + 4 * int(bad[0]))
    return x.astype(np.float32)


def _read_labels(path: Path, n: int, k: int) -> np.ndarray:
    if not path.is_file():
        raise DataError("missing label file", str(path))
    raw = path.read_bytes()
    if len(raw) < 8 or raw[:4] != LABEL_MAGIC:
        raise DataError(f"bad magic {raw[:4]!r}", str(path), 0)
    (count,) = struct.unpack_from("<I", raw, 4)
    if count != n:
        raise DataError(f"label count {count} disagrees with {n} samples", str(path), 4)
    if len(raw) != 8 + 4 * n:
        raise DataError(f"payload is {len(raw)} bytes, expected {8 + 4 * n}", str(path), min(len(raw), 8 + 4 * n))
    labels = np.frombuffer(raw, dtype="<u4", offset=8).astype(np.int64)
    bad = np.flatnonzero(labels >= k)
    if bad.size:
        raise DataError(f"label {labels[bad[0]]} outside [0, {k})", str(path), 8 + 4 * int(bad[0]))
    return labels


def load_dataset(path: str | Path, normalize: bool = True) -> MultiViewDataset:
    root = Path(path)
    if not root.is_dir():
        raise DataError("dataset directory not found", str(root))
    meta = _read_meta(root / "meta")
    n, k = meta["samples"], meta["classes"]
    views = []
    for v in range(1, meta["views"] + 1):
        key = f"dim.{v}"
        if key not in meta:
            raise DataError(f"meta lacks {key!r}", str(root / "meta"))
        views.append(_read_view(root / f"view_{v}.bin", n, meta[key]))
    labels = _read_labels(root / "labels.bin", n, k)
    dataset = MultiViewDataset(tuple(views), labels, k)
    return minmax_normalize(dataset) if normalize else dataset


# ----------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class SyntheticSpec:
    samples: int = 1200
    classes: int = 3
    views: int = 2
    view_dims: tuple[int, ...] = (64, 48)
    separation: float = 8.0
    noise_sigma: float = 0.1
    latent_dim: int = 8
    seed: int = 0


def generate_synthetic(spec: SyntheticSpec) -> MultiViewDataset:
    """Gaussian clusters in a shared latent space, seen through one random
    linear embedding per view plus independent view noise."""
    if spec.classes < 1 or spec.samples < spec.classes:
        raise ConfigError("synthetic data needs samples >= classes >= 1")
    if spec.separation <= 0 or spec.noise_sigma < 0:
        raise ConfigError("separation must be positive and noise_sigma non-negative")
    if len(spec.view_dims) != spec.views or min(spec.view_dims, default=0) < 1:
        raise ConfigError(f"view_dims must list {spec.views} positive sizes")
    rng = np.random.default_rng(spec.seed)
    labels = rng.permutation(np.arange(spec.samples) % spec.classes)
    centers = rng.normal(size=(spec.classes, spec.latent_dim))
    centers *= spec.separation / np.sqrt(spec.latent_dim)
    latent = centers[labels] + rng.normal(size=(spec.samples, spec.latent_dim))
    views = []
    for d in spec.view_dims:
        embed = rng.normal(size=(spec.latent_dim, d)) / np.sqrt(spec.latent_dim)
        x = latent @ embed + spec.noise_sigma * rng.normal(size=(spec.samples, d))
        views.append(x.astype(np.float32))
    return MultiViewDataset(tuple(views), labels.astype(np.int64), spec.classes)


# --------------------------------------------------------------- partitioning


@dataclass(frozen=True)
class LocalData:
    """What a client's training code may see: only the views it owns."""

    views: dict[int, np.ndarray]

    @property
    def num_samples(self) -> int:
        return next(iter(self.views.values())).shape[0]


@dataclass(frozen=True)
class ClientShard:
    client_id: int
    kind: str  # "multi_view" | "single_view"
    sample_indices: np.ndarray
    view: int | None = None  # view index for single-view shards
    participates: bool = True

    @property
    def is_multi(self) -> bool:
        return self.kind == "multi_view"

    @property
    def num_samples(self) -> int:
        return int(self.sample_indices.size)

    def view_indices(self, num_views: int) -> list[int]:
        return list(range(num_views)) if self.is_multi else [self.view]

    def local_data(self, dataset: MultiViewDataset) -> LocalData:
        idx = self.sample_indices
        return LocalData({v: dataset.views[v][idx] for v in self.view_indices(dataset.num_views)})


@dataclass(frozen=True)
class PartitionConfig:
    num_multi: int = 4
    num_single: int = 4
    single_view_assignment: tuple[int, ...] | None = None
    dirichlet_beta: float | None = None  # None means IID
    participation_rate: float = 1.0
    seed: int = 0

    def validate(self, num_views: int, num_samples: int) -> None:
        if self.num_multi < 1:
            raise ConfigError("at least one multi-view client is required")
        if self.num_single < 0:
            raise ConfigError("num_single must be non-negative")
        if self.num_multi + self.num_single > num_samples:
            raise ConfigError(
                f"{self.num_multi + self.num_single} clients cannot share {num_samples} samples"
            )
        if self.dirichlet_beta is not None and not self.dirichlet_beta > 0:
            raise ConfigError("dirichlet_beta must be positive")
        if not 0 < self.participation_rate <= 1:
            raise ConfigError("participation_rate must lie in (0, 1]")
        if self.single_view_assignment is not None:
            if len(self.single_view_assignment) != self.num_single:
                raise ConfigError("single_view_assignment needs one view per single-view client")
            bad = [v for v in self.single_view_assignment if not 0 <= v < num_views]
            if bad:
                raise ConfigError(f"view indices {bad} do not exist (dataset has {num_views} views)")


def _capacities(n: int, clients: int) -> np.ndarray:
    caps = np.full(clients, n // clients)
    caps[: n % clients] += 1
    return caps


def _dirichlet_assign(labels: np.ndarray, caps: np.ndarray, beta: float, rng) -> list[np.ndarray]:
    """Per-class Dirichlet proportions over clients, then greedy filling
    that respects per-client capacities."""
    clients = caps.size
    classes = np.unique(labels)
    target = np.zeros((classes.size, clients))
    for row, c in enumerate(classes):
        target[row] = rng.dirichlet(np.full(clients, beta)) * np.sum(labels == c)
    remaining = caps.astype(np.int64).copy()
    got = np.zeros_like(target)
    rows = np.searchsorted(classes, labels)
    owners = np.empty(labels.size, dtype=np.int64)
    # classes interleaved so capacity pressure is shared rather than dumped on the last class
    for i in rng.permutation(labels.size):
        row = rows[i]
        deficit = np.where(remaining > 0, target[row] - got[row], -np.inf)
        k = int(np.argmax(deficit))
        owners[i] = k
        got[row, k] += 1
        remaining[k] -= 1
    return [np.sort(np.flatnonzero(owners == k)) for k in range(clients)]


def draw_participation(num_multi: int, num_clients: int, rate: float, rng) -> np.ndarray:
    """Bernoulli participation flags with at least one multi-view client forced in."""
    flags = rng.random(num_clients) < rate
    if not flags[:num_multi].any():
        flags[int(rng.integers(num_multi))] = True
    return flags


def partition(dataset: MultiViewDataset, config: PartitionConfig) -> list[ClientShard]:
    """Split samples across ``num_multi`` multi-view then ``num_single``
    single-view clients; client ids follow that order."""
    config.validate(dataset.num_views, dataset.num_samples)
    rng = np.random.default_rng(config.seed)
    clients = config.num_multi + config.num_single
    caps = _capacities(dataset.num_samples, clients)
    if config.dirichlet_beta is None:
        order = rng.permutation(dataset.num_samples)
        bounds = np.concatenate([[0], np.cumsum(caps)])
        pieces = [np.sort(order[bounds[k] : bounds[k + 1]]) for k in range(clients)]
    else:
        pieces = _dirichlet_assign(dataset.labels, caps, config.dirichlet_beta, rng)
    assignment = config.single_view_assignment
    if assignment is None:
        assignment = tuple(p % dataset.num_views for p in range(config.num_single))
    flags = draw_participation(config.num_multi, clients, config.participation_rate, rng)
    shards = []
    for k in range(clients):
        if k < config.num_multi:
            shards.append(ClientShard(k, "multi_view", pieces[k], None, bool(flags[k])))
        else:
            shards.append(ClientShard(k, "single_view", pieces[k], assignment[k - config.num_multi], bool(flags[k])))
    return shards
