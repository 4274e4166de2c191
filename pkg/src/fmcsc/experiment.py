"""End-to-end federated run: data, partition, pre-training, R rounds of
client training and server aggregation, and pooled evaluation after each stage."""

from __future__ import annotations

import csv
import dataclasses
import io
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .client import ClientUpdate, MultiViewClient, SingleViewClient, reconstruction_loss_and_grads
from .config import ExperimentConfig, config_echo
from .data import (
    MultiViewDataset,
    draw_participation,
    generate_synthetic,
    load_dataset,
    minmax_normalize,
    partition,
)
from .errors import DataError, FmcscError
from .evaluation import ClusterMetrics, kmeans, score
from .models import (
    Architecture,
    MultiViewModel,
    SingleViewModel,
    common_semantics,
    copy_model,
    init_autoencoder,
    init_fused_head,
    init_view_head,
)
from .nncore import normalize_rows
from .rng import stream
from .server import (
    GlobalModels,
    PretrainUpload,
    aggregate,
    apply_dp_noise,
    compute_weights,
    consensus_init,
    initial_globals,
    noise_bundle,
    uniform_weights,
)

METRIC_COLUMNS = (
    "round",
    "acc",
    "nmi",
    "ari",
    "mean_recon_loss_mv",
    "mean_contrast_loss_mv",
    "mean_recon_loss_sv",
    "mean_contrast_loss_sv",
    "min_weight",
    "max_weight",
)


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    acc: float
    nmi: float
    ari: float
    mean_recon_loss_mv: float
    mean_contrast_loss_mv: float
    mean_recon_loss_sv: float
    mean_contrast_loss_sv: float
    min_weight: float
    max_weight: float

    def values(self) -> tuple:
        return tuple(getattr(self, c) for c in METRIC_COLUMNS)


@dataclass(frozen=True)
class MetricsReport:
    rows: tuple[RoundMetrics, ...]  # round 0 is the pre-training stage
    config_echo: str
    seed: int
    wall_time: float
    embedding: np.ndarray  # N x 2 PCA of the final pooled common semantics
    pred_labels: np.ndarray
    true_labels: np.ndarray
    weights: tuple[dict[str, float], ...] = ()

    @property
    def final(self) -> ClusterMetrics:
        last = self.rows[-1]
        return ClusterMetrics(last.acc, last.nmi, last.ari)


# ---------------------------------------------------------------- helpers


def load_data(config: ExperimentConfig) -> MultiViewDataset:
    if config.data_path is not None:
        return load_dataset(config.data_path, normalize=True)
    return minmax_normalize(generate_synthetic(config.synthetic))


def architecture(config: ExperimentConfig, dataset: MultiViewDataset) -> Architecture:
    m = config.model
    return Architecture(
        view_dims=tuple(dataset.view_dims),
        hidden=tuple(m.hidden),
        latent_dim=m.latent_dim,
        head_hidden=m.head_hidden,
        feature_dim=m.feature_dim,
    )


def pca_2d(h: np.ndarray) -> np.ndarray:
    """Project onto the top two principal axes; each axis is signed so its
    largest-magnitude loading is positive."""
    x = np.asarray(h, dtype=np.float64)
    x = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(x, full_matrices=False)
    axes = vt[:2]
    for row in axes:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    out = x @ axes.T
    if out.shape[1] < 2:
        out = np.pad(out, ((0, 0), (0, 2 - out.shape[1])))
    return out


def _mean(values: Sequence[float]) -> float:
    return float(np.mean(values)) if values else 0.0


def _contextual(context: str, fn: Callable, *args, **kw):
    try:
        return fn(*args, **kw)
    except FmcscError as exc:
        raise exc.with_context(context)


class _Run:
    """Mutable state of one experiment; every random draw comes from a named stream."""

    def __init__(self, config: ExperimentConfig):
        config.validate()
        self.config = config
        self.seed = config.seed
        self.dataset = load_data(config)
        part = dataclasses.replace(config.partition, seed=int(stream(self.seed, "partition", config.partition.seed).integers(2**31)))
        self.shards = partition(self.dataset, part)
        self.arch = architecture(config, self.dataset)
        self.k = config.eval.clusters or self.dataset.num_classes
        self.num_views = self.dataset.num_views
        t = config.train
        kw_m = dict(tau=t.tau_m, learning_rate=t.learning_rate)
        kw_p = dict(tau=t.tau_p, learning_rate=t.learning_rate)
        # projection heads share one init so their outputs start in a common space
        head_rng = stream(self.seed, "init", "heads")
        view_heads = tuple(init_view_head(self.arch, head_rng) for _ in range(self.num_views))
        fused = init_fused_head(self.arch, head_rng)
        common = {v: init_view_head(self.arch, head_rng) for v in range(self.num_views)}
        self.templates = {
            v: SingleViewModel(v, init_autoencoder(self.arch, v, stream(self.seed, "init", "template", v)), view_heads[v], common[v])
            for v in range(self.num_views)
        }
        self.clients: list[MultiViewClient | SingleViewClient] = []
        for shard in self.shards:
            rng = stream(self.seed, "init", "client", shard.client_id)
            data = shard.local_data(self.dataset)
            if shard.is_multi:
                aes = tuple(init_autoencoder(self.arch, v, rng) for v in range(self.num_views))
                model = MultiViewModel(aes, view_heads, fused)
                self.clients.append(MultiViewClient(shard.client_id, data, model, **kw_m))
            else:
                v = shard.view
                model = SingleViewModel(v, init_autoencoder(self.arch, v, rng), view_heads[v], common[v])
                self.clients.append(SingleViewClient(shard.client_id, data, model, **kw_p))
        self.pretrain_recon: dict[int, float] = {}

    # ------------------------------------------------------------ stages

    def _map(self, fn, items):
        items = list(items)
        if self.config.workers == 1 or len(items) <= 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
            return list(pool.map(fn, items))

    def _pretrain_one(self, client) -> float:
        t = self.config.train
        rng = stream(self.seed, "pretrain", client.client_id)
        trace = _contextual(f"pre-training, client {client.client_id}", client.pretrain, t.pretrain_epochs, t.batch_size, rng)
        return trace[-1] if trace else self._initial_recon(client)

    def _initial_recon(self, client) -> float:
        return float(reconstruction_loss_and_grads(client.model, client.data.views)[0])

    def pretrain(self) -> GlobalModels:
        starts = {c.client_id: copy_model(c.model) for c in self.clients}
        if self.config.toggles.consensus_pretraining:
            multi = [c for c in self.clients if c.kind == "multi_view"]
            source = min(multi, key=lambda c: c.client_id)
            self.pretrain_recon[source.client_id] = self._pretrain_one(source)
            upload = self._noised_pretrain_upload(source, starts[source.client_id])
            broadcast = consensus_init([upload])
            for c in self.clients:
                if c is not source:
                    c.load_autoencoders(broadcast.for_views(sorted(c.data.views)))
                    starts[c.client_id] = copy_model(c.model)
            others = [c for c in self.clients if c is not source]
            self.pretrain_recon.update(zip((c.client_id for c in others), self._map(self._pretrain_one, others)))
            uploads = [upload] + [self._noised_pretrain_upload(c, starts[c.client_id]) for c in others]
        else:
            self.pretrain_recon.update(zip((c.client_id for c in self.clients), self._map(self._pretrain_one, self.clients)))
            uploads = [self._noised_pretrain_upload(c, starts[c.client_id]) for c in self.clients]
        return initial_globals(uploads, self.templates)

    def _noised_pretrain_upload(self, client, start) -> PretrainUpload:
        model = client.model
        dp = self.config.dp
        if dp.enabled:
            model = noise_bundle(model, dp, stream(self.seed, "dp", "pretrain", client.client_id), start)
        return PretrainUpload(client.client_id, client.kind, model)

    def _client_round(self, item) -> ClientUpdate:
        client, glob, r = item
        t = self.config.train
        tg = self.config.toggles
        rng = stream(self.seed, "round", r, "client", client.client_id)
        ctx = f"round {r}, client {client.client_id}"
        if client.kind == "multi_view":
            update = _contextual(
                ctx,
                client.train_round,
                glob.multi,
                glob.per_view,
                t.local_epochs,
                t.batch_size,
                rng,
                distill_epochs=t.distill_epochs,
                feature_contrast=tg.feature_contrast,
                distill=tg.global_distillation,
            )
        else:
            update = _contextual(
                ctx, client.train_round, glob.per_view[client.view], t.local_epochs, t.batch_size, rng, model_contrast=tg.model_contrast
            )
        if self.config.dp.enabled:
            update = apply_dp_noise(update, self.config.dp, stream(self.seed, "dp", "round", r, client.client_id), glob)
        return update

    def round(self, glob: GlobalModels, r: int):
        cfg = self.config
        flags = draw_participation(
            cfg.partition.num_multi, len(self.clients), cfg.partition.participation_rate, stream(self.seed, "participation", r)
        )
        active = [c for c, f in zip(self.clients, flags) if f]
        updates = self._map(self._client_round, [(c, glob, r) for c in active])
        updates.sort(key=lambda u: u.client_id)
        w = cfg.weights
        try:
            if cfg.toggles.weighted_aggregation:
                weights = compute_weights(updates, self.num_views, w.delta_m, w.delta_p, w.per_type_normalization)
            else:
                weights = uniform_weights(updates, self.num_views)
            new_glob = aggregate(updates, weights, r)
        except FmcscError as exc:
            raise exc.with_context(f"round {r}, server")
        return new_glob, updates, weights

    def pooled_semantics(self, glob: GlobalModels) -> tuple[np.ndarray, np.ndarray]:
        """Every client's common semantics under its corresponding global model,
        stacked in client-id order, with the matching true labels."""
        feats, labels = [], []
        for client, shard in zip(self.clients, self.shards):
            model = glob.multi if client.kind == "multi_view" else glob.per_view[client.view]
            feats.append(common_semantics(model, client.data.views).astype(np.float64))
            labels.append(self.dataset.labels[shard.sample_indices])
        return np.concatenate(feats), np.concatenate(labels)

    def evaluate(self, glob: GlobalModels, r: int):
        h, truth = self.pooled_semantics(glob)
        e = self.config.eval
        if e.normalize_features:
            h = normalize_rows(h)[0]
        assignment = kmeans(h, self.k, seed=int(stream(self.seed, "kmeans", r).integers(2**31)), restarts=e.restarts, max_iters=e.max_iters)
        return score(assignment.labels, truth), h, assignment.labels, truth


def _weight_summary(weights) -> tuple[float, float, dict[str, float]]:
    flat = {f"multi:{cid}": a for cid, a in sorted(weights.alpha_multi.items())}
    flat.update({f"replica:{cid}:{v}": a for (cid, v), a in sorted(weights.alpha_multi_replica.items())})
    flat.update({f"single:{cid}": a for cid, a in sorted(weights.alpha_single.items())})
    values = list(flat.values())
    return min(values), max(values), flat


def run_experiment(config: ExperimentConfig) -> MetricsReport:
    start = time.perf_counter()
    run = _Run(config)
    glob = run.pretrain()
    metrics, h, pred, truth = run.evaluate(glob, 0)
    multi_ids = {c.client_id for c in run.clients if c.kind == "multi_view"}
    pre_w = uniform_weights(
        [ClientUpdate(c.client_id, c.kind, c.model) for c in run.clients], run.num_views
    )
    lo, hi, flat = _weight_summary(pre_w)
    rows = [
        RoundMetrics(
            0,
            metrics.acc,
            metrics.nmi,
            metrics.ari,
            _mean([v for k, v in sorted(run.pretrain_recon.items()) if k in multi_ids]),
            0.0,
            _mean([v for k, v in sorted(run.pretrain_recon.items()) if k not in multi_ids]),
            0.0,
            lo,
            hi,
        )
    ]
    weight_log = [flat]
    for r in range(1, config.train.rounds + 1):
        glob, updates, weights = run.round(glob, r)
        metrics, h, pred, truth = run.evaluate(glob, r)
        lo, hi, flat = _weight_summary(weights)
        mv = [u for u in updates if u.kind == "multi_view"]
        sv = [u for u in updates if u.kind == "single_view"]
        rows.append(
            RoundMetrics(
                r,
                metrics.acc,
                metrics.nmi,
                metrics.ari,
                _mean([u.recon_loss for u in mv]),
                _mean([u.weight_statistic for u in mv]),
                _mean([u.recon_loss for u in sv]),
                _mean([u.weight_statistic for u in sv]),
                lo,
                hi,
            )
        )
        weight_log.append(flat)
    return MetricsReport(
        tuple(rows),
        config_echo(config),
        config.seed,
        time.perf_counter() - start,
        pca_2d(h),
        pred,
        truth,
        tuple(weight_log),
    )


# ---------------------------------------------------------------- emission


def metrics_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)
    for row in report.rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row.values()])
    return buf.getvalue()


def embedding_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("x", "y", "pred_label", "true_label"))
    for (x, y), p, t in zip(report.embedding, report.pred_labels, report.true_labels):
        writer.writerow((repr(float(x)), repr(float(y)), int(p), int(t)))
    return buf.getvalue()


def emit_report(report: MetricsReport, path: str | Path) -> list[Path]:
    out = Path(path)
    files = {
        "metrics.csv": metrics_csv(report),
        "config.echo": report.config_echo,
        "embedding.csv": embedding_csv(report),
    }
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            target = out / name
            target.write_text(text)
            written.append(target)
    except OSError as exc:
        raise DataError(f"cannot write report: {exc.strerror}", str(out)) from None
    return written
