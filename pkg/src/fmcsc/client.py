"""Local training for multi-view and single-view clients.

Multi-view clients minimise reconstruction plus feature contrast between the
fused common semantics and each view's features, then distill their common
semantics into one single-view replica per view. Single-view clients
minimise reconstruction plus a model contrast that pulls their common
semantics towards a frozen copy of the global model for their view and away
from their own latent codes.

Each training phase (pre-training, a round, a distillation pass) starts a
fresh Adam state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

from .data import LocalData
from .errors import ConfigError, ProtocolError
from .losses import distillation_loss, feature_contrastive_loss, model_contrastive_loss, reconstruction_loss
from .models import (
    Autoencoder,
    Model,
    MultiViewModel,
    SingleViewModel,
    common_semantics,
    congruent,
    copy_model,
    forward_multi,
    mlps,
    with_mlps,
)
from .nncore import MlpParams, Trainable, mlp_backward, mlp_forward


def iter_batches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Shuffled mini-batches; the last partial batch is kept."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _weighted_mean(values: list[tuple[float, int]]) -> float:
    total = sum(n for _, n in values)
    return float(sum(v * n for v, n in values) / total) if total else 0.0


@dataclass(frozen=True)
class ClientUpdate:
    client_id: int
    kind: str
    model: Model
    replicas: dict[int, SingleViewModel] = field(default_factory=dict)
    weight_statistic: float = 0.0
    sample_count: int = 0
    recon_loss: float = 0.0

    @property
    def view(self) -> int | None:
        return self.model.view if isinstance(self.model, SingleViewModel) else None

    def bundles(self) -> list[Model]:
        return [self.model] + [self.replicas[v] for v in sorted(self.replicas)]


# ------------------------------------------------------------ loss + grads


def autoencoder_grads(ae: Autoencoder, x: np.ndarray) -> tuple[float, MlpParams, MlpParams, np.ndarray, object]:
    """Reconstruction loss, decoder/encoder-side pieces for one view.

    Returns ``(loss, decoder_grads, dz_from_decoder, z, encoder_cache)``.
    """
    z, enc_cache = mlp_forward(ae.encoder, x)
    x_hat, dec_cache = mlp_forward(ae.decoder, z)
    loss, g = reconstruction_loss(x, x_hat)
    dz, dec_grads = mlp_backward(ae.decoder, dec_cache, g)
    return loss, dec_grads, dz, z, enc_cache


def reconstruction_loss_and_grads(model: Model, batch: Mapping[int, np.ndarray] | np.ndarray):
    """Reconstruction objective summed over the model's views.

    Gradients are aligned with ``mlps(model)``; projection heads get ``None``.
    """
    if isinstance(model, SingleViewModel):
        x = batch[model.view] if isinstance(batch, Mapping) else batch
        aes = {model.view: (model.autoencoder, x)}
    else:
        aes = {v: (model.autoencoders[v], batch[v]) for v in sorted(batch)}
    total = 0.0
    grads: list[MlpParams | None] = [None] * len(mlps(model))
    for slot, v in enumerate(sorted(aes)):
        ae, x = aes[v]
        loss, dec_grads, dz, _, enc_cache = autoencoder_grads(ae, x)
        _, enc_grads = mlp_backward(ae.encoder, enc_cache, dz, need_input_grad=False)
        total += loss
        grads[2 * slot], grads[2 * slot + 1] = enc_grads, dec_grads
    return total, grads


def multiview_loss_and_grads(model: MultiViewModel, batch: Mapping[int, np.ndarray], tau: float, contrast: bool = True):
    """Reconstruction plus feature contrast for one multi-view batch.

    Returns ``(recon, contrast_value_or_None, grads)``; the contrast value is
    computed whenever the batch has negatives, and only back-propagated
    when ``contrast`` is true.
    """
    order = sorted(batch)
    v_count = model.num_views
    fw = forward_multi(model, batch)
    grads: list[MlpParams | None] = [None] * (3 * v_count + 1)
    dz = {}
    recon = 0.0
    for v in order:
        ae = model.autoencoders[v]
        x_hat, dec_cache = mlp_forward(ae.decoder, fw.z[v])
        loss, g = reconstruction_loss(batch[v], x_hat)
        recon += loss
        dz[v], grads[2 * v + 1] = mlp_backward(ae.decoder, dec_cache, g)
    lc = None
    if fw.h.shape[0] >= 2:
        lc, gh, gh_views = feature_contrastive_loss(fw.h, [fw.h_views[v] for v in order], tau)
        if contrast:
            dzcat, grads[3 * v_count] = mlp_backward(model.fused_head, fw.fused_cache, gh)
            width = model.autoencoders[0].encoder.out_dim
            for v in order:
                dz[v] = dz[v] + dzcat[:, v * width : (v + 1) * width]
                dzv, grads[2 * v_count + v] = mlp_backward(model.view_heads[v], fw.head_cache[v], gh_views[v])
                dz[v] = dz[v] + dzv
    for v in order:
        _, grads[2 * v] = mlp_backward(model.autoencoders[v].encoder, fw.enc_cache[v], dz[v], need_input_grad=False)
    return recon, lc, grads


def singleview_loss_and_grads(model: SingleViewModel, x: np.ndarray, h_global: np.ndarray, tau: float, contrast: bool = True):
    """Reconstruction plus model contrast against fixed global features."""
    ae = model.autoencoder
    recon, dec_grads, dz, z, enc_cache = autoencoder_grads(ae, x)
    h, head_cache = mlp_forward(model.common_head, z)
    lc, gh, gz = model_contrastive_loss(h, h_global, z, tau)
    head_grads = None
    if contrast:
        dzh, head_grads = mlp_backward(model.common_head, head_cache, gh)
        dz = dz + dzh + gz
    _, enc_grads = mlp_backward(ae.encoder, enc_cache, dz, need_input_grad=False)
    return recon, lc, [enc_grads, dec_grads, None, head_grads]


class _Optimizer:
    """Adam over every MLP of a bundle; parts with no gradient are left alone."""

    def __init__(self, model: Model, learning_rate: float):
        self.template = model
        self.parts = [Trainable(p) for p in mlps(model)]
        self.learning_rate = learning_rate

    @property
    def model(self) -> Model:
        return with_mlps(self.template, [t.params for t in self.parts])

    def step(self, grads) -> None:
        for part, g in zip(self.parts, grads):
            if g is not None:
                part.step(g, self.learning_rate)


# ------------------------------------------------------------------ clients


class _Client:
    kind = ""

    def __init__(self, client_id: int, data: LocalData, model: Model, tau: float = 0.5, learning_rate: float = 3e-4):
        if data.num_samples == 0:
            raise ConfigError(f"client {client_id} has an empty shard")
        if tau <= 0 or learning_rate <= 0:
            raise ConfigError("temperature and learning rate must be positive")
        self.client_id = client_id
        self.data = data
        self.model = model
        self.tau = tau
        self.learning_rate = learning_rate

    @property
    def num_samples(self) -> int:
        return self.data.num_samples

    def pretrain(self, epochs: int, batch_size: int, rng: np.random.Generator) -> list[float]:
        """Train the autoencoders on reconstruction only; returns per-epoch mean loss."""
        if epochs < 0:
            raise ConfigError("epochs must be non-negative")
        opt = _Optimizer(self.model, self.learning_rate)
        trace = []
        for _ in range(epochs):
            losses = []
            for idx in iter_batches(self.num_samples, batch_size, rng):
                batch = {v: x[idx] for v, x in self.data.views.items()}
                loss, grads = reconstruction_loss_and_grads(opt.model, batch)
                opt.step(grads)
                losses.append((loss, idx.size))
            trace.append(_weighted_mean(losses))
        self.model = opt.model
        return trace

    def load_autoencoders(self, autoencoders: Mapping[int, Autoencoder]) -> None:
        raise NotImplementedError

    def common_semantics_with(self, model: Model) -> np.ndarray:
        return common_semantics(model, self.data.views)


class MultiViewClient(_Client):
    kind = "multi_view"

    def __init__(self, client_id, data, model: MultiViewModel, replicas: Mapping[int, SingleViewModel] | None = None, **kw):
        super().__init__(client_id, data, model, **kw)
        self.replicas: dict[int, SingleViewModel] = dict(replicas or {})
        self.last_recon = 0.0

    def load_autoencoders(self, autoencoders: Mapping[int, Autoencoder]) -> None:
        aes = tuple(autoencoders[v] for v in range(self.model.num_views))
        self.model = MultiViewModel(aes, self.model.view_heads, self.model.fused_head)

    def train_round(
        self,
        global_multi: MultiViewModel,
        global_per_view: Mapping[int, SingleViewModel],
        epochs: int,
        batch_size: int,
        rng: np.random.Generator,
        *,
        distill_epochs: int | None = None,
        feature_contrast: bool = True,
        distill: bool = True,
    ) -> ClientUpdate:
        if not congruent(global_multi, self.model):
            raise ProtocolError(f"client {self.client_id}: global multi-view model has a different architecture")
        for v in range(self.model.num_views):
            if v not in global_per_view or global_per_view[v].view != v:
                raise ProtocolError(f"client {self.client_id}: missing global model for view {v}")
        self.model = copy_model(global_multi)
        self.replicas = {v: copy_model(global_per_view[v]) for v in range(self.model.num_views)}
        opt = _Optimizer(self.model, self.learning_rate)
        recon_hist, contrast_hist = [], []
        for _ in range(epochs):
            recon_hist, contrast_hist = [], []
            for idx in iter_batches(self.num_samples, batch_size, rng):
                batch = {v: x[idx] for v, x in self.data.views.items()}
                recon, lc, grads = multiview_loss_and_grads(opt.model, batch, self.tau, feature_contrast)
                opt.step(grads)
                recon_hist.append((recon, idx.size))
                if lc is not None:
                    contrast_hist.append((lc, idx.size))
        self.model = opt.model
        if epochs == 0:
            recon_hist, contrast_hist = self._evaluate(batch_size)
        if distill:
            self.distill_global_replicas(epochs if distill_epochs is None else distill_epochs, batch_size, rng)
        self.last_recon = _weighted_mean(recon_hist)
        return ClientUpdate(
            self.client_id,
            self.kind,
            self.model,
            dict(self.replicas),
            _weighted_mean(contrast_hist),
            self.num_samples,
            self.last_recon,
        )

    def _evaluate(self, batch_size: int):
        recon_hist, contrast_hist = [], []
        for start in range(0, self.num_samples, batch_size):
            batch = {v: x[start : start + batch_size] for v, x in self.data.views.items()}
            recon, lc, _ = multiview_loss_and_grads(self.model, batch, self.tau, contrast=False)
            recon_hist.append((recon, len(batch[0])))
            if lc is not None:
                contrast_hist.append((lc, len(batch[0])))
        return recon_hist, contrast_hist

    def distill_global_replicas(self, epochs: int, batch_size: int, rng: np.random.Generator) -> dict[int, list[float]]:
        """Fit each replica's common semantics on view ``v`` to the frozen local
        model's fused common semantics on the same samples.

        Returns the per-epoch mean squared distance for each view.
        """
        target = common_semantics(self.model, self.data.views)
        traces = {}
        for v in sorted(self.replicas):
            self.replicas[v], traces[v] = distill_replica(
                self.replicas[v], self.data.views[v], target, epochs, batch_size, self.learning_rate, rng
            )
        return traces


def distill_replica(
    replica: SingleViewModel,
    x: np.ndarray,
    target: np.ndarray,
    epochs: int,
    batch_size: int,
    learning_rate: float,
    rng: np.random.Generator,
) -> tuple[SingleViewModel, list[float]]:
    """Train the replica's encoder and common head so its common semantics
    match ``target`` row by row. Decoder and view head are not touched."""
    enc = Trainable(replica.autoencoder.encoder)
    head = Trainable(replica.common_head)
    trace = []
    for _ in range(epochs):
        losses = []
        for idx in iter_batches(x.shape[0], batch_size, rng):
            z, enc_cache = mlp_forward(enc.params, x[idx])
            h, head_cache = mlp_forward(head.params, z)
            loss, g = distillation_loss(h, target[idx])
            dz, head_grads = mlp_backward(head.params, head_cache, g)
            _, enc_grads = mlp_backward(enc.params, enc_cache, dz, need_input_grad=False)
            enc.step(enc_grads, learning_rate)
            head.step(head_grads, learning_rate)
            losses.append((loss, idx.size))
        trace.append(_weighted_mean(losses))
    updated = SingleViewModel(
        replica.view, Autoencoder(enc.params, replica.autoencoder.decoder), replica.view_head, head.params
    )
    return updated, trace


class SingleViewClient(_Client):
    kind = "single_view"

    def __init__(self, client_id, data, model: SingleViewModel, **kw):
        super().__init__(client_id, data, model, **kw)
        if list(data.views) != [model.view]:
            raise ConfigError(f"client {client_id}: local data must hold exactly view {model.view}")
        self.global_copy: SingleViewModel | None = None
        self.last_recon = 0.0

    @property
    def view(self) -> int:
        return self.model.view

    def load_autoencoders(self, autoencoders: Mapping[int, Autoencoder]) -> None:
        m = self.model
        self.model = SingleViewModel(m.view, autoencoders[m.view], m.view_head, m.common_head)

    def train_round(
        self,
        global_model: SingleViewModel,
        epochs: int,
        batch_size: int,
        rng: np.random.Generator,
        *,
        model_contrast: bool = True,
    ) -> ClientUpdate:
        if not congruent(global_model, self.model):
            raise ProtocolError(f"client {self.client_id}: global model for view {self.view} has a different architecture")
        self.global_copy = global_model
        if not model_contrast:
            # without model contrast the local model is simply replaced by the global one
            self.model = copy_model(global_model)
        x = self.data.views[self.view]
        h_global = common_semantics(global_model, x)
        opt = _Optimizer(self.model, self.learning_rate)
        recon_hist, contrast_hist = [], []
        for _ in range(epochs):
            recon_hist, contrast_hist = [], []
            for idx in iter_batches(self.num_samples, batch_size, rng):
                recon, lc, grads = singleview_loss_and_grads(opt.model, x[idx], h_global[idx], self.tau, model_contrast)
                opt.step(grads)
                recon_hist.append((recon, idx.size))
                contrast_hist.append((lc, idx.size))
        self.model = opt.model
        if epochs == 0:
            for start in range(0, self.num_samples, batch_size):
                sl = slice(start, start + batch_size)
                recon, lc, _ = singleview_loss_and_grads(self.model, x[sl], h_global[sl], self.tau, False)
                n = x[sl].shape[0]
                recon_hist.append((recon, n))
                contrast_hist.append((lc, n))
        self.last_recon = _weighted_mean(recon_hist)
        return ClientUpdate(
            self.client_id,
            self.kind,
            self.model,
            {},
            _weighted_mean(contrast_hist),
            self.num_samples,
            self.last_recon,
        )
