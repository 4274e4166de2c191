"""Model bundles exchanged between clients and server.

A multi-view model holds one autoencoder and one projection head per view
plus a fused head over the concatenated latent codes. A single-view model
holds one autoencoder, its view head and a common-semantics head. Bundles
of the same kind and view are architecture-congruent, which is what the
server's specific aggregation relies on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ProtocolError, ShapeError
from .nncore import MlpCache, MlpParams, init_mlp, mlp_forward


@dataclass(frozen=True)
class Architecture:
    view_dims: tuple[int, ...]
    hidden: tuple[int, ...] = (500, 500, 2000)
    latent_dim: int = 20
    head_hidden: int = 256
    feature_dim: int = 20

    @property
    def num_views(self) -> int:
        return len(self.view_dims)

    def encoder_dims(self, v: int) -> list[int]:
        return [self.view_dims[v], *self.hidden, self.latent_dim]

    def decoder_dims(self, v: int) -> list[int]:
        return [self.latent_dim, *reversed(self.hidden), self.view_dims[v]]

    def view_head_dims(self) -> list[int]:
        return [self.latent_dim, self.head_hidden, self.feature_dim]

    def fused_head_dims(self) -> list[int]:
        return [self.latent_dim * self.num_views, self.head_hidden, self.feature_dim]


@dataclass(frozen=True)
class Autoencoder:
    encoder: MlpParams
    decoder: MlpParams


@dataclass(frozen=True)
class MultiViewModel:
    autoencoders: tuple[Autoencoder, ...]  # ascending view order
    view_heads: tuple[MlpParams, ...]
    fused_head: MlpParams

    @property
    def num_views(self) -> int:
        return len(self.autoencoders)


@dataclass(frozen=True)
class SingleViewModel:
    view: int
    autoencoder: Autoencoder
    view_head: MlpParams
    common_head: MlpParams


Model = MultiViewModel | SingleViewModel


def init_autoencoder(arch: Architecture, v: int, rng: np.random.Generator) -> Autoencoder:
    return Autoencoder(init_mlp(arch.encoder_dims(v), rng), init_mlp(arch.decoder_dims(v), rng))


def init_view_head(arch: Architecture, rng: np.random.Generator) -> MlpParams:
    return init_mlp(arch.view_head_dims(), rng)


def init_fused_head(arch: Architecture, rng: np.random.Generator) -> MlpParams:
    return init_mlp(arch.fused_head_dims(), rng)


# ------------------------------------------------------------------ forward


@dataclass
class MultiViewForward:
    z: dict[int, np.ndarray]
    h_views: dict[int, np.ndarray]
    h: np.ndarray
    enc_cache: dict[int, MlpCache]
    head_cache: dict[int, MlpCache]
    fused_cache: MlpCache


def forward_multi(model: MultiViewModel, batch: Mapping[int, np.ndarray]) -> MultiViewForward:
    """Latent codes, per-view features and fused common semantics.

    Views are always concatenated in ascending view index, whatever order
    ``batch`` lists them in.
    """
    order = sorted(batch)
    if order != list(range(model.num_views)):
        raise ShapeError(f"multi-view batch must cover views 0..{model.num_views - 1}, got {order}")
    z, h_views, enc_cache, head_cache = {}, {}, {}, {}
    for v in order:
        z[v], enc_cache[v] = mlp_forward(model.autoencoders[v].encoder, batch[v])
        h_views[v], head_cache[v] = mlp_forward(model.view_heads[v], z[v])
    h, fused_cache = mlp_forward(model.fused_head, np.concatenate([z[v] for v in order], axis=1))
    return MultiViewForward(z, h_views, h, enc_cache, head_cache, fused_cache)


def project_common(model: Model, batch: Mapping[int, np.ndarray] | np.ndarray):
    """Common semantics ``H`` plus per-view features and latent codes.

    Multi-view: returns ``(H, {v: H^v}, {v: Z^v})``. Single-view: returns
    ``(H, H^v, Z^v)``.
    """
    if isinstance(model, MultiViewModel):
        fw = forward_multi(model, batch)
        return fw.h, fw.h_views, fw.z
    x = batch[model.view] if isinstance(batch, Mapping) else batch
    z, _ = mlp_forward(model.autoencoder.encoder, x)
    h_view, _ = mlp_forward(model.view_head, z)
    h, _ = mlp_forward(model.common_head, z)
    return h, h_view, z


def common_semantics(model: Model, batch: Mapping[int, np.ndarray] | np.ndarray) -> np.ndarray:
    if isinstance(model, MultiViewModel):
        return project_common(model, batch)[0]
    x = batch[model.view] if isinstance(batch, Mapping) else batch
    z, _ = mlp_forward(model.autoencoder.encoder, x)
    return mlp_forward(model.common_head, z)[0]


# ---------------------------------------------------- parameter bundle algebra


def mlps(model: Model) -> list[MlpParams]:
    if isinstance(model, MultiViewModel):
        out = []
        for ae in model.autoencoders:
            out += [ae.encoder, ae.decoder]
        return out + list(model.view_heads) + [model.fused_head]
    return [model.autoencoder.encoder, model.autoencoder.decoder, model.view_head, model.common_head]


def with_mlps(model: Model, parts: Sequence[MlpParams]) -> Model:
    parts = list(parts)
    if isinstance(model, MultiViewModel):
        v = model.num_views
        aes = tuple(Autoencoder(parts[2 * i], parts[2 * i + 1]) for i in range(v))
        return MultiViewModel(aes, tuple(parts[2 * v : 3 * v]), parts[3 * v])
    return SingleViewModel(model.view, Autoencoder(parts[0], parts[1]), parts[2], parts[3])


def arrays(model: Model) -> list[np.ndarray]:
    return [a for mlp in mlps(model) for a in mlp.arrays()]


def with_arrays(model: Model, new: Sequence[np.ndarray]) -> Model:
    new = list(new)
    parts, pos = [], 0
    for mlp in mlps(model):
        n = 2 * len(mlp.layers)
        parts.append(mlp.with_arrays(new[pos : pos + n]))
        pos += n
    if pos != len(new):
        raise ShapeError(f"bundle expects {pos} arrays, got {len(new)}")
    return with_mlps(model, parts)


def flatten(model: Model) -> np.ndarray:
    return np.concatenate([a.ravel() for a in arrays(model)])


def unflatten(template: Model, vector: np.ndarray) -> Model:
    out, pos = [], 0
    for a in arrays(template):
        out.append(vector[pos : pos + a.size].reshape(a.shape).astype(a.dtype))
        pos += a.size
    if pos != vector.size:
        raise ShapeError(f"vector has {vector.size} entries, bundle needs {pos}")
    return with_arrays(template, out)


def num_parameters(model: Model) -> int:
    return sum(a.size for a in arrays(model))


def congruent(a: Model, b: Model) -> bool:
    if type(a) is not type(b):
        return False
    if isinstance(a, SingleViewModel) and a.view != b.view:
        return False
    pa, pb = mlps(a), mlps(b)
    return len(pa) == len(pb) and all(x.congruent(y) for x, y in zip(pa, pb))


def combine(models: Sequence[Model], weights: Sequence[float]) -> Model:
    """Parameter-wise convex combination, accumulated in float64.

    Single-view bundles of one view can also absorb multi-view replicas since
    replicas are single-view bundles themselves.
    """
    if not models or len(models) != len(weights):
        raise ProtocolError("combine needs one weight per model and at least one model")
    first = models[0]
    for other in models[1:]:
        if not congruent(first, other):
            raise ProtocolError("cannot aggregate architecture-incongruent bundles")
    acc = [np.zeros(a.shape, dtype=np.float64) for a in arrays(first)]
    for model, w in zip(models, weights):
        for total, a in zip(acc, arrays(model)):
            total += float(w) * a
    return with_arrays(first, [t.astype(a.dtype) for t, a in zip(acc, arrays(first))])


def copy_model(model: Model) -> Model:
    return with_arrays(model, [a.copy() for a in arrays(model)])


def bitwise_equal(a: Model, b: Model) -> bool:
    return congruent(a, b) and all(x.tobytes() == y.tobytes() for x, y in zip(arrays(a), arrays(b)))
