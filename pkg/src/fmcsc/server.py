"""Server side: consensus broadcast, mutual-information surrogate weights,
specific aggregation into V+1 global models, and Laplace noising of uploads."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .client import ClientUpdate
from .errors import ConfigError, ProtocolError
from .models import (
    Autoencoder,
    Model,
    MultiViewModel,
    SingleViewModel,
    combine,
    flatten,
    unflatten,
)


@dataclass(frozen=True)
class GlobalModels:
    multi: MultiViewModel
    per_view: dict[int, SingleViewModel]
    round_index: int = 0

    def __post_init__(self):
        if sorted(self.per_view) != list(range(self.multi.num_views)):
            raise ProtocolError("need exactly one single-view global model per view")

    def count(self) -> int:
        return 1 + len(self.per_view)


# ------------------------------------------------------------------ consensus


@dataclass(frozen=True)
class PretrainUpload:
    client_id: int
    kind: str
    model: Model


@dataclass(frozen=True)
class ConsensusBroadcast:
    source_client_id: int
    autoencoders: dict[int, Autoencoder]

    def for_views(self, views: Sequence[int]) -> dict[int, Autoencoder]:
        return {v: self.autoencoders[v] for v in views}


def consensus_init(uploads: Sequence[PretrainUpload]) -> ConsensusBroadcast:
    """Pick the multi-view client that finished pre-training first and relay
    its encoder/decoder pairs.

    The simulator has no wall clock, so "first" is the lowest client id.
    """
    multi = [u for u in uploads if u.kind == "multi_view"]
    if not multi:
        raise ProtocolError("consensus pre-training needs a multi-view client upload")
    source = min(multi, key=lambda u: u.client_id)
    aes = {v: ae for v, ae in enumerate(source.model.autoencoders)}
    return ConsensusBroadcast(source.client_id, aes)


def initial_globals(uploads: Sequence[PretrainUpload], templates: Mapping[int, SingleViewModel]) -> GlobalModels:
    """Global models from pre-trained uploads with uniform weights.

    The multi-view global averages the multi-view uploads. For view ``v`` the
    autoencoder and view head average every upload holding that view; the
    common head averages single-view uploads of ``v`` and falls back to
    ``templates[v]`` when there are none.
    """
    multi = [u.model for u in sorted(uploads, key=lambda u: u.client_id) if u.kind == "multi_view"]
    if not multi:
        raise ProtocolError("no multi-view upload to initialize the global model")
    singles = [u.model for u in sorted(uploads, key=lambda u: u.client_id) if u.kind == "single_view"]
    g_multi = combine(multi, [1.0 / len(multi)] * len(multi))
    per_view = {}
    for v, template in templates.items():
        carriers = [
            SingleViewModel(v, m.autoencoders[v], m.view_heads[v], template.common_head) for m in multi
        ] + [s for s in singles if s.view == v]
        merged = combine(carriers, [1.0 / len(carriers)] * len(carriers))
        own = [s for s in singles if s.view == v]
        if own:
            heads = combine(own, [1.0 / len(own)] * len(own)).common_head
        else:
            heads = template.common_head
        per_view[v] = replace(merged, common_head=heads)
    return GlobalModels(g_multi, per_view, 0)


# -------------------------------------------------------------------- weights


@dataclass(frozen=True)
class AggregationWeights:
    alpha_multi: dict[int, float]
    alpha_multi_replica: dict[tuple[int, int], float]
    alpha_single: dict[int, float]
    delta_m: float = 1.0
    delta_p: float = 1.0

    def all_values(self) -> list[float]:
        return list(self.alpha_multi.values()) + list(self.alpha_multi_replica.values()) + list(self.alpha_single.values())

    def group_sums(self, num_views: int) -> list[float]:
        sums = [math.fsum(self.alpha_multi.values())]
        for v in range(num_views):
            sums.append(
                math.fsum(w for (_, vv), w in self.alpha_multi_replica.items() if vv == v)
                + math.fsum(w for cid, w in self.alpha_single.items() if self._single_views.get(cid) == v)
            )
        return sums

    # client id -> view, filled by compute_weights for group bookkeeping
    _single_views: dict[int, int] = field(default_factory=dict, compare=False, repr=False)


def multi_score(consistency_loss: float, sample_count: int, num_views: int, delta_m: float) -> float:
    """Lower bound on the summed view/common mutual information."""
    return num_views * math.log(sample_count) - delta_m * consistency_loss


def single_score(consistency_loss: float, delta_p: float) -> float:
    """Upper bound on the global-vs-latent mutual-information gap."""
    return -2.0 * delta_p * consistency_loss


def _softmax(scores: Sequence[float]) -> list[float]:
    s = np.asarray(scores, dtype=np.float64)
    e = np.exp(s - s.max())
    w = e / e.sum()
    return w.tolist()


def _check_delta(name: str, value: float) -> None:
    if not 0 < value <= 1:
        raise ConfigError(f"{name} must lie in (0, 1], got {value}")


def compute_weights(
    updates: Sequence[ClientUpdate],
    num_views: int,
    delta_m: float = 1.0,
    delta_p: float = 1.0,
    per_type_normalization: bool = False,
) -> AggregationWeights:
    """Softmax-normalized mutual-information scores per aggregation group.

    With ``per_type_normalization`` the replica and single-view members of a
    per-view group are softmaxed separately and then mixed by their share of
    the group's samples, which removes the ``V log|M_m|`` offset between the
    two score types.
    """
    _check_delta("delta_m", delta_m)
    _check_delta("delta_p", delta_p)
    ups = sorted(updates, key=lambda u: u.client_id)
    multi = [u for u in ups if u.kind == "multi_view"]
    single = [u for u in ups if u.kind == "single_view"]
    if not multi:
        raise ProtocolError("the multi-view aggregation group is empty")
    m_scores = [multi_score(u.weight_statistic, u.sample_count, num_views, delta_m) for u in multi]
    alpha_multi = dict(zip((u.client_id for u in multi), _softmax(m_scores)))
    alpha_rep: dict[tuple[int, int], float] = {}
    alpha_single: dict[int, float] = {}
    for v in range(num_views):
        own = [u for u in single if u.view == v]
        s_scores = [single_score(u.weight_statistic, delta_p) for u in own]
        if per_type_normalization and own:
            n_rep = sum(u.sample_count for u in multi)
            n_own = sum(u.sample_count for u in own)
            share_rep = n_rep / (n_rep + n_own)
            w_rep = [share_rep * w for w in _softmax(m_scores)]
            w_own = [(1 - share_rep) * w for w in _softmax(s_scores)]
        else:
            w = _softmax(m_scores + s_scores)
            w_rep, w_own = w[: len(multi)], w[len(multi) :]
        for u, w_ in zip(multi, w_rep):
            alpha_rep[(u.client_id, v)] = w_
        for u, w_ in zip(own, w_own):
            alpha_single[u.client_id] = w_
    views = {u.client_id: u.view for u in single}
    return AggregationWeights(alpha_multi, alpha_rep, alpha_single, delta_m, delta_p, views)


def uniform_weights(updates: Sequence[ClientUpdate], num_views: int) -> AggregationWeights:
    ups = sorted(updates, key=lambda u: u.client_id)
    multi = [u for u in ups if u.kind == "multi_view"]
    single = [u for u in ups if u.kind == "single_view"]
    if not multi:
        raise ProtocolError("the multi-view aggregation group is empty")
    alpha_multi = {u.client_id: 1.0 / len(multi) for u in multi}
    alpha_rep, alpha_single = {}, {}
    for v in range(num_views):
        own = [u for u in single if u.view == v]
        size = len(multi) + len(own)
        alpha_rep.update({(u.client_id, v): 1.0 / size for u in multi})
        alpha_single.update({u.client_id: 1.0 / size for u in own})
    return AggregationWeights(alpha_multi, alpha_rep, alpha_single, 1.0, 1.0, {u.client_id: u.view for u in single})


# ---------------------------------------------------------------- aggregation


def aggregate(updates: Sequence[ClientUpdate], weights: AggregationWeights, round_index: int = 0) -> GlobalModels:
    """Specific aggregation: one convex combination per architecture group,
    iterating clients in ascending id."""
    ups = sorted(updates, key=lambda u: u.client_id)
    multi = [u for u in ups if u.kind == "multi_view"]
    if not multi:
        raise ProtocolError("no multi-view update to aggregate")
    g_multi = combine([u.model for u in multi], [weights.alpha_multi[u.client_id] for u in multi])
    per_view = {}
    for v in range(g_multi.num_views):
        members: list[Model] = []
        w: list[float] = []
        for u in ups:
            if u.kind == "multi_view":
                if v not in u.replicas:
                    raise ProtocolError(f"client {u.client_id} uploaded no replica for view {v}")
                members.append(u.replicas[v])
                w.append(weights.alpha_multi_replica[(u.client_id, v)])
            elif u.view == v:
                members.append(u.model)
                w.append(weights.alpha_single[u.client_id])
        per_view[v] = combine(members, w)
    return GlobalModels(g_multi, per_view, round_index)


# ----------------------------------------------------------------- privacy


@dataclass(frozen=True)
class DpConfig:
    epsilon: float | None = None  # None disables noising
    clip_norm: float = 1.0
    seed: int = 0

    @property
    def enabled(self) -> bool:
        return self.epsilon is not None

    def validate(self) -> None:
        if self.enabled and not self.epsilon > 0:
            raise ConfigError("dp epsilon must be positive")
        if not self.clip_norm > 0:
            raise ConfigError("dp clip_norm must be positive")


def clip_and_noise(vector: np.ndarray, config: DpConfig, rng: np.random.Generator) -> np.ndarray:
    """L2-clip to ``clip_norm`` then add Laplace noise of scale 2C/epsilon per coordinate."""
    config.validate()
    vec = vector.astype(np.float64)
    norm = float(np.linalg.norm(vec))
    if norm > config.clip_norm:
        vec *= config.clip_norm / norm
    return vec + rng.laplace(0.0, 2.0 * config.clip_norm / config.epsilon, size=vec.shape)


def noise_bundle(model: Model, config: DpConfig, rng: np.random.Generator, reference: Model | None = None) -> Model:
    base = flatten(reference).astype(np.float64) if reference is not None else 0.0
    noisy = clip_and_noise(flatten(model).astype(np.float64) - base, config, rng) + base
    return unflatten(model, noisy)


def apply_dp_noise(
    update: ClientUpdate,
    config: DpConfig,
    rng: np.random.Generator | None = None,
    reference: GlobalModels | None = None,
) -> ClientUpdate:
    """Clip and noise every parameter bundle of an upload.

    With ``reference`` the clipped quantity is the bundle's offset from the
    global model the client received for that architecture; without it the
    raw parameters are clipped.
    """
    if not config.enabled:
        return update
    config.validate()
    if rng is None:
        rng = np.random.default_rng([config.seed, update.client_id])
    if update.kind == "multi_view":
        ref = reference.multi if reference is not None else None
        model = noise_bundle(update.model, config, rng, ref)
        replicas = {
            v: noise_bundle(r, config, rng, reference.per_view[v] if reference is not None else None)
            for v, r in sorted(update.replicas.items())
        }
    else:
        ref = reference.per_view[update.view] if reference is not None else None
        model = noise_bundle(update.model, config, rng, ref)
        replicas = {}
    return replace(update, model=model, replicas=replicas)
