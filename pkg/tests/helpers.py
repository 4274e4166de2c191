import numpy as np

from fmcsc.client import MultiViewClient, SingleViewClient
from fmcsc.data import LocalData
from fmcsc.models import (
    Architecture,
    MultiViewModel,
    SingleViewModel,
    arrays,
    init_autoencoder,
    init_fused_head,
    init_view_head,
    with_arrays,
)

TINY = Architecture(view_dims=(5, 4), hidden=(6,), latent_dim=4, head_hidden=7, feature_dim=4)


def as64(model):
    return with_arrays(model, [a.astype(np.float64) for a in arrays(model)])


def jitter(model, rng, scale=0.1):
    return with_arrays(model, [a + rng.normal(scale=scale, size=a.shape).astype(a.dtype) for a in arrays(model)])


def multi_model(arch, rng, dtype=np.float32):
    m = MultiViewModel(
        tuple(init_autoencoder(arch, v, rng) for v in range(arch.num_views)),
        tuple(init_view_head(arch, rng) for _ in range(arch.num_views)),
        init_fused_head(arch, rng),
    )
    return as64(m) if dtype == np.float64 else m


def single_model(arch, v, rng, dtype=np.float32):
    m = SingleViewModel(v, init_autoencoder(arch, v, rng), init_view_head(arch, rng), init_view_head(arch, rng))
    return as64(m) if dtype == np.float64 else m


def local_views(arch, n, rng, views=None, dtype=np.float32):
    views = range(arch.num_views) if views is None else views
    return LocalData({v: rng.random((n, arch.view_dims[v])).astype(dtype) for v in views})


def fd_relative_error(loss_fn, model, analytic, h=1e-6):
    """Worst relative error between analytic per-array gradients and central
    differences of ``loss_fn(model)`` over every parameter entry."""
    base = arrays(model)
    worst = 0.0
    for idx, grad in enumerate(analytic):
        for pos in np.ndindex(base[idx].shape):
            plus = [a.copy() for a in base]
            minus = [a.copy() for a in base]
            plus[idx][pos] += h
            minus[idx][pos] -= h
            num = (loss_fn(with_arrays(model, plus)) - loss_fn(with_arrays(model, minus))) / (2 * h)
            ana = 0.0 if grad is None else grad[pos]
            worst = max(worst, abs(num - ana) / max(1e-7, abs(num) + abs(ana)))
    return worst


def grads_to_arrays(model_mlps, grads):
    out = []
    for mlp, g in zip(model_mlps, grads):
        if g is None:
            out.extend([None] * len(mlp.arrays()))
        else:
            out.extend(g.arrays())
    return out


def make_multi_client(arch, n, seed, **kw):
    rng = np.random.default_rng(seed)
    return MultiViewClient(0, local_views(arch, n, rng), multi_model(arch, rng), **kw)


def make_single_client(arch, v, n, seed, **kw):
    rng = np.random.default_rng(seed)
    return SingleViewClient(1, local_views(arch, n, rng, views=[v]), single_model(arch, v, rng), **kw)
