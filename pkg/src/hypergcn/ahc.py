"""Adaptive hypergraph construction from joint features.

Features are pooled over time, layer-normalized over channels, embedded into
a position space and a scalar edge-weight space, and every joint then joins
the K hyper-edges whose anchors lie nearest to it in the position space.
There is one hyper-edge per joint, so incidences are square.

All functions broadcast over leading batch dimensions.  In the network the
leading dimensions are ``(batch, branch)`` and parameters carry a leading
branch axis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import KOutOfRange, ShapeMismatch
from .graph import Hypergraph

LN_EPS = 1e-5


@dataclass
class AhcParams:
    phi: np.ndarray       # (C, C_h)
    psi: np.ndarray       # (C,)
    ln_gain: np.ndarray   # (C,)
    ln_bias: np.ndarray   # (C,)
    K: int

    @classmethod
    def init(cls, C: int, K: int, C_h: int | None = None, rng=None) -> "AhcParams":
        rng = np.random.default_rng() if rng is None else rng
        C_h = default_embed_width(C) if C_h is None else C_h
        bound = 1.0 / np.sqrt(C)
        return cls(rng.uniform(-bound, bound, (C, C_h)), rng.uniform(-bound, bound, C),
                   np.ones(C), np.zeros(C), K)


def default_embed_width(C: int) -> int:
    return max(C // 2, 8)


def temporal_pool(F: np.ndarray) -> np.ndarray:
    """(..., C, T, N) -> (..., C, N)."""
    return F.mean(axis=-2)


def channel_layernorm(x, gain, bias, eps: float = LN_EPS):
    return _layernorm_forward(x, gain, bias, eps)[0]


def _layernorm_forward(x, gain, bias, eps=LN_EPS):
    mu = x.mean(axis=-2, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-2, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    y = gain[..., :, None] * xhat + bias[..., :, None]
    return y, (xhat, inv_std, gain)


def _layernorm_backward(dy, cache):
    xhat, inv_std, gain = cache
    dgain = np.sum(dy * xhat, axis=-1)
    dbias = np.sum(dy, axis=-1)
    dxhat = dy * gain[..., :, None]
    dx = inv_std * (dxhat - dxhat.mean(axis=-2, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-2, keepdims=True))
    return dx, dgain, dbias


def embed(x_norm, phi, psi):
    """Position embedding (..., C_h, N) and edge weights (..., N) in (-1, 1)."""
    P = np.einsum("...ch,...cn->...hn", phi, x_norm)
    w = np.tanh(np.einsum("...c,...cn->...n", psi, x_norm))
    return P, w


def pairwise_sq_distances(P: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between the columns of (..., C_h, N)."""
    diff = P[..., :, :, None] - P[..., :, None, :]
    # (a - b)**2 == (b - a)**2 bitwise, so the result is exactly symmetric
    return np.sum(diff * diff, axis=-3)


def _check_k(K, N):
    K = np.asarray(K)
    if np.any(K < 1) or np.any(K > N):
        raise KOutOfRange(f"K must lie in [1, {N}], got {K.tolist()}")
    return K


def topk_mask(D: np.ndarray, K) -> np.ndarray:
    """Boolean mask of the K smallest entries per row; ties go to the lower index.

    ``K`` is a scalar or an integer array broadcastable to ``D.shape[:-2]``.
    """
    N = D.shape[-1]
    K = _check_k(K, N)
    order = np.argsort(D, axis=-1, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(N), axis=-1)
    return rank < K[..., None, None]


def topk_margin(D: np.ndarray, K) -> np.ndarray:
    """Gap between the K-th and (K+1)-th smallest distance of every row.

    Rows with K == N have no competitor and report ``inf``.
    """
    N = D.shape[-1]
    K = np.broadcast_to(_check_k(K, N), D.shape[:-2])
    s = np.sort(D, axis=-1)
    Kb = np.broadcast_to(K[..., None, None], D.shape[:-1] + (1,))
    inside = np.take_along_axis(s, Kb - 1, axis=-1)[..., 0]
    outside = np.take_along_axis(s, np.minimum(Kb, N - 1), axis=-1)[..., 0]
    gap = outside - inside
    return np.where(Kb[..., 0] >= N, np.inf, gap)


def _masked_softmax(logits, mask):
    shifted = np.where(mask, logits, -np.inf)
    m = shifted.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(shifted - m), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def topk_incidence(D: np.ndarray, K) -> np.ndarray:
    """Soft incidence: softmax of -distance restricted to each row's K nearest."""
    return _masked_softmax(-D, topk_mask(D, K))


def ahc_forward(F, phi, psi, ln_gain, ln_bias, K):
    """Full construction from features (..., C, T, N).

    Returns ``(incidence, edge_weights, cache)``; the cache feeds
    :func:`ahc_backward`.
    """
    T = F.shape[-2]
    pooled = temporal_pool(F)
    xn, ln_cache = _layernorm_forward(pooled, ln_gain, ln_bias)
    P, w = embed(xn, phi, psi)
    D = pairwise_sq_distances(P)
    mask = topk_mask(D, K)
    H = _masked_softmax(-D, mask)
    cache = dict(T=T, ln=ln_cache, xn=xn, P=P, w=w, D=D, H=H, mask=mask, phi=phi, psi=psi,
                 F_shape=F.shape)
    return H, w, cache


def _sum_to(g, shape):
    """Sum a broadcast gradient back down to a parameter's shape."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    return g.reshape(shape)


def ahc_backward(dH, dw, cache):
    """Gradients for (F, phi, psi, ln_gain, ln_bias).

    The top-K support set is treated as constant.
    """
    H, P, w, xn = cache["H"], cache["P"], cache["w"], cache["xn"]
    phi, psi = cache["phi"], cache["psi"]
    dlogits = H * (dH - np.sum(H * dH, axis=-1, keepdims=True))
    dD = -dlogits
    S = dD + np.swapaxes(dD, -1, -2)
    dP = 2.0 * (P * S.sum(axis=-1)[..., None, :] - P @ S)
    ds = dw * (1.0 - w * w)
    dphi = _sum_to(np.einsum("...cn,...hn->...ch", xn, dP), phi.shape)
    dpsi = _sum_to(np.einsum("...cn,...n->...c", xn, ds), psi.shape)
    dxn = np.einsum("...ch,...hn->...cn", phi, dP) + psi[..., :, None] * ds[..., None, :]
    dpooled, dgain, dbias = _layernorm_backward(dxn, cache["ln"])
    gain = cache["ln"][2]
    dgain = _sum_to(dgain, gain.shape)
    dbias = _sum_to(dbias, gain.shape)
    T = cache["T"]
    dF = np.broadcast_to(dpooled[..., :, None, :] / T, cache["F_shape"])
    return dF, dphi, dpsi, dgain, dbias


def build_hypergraph(F: np.ndarray, params: AhcParams) -> Hypergraph:
    C = F.shape[-3]
    if params.phi.shape[-2] != C:
        raise ShapeMismatch(f"features have {C} channels, phi expects {params.phi.shape[-2]}")
    H, w, _ = ahc_forward(F, params.phi, params.psi, params.ln_gain, params.ln_bias, params.K)
    return Hypergraph(H, w)
