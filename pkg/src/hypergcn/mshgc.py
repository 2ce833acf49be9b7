"""Multi-scale hypergraph convolution with virtual hyper-joints.

Input channels are split into eight equal branches.  Each branch appends its
slice of the layer's hyper-joints to the joint axis, builds an adaptive
hypergraph over the extended joint set with its own K, and propagates
features through ``A_pad + alpha_i * H_hat_i`` before a per-branch channel
transform.  Hyper-joint columns are dropped again before the branches are
concatenated.

All branches are evaluated together: the branch index is carried as a
second batch axis.
"""
from __future__ import annotations

import numpy as np

from . import ahc
from .errors import ChannelSplitError, KOutOfRange, ShapeMismatch
from .graph import normalize_hypergraph_forward, normalize_hypergraph_backward
from .nn import Module, he_uniform

BRANCHES = 8
DEFAULT_K_SCALES = (2, 3, 4, 5, 6, 7, 8, 9)


def attach_hyperjoints(F: np.ndarray, F_h: np.ndarray) -> np.ndarray:
    """Concatenate (..., C, T, V) with time-invariant (..., C, V_h) along joints.

    The hyper-joints are repeated identically in every frame.
    """
    if F_h.shape[-2] != F.shape[-3]:
        raise ShapeMismatch(f"hyper-joints have {F_h.shape[-2]} channels, features {F.shape[-3]}")
    Fh = np.broadcast_to(F_h[..., :, None, :], F.shape[:-1] + F_h.shape[-1:])
    return np.concatenate([F, Fh], axis=-1)


def pad_physical(A_hat: np.ndarray, V_h: int) -> np.ndarray:
    V = A_hat.shape[0]
    out = np.zeros((V + V_h, V + V_h))
    out[:V, :V] = A_hat
    return out


def fuse_topology(A_pad, H_hat, alpha):
    if A_pad.shape[-2:] != H_hat.shape[-2:]:
        raise ShapeMismatch(f"{A_pad.shape} vs {H_hat.shape}")
    return A_pad + alpha * H_hat


class MultiScaleHyperGraphConv(Module):
    def __init__(self, cin, cout, A_hat, k_scales=DEFAULT_K_SCALES, V_h=3,
                 embed_width=None, rng=None):
        super().__init__()
        if cin % BRANCHES or cout % BRANCHES:
            raise ChannelSplitError(f"channels ({cin}, {cout}) must be divisible by {BRANCHES}")
        if len(k_scales) != BRANCHES:
            raise ValueError(f"need {BRANCHES} K values, got {len(k_scales)}")
        rng = np.random.default_rng() if rng is None else rng
        self.V = A_hat.shape[0]
        self.V_h = V_h
        self.N = self.V + V_h
        if any(k < 0 or k > self.N for k in k_scales):
            raise KOutOfRange(f"K values {list(k_scales)} must lie in [0, {self.N}]")
        self.cin, self.cout = cin, cout
        self.c_in, self.c_out = cin // BRANCHES, cout // BRANCHES
        self.k_scales = np.asarray(k_scales, dtype=np.int64)
        self.active = np.flatnonzero(self.k_scales > 0)
        self.A_pad = pad_physical(A_hat, V_h)
        self.embed_width = ahc.default_embed_width(self.c_in) if embed_width is None else embed_width

        self.add_param("weight", he_uniform(rng, (BRANCHES, self.c_in, self.c_out), self.c_in))
        self.add_param("alpha", np.zeros(BRANCHES), decay=False)
        if V_h:
            self.add_param("hyper_joints", rng.standard_normal((cin, V_h)), decay=False)
        n_act = len(self.active)
        if n_act:
            bound = 1.0 / np.sqrt(self.c_in)
            self.add_param("phi", rng.uniform(-bound, bound, (n_act, self.c_in, self.embed_width)))
            self.add_param("psi", rng.uniform(-bound, bound, (n_act, self.c_in)))
            self.add_param("ln_gain", np.ones((n_act, self.c_in)), decay=False)
            self.add_param("ln_bias", np.zeros((n_act, self.c_in)), decay=False)
        self.last_incidence = None
        self.last_edge_weights = None
        self.last_margin = np.inf
        self.last_mask = None

    def forward(self, x):
        B, C, T, V = x.shape
        if C != self.cin or V != self.V:
            raise ShapeMismatch(f"expected (*, {self.cin}, T, {self.V}), got {x.shape}")
        G, c, N = BRANCHES, self.c_in, self.N
        xb = x.reshape(B, G, c, T, V)
        if self.V_h:
            Fh = self.params["hyper_joints"].reshape(G, c, self.V_h)
            ext = attach_hyperjoints(xb, Fh)
        else:
            ext = xb
        prop = np.broadcast_to(self.A_pad[:V], (B, G, V, N)).copy()
        a = self.active
        cache = None
        if len(a):
            p = self.params
            H, w, acache = ahc.ahc_forward(ext[:, a], p["phi"], p["psi"], p["ln_gain"],
                                           p["ln_bias"], self.k_scales[a])
            Hhat, ncache = normalize_hypergraph_forward(H, w)
            prop[:, a] += p["alpha"][a][None, :, None, None] * Hhat[..., :V, :]
            self.last_incidence, self.last_edge_weights = H, w
            self.last_margin = float(np.min(ahc.topk_margin(acache["D"], self.k_scales[a])))
            self.last_mask = acache["mask"]
            cache = (acache, ncache, Hhat)
        ext_r = ext.reshape(B, G, c * T, N)
        Y = (ext_r @ np.swapaxes(prop, -1, -2)).reshape(B, G, c, T * V)
        Z = np.swapaxes(self.params["weight"], -1, -2)[None] @ Y
        self._cache = (x.shape, ext_r, prop, Y, cache)
        return Z.reshape(B, self.cout, T, V)

    def backward(self, dZ):
        xshape, ext_r, prop, Y, cache = self._cache
        B, C, T, V = xshape
        G, c, N = BRANCHES, self.c_in, self.N
        dZr = dZ.reshape(B, G, self.c_out, T * V)
        self.grads["weight"] += np.einsum("bgct,bgot->gco", Y, dZr)
        dY = (self.params["weight"][None] @ dZr).reshape(B, G, c * T, V)
        dext = dY @ prop
        dprop = np.swapaxes(dY, -1, -2) @ ext_r
        a = self.active
        if len(a):
            acache, ncache, Hhat = cache
            alpha = self.params["alpha"][a]
            self.grads["alpha"][a] += np.sum(dprop[:, a] * Hhat[..., :V, :], axis=(0, 2, 3))
            dHhat = np.zeros_like(Hhat)
            dHhat[..., :V, :] = alpha[None, :, None, None] * dprop[:, a]
            dH, dw = normalize_hypergraph_backward(dHhat, ncache)
            dF, dphi, dpsi, dgain, dbias = ahc.ahc_backward(dH, dw, acache)
            dext[:, a] += dF.reshape(B, len(a), c * T, N)
            self.grads["phi"] += dphi
            self.grads["psi"] += dpsi
            self.grads["ln_gain"] += dgain
            self.grads["ln_bias"] += dbias
        dext = dext.reshape(B, G, c, T, N)
        if self.V_h:
            self.grads["hyper_joints"] += dext[..., V:].sum(axis=(0, 3)).reshape(self.cin, self.V_h)
        return dext[..., :V].reshape(B, C, T, V)

    def hyper_joint_matrix(self):
        """Layer hyper-joints as (channels, V_h); None when V_h == 0."""
        return self.params.get("hyper_joints")

    def flops(self, T, V):
        N, n_act, Ch = self.N, len(self.active), self.embed_width
        total = 2 * BRANCHES * self.c_in * self.c_out * T * V      # channel transforms
        total += 2 * self.cin * T * V * N                           # propagation
        total += n_act * (2 * self.c_in * (Ch + 1) * N              # embeddings
                          + 2 * Ch * N * N                          # distances
                          + 2 * N * N * N)                          # normalized propagator
        return total
