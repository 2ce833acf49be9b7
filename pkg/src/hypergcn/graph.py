"""Graph and hypergraph normalization.

Hypergraph functions accept arbitrary leading batch dimensions: an incidence
of shape ``(..., N, M)`` pairs with edge weights of shape ``(..., M)``.
Diagonal degree matrices are kept as vectors throughout.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SkeletonLayout
from .errors import IsolatedVertex, ShapeMismatch

DEFAULT_EPS = 1e-6


@dataclass
class Hypergraph:
    incidence: np.ndarray     # (..., N, M), entries in [0, 1]
    edge_weights: np.ndarray  # (..., M)

    def __post_init__(self):
        if self.incidence.shape[-1] != self.edge_weights.shape[-1]:
            raise ShapeMismatch(
                f"incidence has {self.incidence.shape[-1]} edges, weights have {self.edge_weights.shape[-1]}")

    @classmethod
    def binary(cls, incidence) -> "Hypergraph":
        H = np.asarray(incidence, dtype=np.float64)
        return cls(H, np.ones(H.shape[:-2] + H.shape[-1:]))


def build_skeleton_adjacency(layout: SkeletonLayout, self_loops: bool = True) -> np.ndarray:
    """Identity, centrifugal and centripetal subsets merged into one symmetric matrix."""
    V = layout.joint_count
    A = np.zeros((V, V))
    for p, c in layout.edges:
        A[p, c] = A[c, p] = 1.0
    if self_loops:
        A[np.diag_indices(V)] = 1.0
    return A


def normalize_adjacency(A: np.ndarray) -> np.ndarray:
    """Symmetric normalization D^-1/2 A D^-1/2 with D the row sums."""
    deg = A.sum(axis=-1)
    if np.any(deg == 0):
        bad = np.flatnonzero(deg == 0)
        raise IsolatedVertex(f"vertices {bad.tolist()} have zero degree")
    s = 1.0 / np.sqrt(deg)
    # s_i * s_j is computed once per pair, so symmetric input stays bitwise symmetric
    return A * np.outer(s, s)


def vertex_degrees(hg: Hypergraph) -> np.ndarray:
    return np.einsum("...ve,...e->...v", hg.incidence, hg.edge_weights)


def edge_degrees(hg: Hypergraph) -> np.ndarray:
    return hg.incidence.sum(axis=-2)


def guarded_inverse(d: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """sign(d) / (|d| + eps), and exactly zero where |d| <= eps."""
    a = np.abs(d)
    out = np.zeros_like(d)
    ok = a > eps
    out[ok] = np.sign(d[ok]) / (a[ok] + eps)
    return out


def guarded_inverse_grad(d: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    a = np.abs(d)
    out = np.zeros_like(d)
    ok = a > eps
    out[ok] = -1.0 / (a[ok] + eps) ** 2
    return out


def edge_inverse(d: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """1/d for edge degrees, zero for detached edges (|d| <= eps).

    Edge degrees are sums of nonnegative incidence, so no sign handling or
    additive offset is needed here.
    """
    out = np.zeros_like(d)
    ok = np.abs(d) > eps
    out[ok] = 1.0 / d[ok]
    return out


def edge_inverse_grad(d: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    out = np.zeros_like(d)
    ok = np.abs(d) > eps
    out[ok] = -1.0 / d[ok] ** 2
    return out


def normalize_hypergraph(hg: Hypergraph, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Propagator Dv^-1 H W De^-1 H^T.

    Vertex degrees may be zero or negative once edge weights come out of a
    tanh, so their inverse is the sign-preserving guarded one.
    """
    return normalize_hypergraph_forward(hg.incidence, hg.edge_weights, eps)[0]


def normalize_hypergraph_forward(H, w, eps=DEFAULT_EPS):
    dv = np.einsum("...ve,...e->...v", H, w)
    de = H.sum(axis=-2)
    inv_dv = guarded_inverse(dv, eps)
    inv_de = edge_inverse(de, eps)
    z = w * inv_de
    Q = (H * z[..., None, :]) @ np.swapaxes(H, -1, -2)
    out = inv_dv[..., :, None] * Q
    cache = (H, w, dv, de, inv_dv, inv_de, z, Q, eps)
    return out, cache


def normalize_hypergraph_backward(dout, cache):
    """Gradients of the propagator with respect to (incidence, edge weights)."""
    H, w, dv, de, inv_dv, inv_de, z, Q, eps = cache
    Ht = np.swapaxes(H, -1, -2)
    d_inv_dv = np.sum(dout * Q, axis=-1)
    dQ = inv_dv[..., :, None] * dout
    Hz = H * z[..., None, :]
    dH = dQ @ Hz + np.swapaxes(dQ, -1, -2) @ Hz
    dz = np.sum((Ht @ dQ) * Ht, axis=-1)           # diag(H^T dQ H)
    dw = dz * inv_de
    d_inv_de = dz * w
    dde = d_inv_de * edge_inverse_grad(de, eps)
    dH = dH + dde[..., None, :]
    ddv = d_inv_dv * guarded_inverse_grad(dv, eps)
    dH = dH + ddv[..., :, None] * w[..., None, :]
    dw = dw + np.einsum("...v,...ve->...e", ddv, H)
    return dH, dw


def write_matrix_csv(path, M: np.ndarray) -> None:
    M = np.atleast_2d(M)
    with open(path, "w") as fh:
        for row in M:
            fh.write(",".join(f"{x:.9g}" for x in row) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)
