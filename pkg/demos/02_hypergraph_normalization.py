"""Normalized propagation for normal graphs and hypergraphs."""
import numpy as np

from hypergcn.data import NTU25
from hypergcn.graph import (Hypergraph, build_skeleton_adjacency, edge_degrees,
                            normalize_adjacency, normalize_hypergraph, vertex_degrees)

np.set_printoptions(precision=4, suppress=True)

# Physical skeleton: one symmetric matrix with self-loops, then D^-1/2 A D^-1/2.
A = build_skeleton_adjacency(NTU25)
A_hat = normalize_adjacency(A)
print("NTU adjacency: edges", int((A.sum() - 25) / 2), "symmetric", np.array_equal(A_hat, A_hat.T))

# Three vertices, two hyper-edges {0,1} and {1,2}.
H = np.array([[1.0, 0], [1, 1], [0, 1]])
hg = Hypergraph.binary(H)
print("vertex degrees", vertex_degrees(hg), "edge degrees", edge_degrees(hg))
print("propagator Dv^-1 H W De^-1 H^T:")
print(normalize_hypergraph(hg))

# Learned weights come out of a tanh and can be negative.  The vertex inverse
# keeps the sign and is zero for a degree within eps of 0.
w = np.array([0.8, -0.8])
print("signed weights", w, "-> vertex degrees", vertex_degrees(Hypergraph(H, w)))
print(normalize_hypergraph(Hypergraph(H, w)))

# Scaling all weights by c > 0 leaves the propagator unchanged up to eps.
rng = np.random.default_rng(1)
Hs, ws = rng.random((6, 6)), rng.uniform(0.2, 1, 6)
for c in (0.5, 2.0, 10.0):
    diff = np.abs(normalize_hypergraph(Hypergraph(Hs, c * ws)) - normalize_hypergraph(Hypergraph(Hs, ws)))
    print(f"c={c:>4}: max change {diff.max():.2e}")
