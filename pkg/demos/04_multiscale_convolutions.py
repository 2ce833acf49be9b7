"""The two halves of a layer: hypergraph convolution over joints, temporal convolution over frames."""
import numpy as np

from hypergcn.data import NTU25
from hypergcn.graph import build_skeleton_adjacency, normalize_adjacency
from hypergcn.mshgc import MultiScaleHyperGraphConv
from hypergcn.nn import TemporalConv
from hypergcn.temporal import MultiScaleTemporalConv

rng = np.random.default_rng(0)
A_hat = normalize_adjacency(build_skeleton_adjacency(NTU25))

# Eight branches, one K each; three virtual hyper-joints join every branch.
conv = MultiScaleHyperGraphConv(64, 64, A_hat, k_scales=(2, 3, 4, 5, 6, 7, 8, 9), V_h=3, rng=rng)
conv.params["alpha"][:] = 0.5
x = rng.standard_normal((2, 64, 16, 25))
y = conv.forward(x)
print("MS-HGC:", x.shape, "->", y.shape, "| per-branch incidence", conv.last_incidence.shape[-2:])

# Without hypergraphs the layer is eight independent graph convolutions.
plain = MultiScaleHyperGraphConv(64, 64, A_hat, k_scales=(0,) * 8, V_h=0, rng=rng)
W = plain.params["weight"]
ref = np.concatenate([np.einsum("uv,bctv,co->botu", A_hat, x[:, 8 * g:8 * g + 8], W[g])
                      for g in range(8)], axis=1)
print("k=0 everywhere equals blocked graph convolution:", np.abs(plain.forward(x) - ref).max())

# MS-TC: four branches, stride shared, no mixing across joints.
mstc = MultiScaleTemporalConv(64, 128, stride=2, rng=rng).eval()
z = mstc.forward(y)
print("MS-TC stride 2:", y.shape, "->", z.shape)
y2 = y.copy()
y2[..., 7] += 1.0
changed = np.abs(mstc.forward(y2) - z).max(axis=(0, 1, 2))
print("joints changed after perturbing joint 7:", np.flatnonzero(changed))

# Kernel 5 with dilation 2 sees frames t-4..t+4.
tc = TemporalConv(4, 5, 2, rng=rng)
s = rng.standard_normal((1, 4, 21, 1))
base = tc.forward(s)[0, :, 10]
hits = [t for t in range(21)
        if not np.array_equal(tc.forward(s + (np.arange(21) == t)[None, None, :, None])[0, :, 10], base)]
print("frames that reach output frame 10:", hits)
