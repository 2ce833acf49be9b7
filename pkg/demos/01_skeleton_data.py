"""Skeleton sequences: the SKL1 file format, the four input streams, resampling."""
import tempfile
from pathlib import Path

import numpy as np

from hypergcn.data import (NTU25, Modality, SkeletonSequence, derive_modality, load_sequence,
                           resample_time, synthetic_sequences, write_sequence)

rng = np.random.default_rng(0)

# A two-person, 30-frame NTU-style clip. Coordinates are float32 on disk.
coords = rng.normal(scale=0.5, size=(2, 30, 25, 3)).astype(np.float32)
seq = SkeletonSequence(coords, label=12)

with tempfile.TemporaryDirectory() as d:
    path = Path(d) / "clip.skl"
    write_sequence(path, seq)
    print("file size:", path.stat().st_size, "bytes (20 header + 4 per value)")
    back = load_sequence(path)
    print("bitwise round trip:", back.coords.tobytes() == seq.coords.tobytes())

# Bones are child minus parent along the skeleton tree; the root bone is zero.
bones = derive_modality(seq, Modality.BONE, NTU25).coords
print("root joint", NTU25.root, "bone:", bones[0, 0, NTU25.root])

# Summing bones along the path to the root rebuilds positions relative to the root.
v = 23
rebuilt = sum(bones[0, 0, u] for u in NTU25.path_to_root(v))
print("path", NTU25.path_to_root(v), "rebuilt error:",
      np.abs(rebuilt - (coords[0, 0, v] - coords[0, 0, NTU25.root])).max())

# Motion streams are forward differences in time, with a zero last frame.
for m in (Modality.JOINT_MOTION, Modality.BONE_MOTION):
    out = derive_modality(seq, m, NTU25).coords
    print(m.value, out.shape, "last frame zero:", not out[:, -1].any())

# Networks take a fixed frame count, so clips are linearly resampled.
short = resample_time(seq, 64)
print("resampled to", short.frame_count, "frames; endpoints kept:",
      np.array_equal(short.coords[:, 0], coords[:, 0]),
      np.array_equal(short.coords[:, -1], coords[:, -1]))

# The toy generator used throughout the tests: class c swings the limbs along axis c.
toys = synthetic_sequences(4, num_classes=2)
print("toy labels:", [s.label for s in toys], "shape:", toys[0].coords.shape)
