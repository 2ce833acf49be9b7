"""Skeleton sequences, the SKL1 file format, and input modality streams.

A sequence tensor is laid out as ``(persons, frames, joints, 3)``.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (ConfigError, DataError, EmptySequence, LayoutMismatch, MagicMismatch,
                     NonFiniteData, ShapeOverflow, TruncatedFile)

MAGIC = b"SKL1"
_HEADER = struct.Struct("<4sIIII")
MAX_DIM = 10_000
DEFAULT_T = 64


class Modality(enum.Enum):
    JOINT = "joint"
    BONE = "bone"
    JOINT_MOTION = "joint_motion"
    BONE_MOTION = "bone_motion"

    @classmethod
    def parse(cls, name: str) -> "Modality":
        key = name.strip().lower().replace("-", "_")
        aliases = {"j": "joint", "b": "bone", "jm": "joint_motion",
                   "bm": "bone_motion"}
        key = aliases.get(key, key)
        for m in cls:
            if m.value == key:
                return m
        raise ConfigError(f"unknown modality {name!r}")


@dataclass(frozen=True)
class SkeletonLayout:
    """Physical skeleton: a spanning tree over the joints.

    ``edges`` holds ``(parent, child)`` pairs; the root is the single joint
    that is never a child.
    """
    name: str
    joint_count: int
    edges: tuple[tuple[int, int], ...]
    center_joint: int

    def __post_init__(self):
        V = self.joint_count
        if len(self.edges) != V - 1:
            raise ValueError(f"{self.name}: expected {V - 1} edges, got {len(self.edges)}")
        children = [c for _, c in self.edges]
        for p, c in self.edges:
            if not (0 <= p < V and 0 <= c < V) or p == c:
                raise ValueError(f"{self.name}: bad edge ({p}, {c})")
        if len(set(children)) != len(children):
            raise ValueError(f"{self.name}: a joint has two parents")
        if not 0 <= self.center_joint < V:
            raise ValueError(f"{self.name}: center joint out of range")
        # every joint must reach the root without revisiting a node
        root = self.root
        parent = self.parents
        for v in range(V):
            seen = set()
            while v != root:
                if v in seen:
                    raise ValueError(f"{self.name}: edge list has a cycle")
                seen.add(v)
                v = parent[v]

    @property
    def root(self) -> int:
        roots = set(range(self.joint_count)) - {c for _, c in self.edges}
        if len(roots) != 1:
            raise ValueError(f"{self.name}: edge list is not a spanning tree")
        return roots.pop()

    @property
    def parents(self) -> list[int]:
        parent = [-1] * self.joint_count
        for p, c in self.edges:
            parent[c] = p
        return parent

    def path_to_root(self, v: int) -> list[int]:
        parent = self.parents
        path = [v]
        while path[-1] != self.root:
            path.append(parent[path[-1]])
        return path


def _from_child_parent(name, pairs_1based, V, center):
    return SkeletonLayout(name, V, tuple((p - 1, c - 1) for c, p in pairs_1based), center)


NTU25 = _from_child_parent(
    "ntu25",
    [(1, 2), (2, 21), (3, 21), (4, 3), (5, 21), (6, 5), (7, 6), (8, 7),
     (9, 21), (10, 9), (11, 10), (12, 11), (13, 1), (14, 13), (15, 14),
     (16, 15), (17, 1), (18, 17), (19, 18), (20, 19), (22, 23), (23, 8),
     (24, 25), (25, 12)],
    25, center=1)

UCLA20 = _from_child_parent(
    "ucla20",
    [(1, 2), (2, 3), (4, 3), (5, 3), (6, 5), (7, 6), (8, 7), (9, 3),
     (10, 9), (11, 10), (12, 11), (13, 1), (14, 13), (15, 14), (16, 15),
     (17, 1), (18, 17), (19, 18), (20, 19)],
    20, center=1)

# small tree used by the desk-scale configs and the test-suite
TOY5 = SkeletonLayout("toy5", 5, ((0, 1), (1, 2), (0, 3), (3, 4)), center_joint=0)

LAYOUTS = {lay.name: lay for lay in (NTU25, UCLA20, TOY5)}


def get_layout(name: str) -> SkeletonLayout:
    try:
        return LAYOUTS[name]
    except KeyError:
        raise ValueError(f"unknown layout {name!r}; choose from {sorted(LAYOUTS)}") from None


@dataclass
class SkeletonSequence:
    coords: np.ndarray            # (P, T, V, 3)
    label: int
    num_classes: int | None = field(default=None, compare=False)

    def __post_init__(self):
        c = self.coords
        if c.ndim != 4 or c.shape[-1] != 3:
            raise DataError(f"coords must have shape (P, T, V, 3), got {c.shape}")
        if not 1 <= c.shape[0] <= 2:
            raise DataError(f"person count must be 1 or 2, got {c.shape[0]}")
        if c.shape[1] < 1:
            raise EmptySequence("sequence has no frames")
        if not np.all(np.isfinite(c)):
            raise NonFiniteData("coordinates contain NaN or Inf")
        if self.label < 0 or (self.num_classes is not None and self.label >= self.num_classes):
            raise DataError(f"label {self.label} out of range")

    @property
    def person_count(self) -> int:
        return self.coords.shape[0]

    @property
    def frame_count(self) -> int:
        return self.coords.shape[1]

    @property
    def joint_count(self) -> int:
        return self.coords.shape[2]

    def replace(self, coords: np.ndarray) -> "SkeletonSequence":
        return SkeletonSequence(coords, self.label, self.num_classes)


def write_sequence(path, seq: SkeletonSequence) -> None:
    P, T, V, _ = seq.coords.shape
    payload = np.ascontiguousarray(seq.coords, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, P, T, V, seq.label))
        fh.write(payload.tobytes())


def load_sequence(path) -> SkeletonSequence:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from None
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise MagicMismatch(f"{path}: not an SKL1 file")
    if len(raw) < _HEADER.size:
        raise TruncatedFile(f"{path}: header truncated")
    _, P, T, V, label = _HEADER.unpack_from(raw)
    if max(P, T, V) > MAX_DIM:
        raise ShapeOverflow(f"{path}: header dims ({P}, {T}, {V}) exceed {MAX_DIM}")
    count = P * T * V * 3
    need = _HEADER.size + 4 * count
    if len(raw) < need:
        raise TruncatedFile(f"{path}: expected {need} bytes, found {len(raw)}")
    coords = np.frombuffer(raw, dtype="<f4", count=count, offset=_HEADER.size)
    coords = coords.reshape(P, T, V, 3).copy()
    if not np.all(np.isfinite(coords)):
        raise NonFiniteData(f"{path}: non-finite coordinates")
    return SkeletonSequence(coords, int(label))


def _bones(x: np.ndarray, layout: SkeletonLayout) -> np.ndarray:
    out = np.zeros_like(x)
    for p, c in layout.edges:
        out[..., c, :] = x[..., c, :] - x[..., p, :]
    return out


def _motion(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    out[:, :-1] = x[:, 1:] - x[:, :-1]
    return out


def derive_modality(seq: SkeletonSequence, modality: Modality | str,
                    layout: SkeletonLayout) -> SkeletonSequence:
    if isinstance(modality, str):
        modality = Modality.parse(modality)
    if layout.joint_count != seq.joint_count:
        raise LayoutMismatch(
            f"layout {layout.name} has {layout.joint_count} joints, sequence has {seq.joint_count}")
    x = seq.coords
    if modality is Modality.JOINT:
        out = x.copy()
    elif modality is Modality.BONE:
        out = _bones(x, layout)
    elif modality is Modality.JOINT_MOTION:
        out = _motion(x)
    else:
        out = _motion(_bones(x, layout))
    return seq.replace(out)


def resample_time(seq: SkeletonSequence, target_T: int) -> SkeletonSequence:
    """Linear interpolation onto ``target_T`` evenly spaced frame positions."""
    if target_T < 1:
        raise ValueError("target_T must be >= 1")
    T = seq.frame_count
    if T < 1:
        raise EmptySequence("cannot resample an empty sequence")
    if target_T == T:
        return seq.replace(seq.coords.copy())
    x = seq.coords
    if T == 1:
        return seq.replace(np.repeat(x, target_T, axis=1))
    if target_T == 1:
        pos = np.zeros(1)
    else:
        pos = np.linspace(0.0, T - 1, target_T)
    lo = np.clip(np.floor(pos).astype(int), 0, T - 2)
    frac = (pos - lo).astype(x.dtype)[None, :, None, None]
    out = x[:, lo] * (1 - frac) + x[:, lo + 1] * frac
    # exact endpoints regardless of rounding in the blend
    out[:, 0] = x[:, 0]
    if target_T > 1:
        out[:, -1] = x[:, -1]
    return seq.replace(out)


def center_sequence(seq: SkeletonSequence, layout: SkeletonLayout) -> SkeletonSequence:
    """Translate so the first frame's center joint of the first person is at the origin."""
    if layout.joint_count != seq.joint_count:
        raise LayoutMismatch("layout does not match sequence")
    origin = seq.coords[0, 0, layout.center_joint]
    return seq.replace(seq.coords - origin)


# --- manifest -------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: int
    split: str


def read_manifest(path) -> list[ManifestEntry]:
    entries = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields")
        rel, label, split = parts
        if split not in ("train", "val"):
            raise DataError(f"{path}:{lineno}: split must be train or val, got {split!r}")
        try:
            label = int(label)
        except ValueError:
            raise DataError(f"{path}:{lineno}: label {label!r} is not an integer") from None
        entries.append(ManifestEntry(rel, label, split))
    return entries


def write_manifest(path, entries) -> None:
    with open(path, "w") as fh:
        for e in entries:
            fh.write(f"{e.path}\t{e.label}\t{e.split}\n")


@dataclass
class Dataset:
    """Preprocessed samples stacked into dense arrays.

    ``x`` is ``(N, P, 3, T, V)`` in network layout; ``mask`` flags the
    persons that are present.
    """
    x: np.ndarray
    mask: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.mask[idx], self.labels[idx])


def prepare(seq: SkeletonSequence, layout: SkeletonLayout, modality: Modality,
            T: int = DEFAULT_T) -> SkeletonSequence:
    seq = center_sequence(seq, layout)
    seq = resample_time(seq, T)
    return derive_modality(seq, modality, layout)


def stack_sequences(seqs, max_persons: int = 2, dtype=np.float64) -> Dataset:
    if not seqs:
        raise EmptySequence("no sequences to stack")
    T, V = seqs[0].frame_count, seqs[0].joint_count
    x = np.zeros((len(seqs), max_persons, 3, T, V), dtype=dtype)
    mask = np.zeros((len(seqs), max_persons), dtype=bool)
    for i, s in enumerate(seqs):
        if s.coords.shape[1:3] != (T, V):
            raise DataError("sequences must share frame and joint counts")
        P = min(s.person_count, max_persons)
        x[i, :P] = s.coords[:P].transpose(0, 3, 1, 2)
        mask[i, :P] = True
    labels = np.array([s.label for s in seqs], dtype=np.int64)
    return Dataset(x, mask, labels)


def load_dataset(manifest, root=None, layout: SkeletonLayout = NTU25,
                 modality: Modality | str = Modality.JOINT, T: int = DEFAULT_T,
                 split: str | None = None, max_persons: int = 2) -> Dataset | None:
    """Read every manifest entry of ``split`` (all entries when None)."""
    if isinstance(modality, str):
        modality = Modality.parse(modality)
    root = Path(root) if root is not None else Path(manifest).parent
    seqs = []
    for e in read_manifest(manifest):
        if split is not None and e.split != split:
            continue
        seq = load_sequence(root / e.path)
        if seq.label != e.label:
            raise DataError(f"{e.path}: file label {seq.label} != manifest label {e.label}")
        seqs.append(prepare(seq, layout, modality, T))
    if not seqs:
        return None
    return stack_sequences(seqs, max_persons)


def synthetic_sequences(n: int, layout: SkeletonLayout = TOY5, T: int = 16,
                        num_classes: int = 2, seed: int = 0) -> list[SkeletonSequence]:
    """Toy actions: class ``c`` oscillates the limb joints along axis ``c % 3``.

    Classes are separable by construction, which makes the set useful for
    overfit and reproducibility runs.
    """
    rng = np.random.default_rng(seed)
    V = layout.joint_count
    rest = rng.normal(scale=0.3, size=(V, 3)).astype(np.float32)
    t = np.linspace(0, 2 * np.pi, T, dtype=np.float32)
    out = []
    for i in range(n):
        label = i % num_classes
        coords = np.broadcast_to(rest, (1, T, V, 3)).copy()
        phase = rng.uniform(0, 2 * np.pi)
        amp = 0.5 + 0.1 * rng.standard_normal()
        axis = label % 3
        sign = 1.0 if (label // 3) % 2 == 0 else -1.0
        for v in range(V):
            if v != layout.root:
                coords[0, :, v, axis] += sign * amp * np.sin(t + phase) * (1 + 0.2 * v)
        coords += rng.normal(scale=0.02, size=coords.shape).astype(np.float32)
        out.append(SkeletonSequence(coords.astype(np.float32), label, num_classes))
    return out


def write_synthetic_dataset(directory, n: int = 8, layout: SkeletonLayout = TOY5,
                            T: int = 16, num_classes: int = 2, seed: int = 0,
                            val_fraction: float = 0.0) -> Path:
    """Write ``n`` SKL1 files plus a ``manifest.tsv``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    seqs = synthetic_sequences(n, layout, T, num_classes, seed)
    n_val = int(round(val_fraction * n))
    entries = []
    for i, s in enumerate(seqs):
        name = f"sample_{i:04d}.skl"
        write_sequence(directory / name, s)
        entries.append(ManifestEntry(name, s.label, "val" if i >= n - n_val else "train"))
    manifest = directory / "manifest.tsv"
    write_manifest(manifest, entries)
    return manifest
