"""The full Hyper-GCN model, its loss, accounting and checkpoint I/O."""
from __future__ import annotations

import dataclasses
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import SkeletonLayout, get_layout
from .errors import CheckpointError, ConfigError, LabelOutOfRange, ShapeMismatch
from .graph import build_skeleton_adjacency, normalize_adjacency
from .mshgc import DEFAULT_K_SCALES, MultiScaleHyperGraphConv
from .nn import BatchNorm, Conv1x1, Linear, Module, ReLU
from .temporal import MultiScaleTemporalConv

COSINE_EPS = 1e-8


@dataclass
class ModelConfig:
    num_classes: int = 60
    layout: str = "ntu25"
    V_h: int = 3
    T_in: int = 64
    stage_channels: tuple = (128, 256, 256)
    strides: tuple = (1, 2, 2)
    layers_per_stage: int = 3
    k_scales: tuple = DEFAULT_K_SCALES
    label_smoothing: float = 0.1
    embed_width: int | None = None
    max_persons: int = 2
    nonlinear: bool = True
    seed: int = 0

    def __post_init__(self):
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        self.strides = tuple(int(s) for s in self.strides)
        self.k_scales = tuple(int(k) for k in self.k_scales)
        self.validate()

    @property
    def skeleton(self) -> SkeletonLayout:
        return get_layout(self.layout)

    @property
    def V(self) -> int:
        return self.skeleton.joint_count

    @property
    def num_layers(self) -> int:
        return self.layers_per_stage * len(self.stage_channels)

    def validate(self):
        try:
            self.skeleton
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.V_h < 0:
            raise ConfigError("V_h must be >= 0")
        if len(self.strides) != len(self.stage_channels):
            raise ConfigError("strides and stage_channels must have equal length")
        for c in self.stage_channels:
            if c % 8 or c % 4:
                raise ConfigError(f"stage channel {c} must be divisible by 8")
        if any(s not in (1, 2) for s in self.strides):
            raise ConfigError("strides must be 1 or 2")
        if len(self.k_scales) != 8:
            raise ConfigError("k_scales needs 8 values")
        N = self.V + self.V_h
        if any(k < 0 or k > N for k in self.k_scales):
            raise ConfigError(f"k_scales must lie in [0, {N}]")
        if not 0 <= self.label_smoothing < 1:
            raise ConfigError("label_smoothing must lie in [0, 1)")
        if self.T_in < 1 or self.layers_per_stage < 0 or self.max_persons < 1:
            raise ConfigError("T_in, layers_per_stage and max_persons must be positive")

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        """Desk-scale configuration used for gradient checks and overfit runs."""
        base = dict(num_classes=3, layout="toy5", V_h=2, T_in=8,
                    stage_channels=(16, 32, 32), k_scales=(2, 3, 4, 5, 6, 7, 3, 5),
                    max_persons=1)
        base.update(overrides)
        return cls(**base)

    def to_items(self) -> dict[str, str]:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif v is None:
                v = "none"
            elif isinstance(v, bool):
                v = "true" if v else "false"
            out[f.name] = str(v)
        return out

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "ModelConfig":
        kwargs = {}
        names = {f.name: f for f in dataclasses.fields(cls)}
        for key, raw in items.items():
            if key not in names:
                raise ConfigError(f"unknown model key {key!r}")
            kwargs[key] = _parse_field(key, raw)
        return cls(**kwargs)


_TUPLE_KEYS = {"stage_channels", "strides", "k_scales"}


def _parse_field(key, raw):
    raw = raw.strip()
    try:
        if key in _TUPLE_KEYS:
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if key == "layout":
            return raw
        if key == "nonlinear":
            if raw.lower() not in ("true", "false"):
                raise ValueError(raw)
            return raw.lower() == "true"
        if key == "embed_width":
            return None if raw.lower() == "none" else int(raw)
        if key == "label_smoothing":
            return float(raw)
        return int(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


# --- building blocks ---------------------------------------------------------

class Embedding(Module):
    """Pointwise 3 -> C map, learnable per-joint position vectors, BN, ReLU."""

    def __init__(self, cin, cout, V, rng, nonlinear=True):
        super().__init__()
        self.proj = self.add_child("proj", Conv1x1(cin, cout, rng=rng))
        self.add_param("position", 0.02 * rng.standard_normal((cout, V)))
        self.bn = self.add_child("bn", BatchNorm(cout))
        self.relu = self.add_child("relu", ReLU(nonlinear))

    def forward(self, x):
        y = self.proj.forward(x) + self.params["position"][None, :, None, :]
        return self.relu.forward(self.bn.forward(y))

    def backward(self, dy):
        d = self.bn.backward(self.relu.backward(dy))
        self.grads["position"] += d.sum(axis=(0, 2))
        return self.proj.backward(d)


class SpatioTemporalLayer(Module):
    """MS-HGC -> ReLU -> MS-TC, plus a residual path, then ReLU."""

    def __init__(self, cin, cout, stride, A_hat, cfg: ModelConfig, rng):
        super().__init__()
        self.spatial = self.add_child("mshgc", MultiScaleHyperGraphConv(
            cin, cout, A_hat, cfg.k_scales, cfg.V_h, cfg.embed_width, rng))
        self.relu1 = self.add_child("relu1", ReLU(cfg.nonlinear))
        self.temporal = self.add_child("mstc", MultiScaleTemporalConv(
            cout, cout, stride, rng, cfg.nonlinear))
        self.relu2 = self.add_child("relu2", ReLU(cfg.nonlinear))
        self.stride = stride
        if cin != cout or stride != 1:
            self.res_conv = self.add_child("res_conv", Conv1x1(cin, cout, stride, rng=rng))
            self.res_bn = self.add_child("res_bn", BatchNorm(cout))
        else:
            self.res_conv = None

    def forward(self, x):
        y = self.temporal.forward(self.relu1.forward(self.spatial.forward(x)))
        r = x if self.res_conv is None else self.res_bn.forward(self.res_conv.forward(x))
        return self.relu2.forward(y + r)

    def backward(self, dy):
        d = self.relu2.backward(dy)
        dx = self.spatial.backward(self.relu1.backward(self.temporal.backward(d)))
        if self.res_conv is None:
            return dx + d
        return dx + self.res_conv.backward(self.res_bn.backward(d))

    def flops(self, T_in, V):
        total = self.spatial.flops(T_in, V) + self.temporal.flops(T_in, V)
        if self.res_conv is not None:
            total += self.res_conv.flops(T_in, V)
        return total


class Stage(Module):
    """Layers with additive dense connections.

    Layer k (k >= 2) consumes the sum of the outputs of layers 1..k-1, and
    the stage returns the sum of all layer outputs.
    """

    def __init__(self, layers):
        super().__init__()
        self.layers = [self.add_child(f"layer{i}", l) for i, l in enumerate(layers)]

    def forward(self, x):
        if not self.layers:
            return x
        outs = [self.layers[0].forward(x)]
        acc = outs[0]
        for layer in self.layers[1:]:
            outs.append(layer.forward(acc))
            acc = acc + outs[-1]
        return acc

    def backward(self, dout):
        if not self.layers:
            return dout
        # running sum acc_k = acc_{k-1} + g_k(acc_{k-1}); walk it backwards
        d = dout
        for layer in reversed(self.layers[1:]):
            d = d + layer.backward(d)
        return self.layers[0].backward(d)


class HyperGCN(Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        layout = cfg.skeleton
        self.A_hat = normalize_adjacency(build_skeleton_adjacency(layout, self_loops=True))
        c0 = cfg.stage_channels[0]
        self.embedding = self.add_child("embedding", Embedding(3, c0, cfg.V, rng, cfg.nonlinear))
        self.stages = []
        cin = c0
        for s, (cout, stride) in enumerate(zip(cfg.stage_channels, cfg.strides)):
            layers = []
            for i in range(cfg.layers_per_stage):
                layers.append(SpatioTemporalLayer(cin, cout, stride if i == 0 else 1,
                                                  self.A_hat, cfg, rng))
                cin = cout
            self.stages.append(self.add_child(f"stage{s}", Stage(layers)))
        self.c_final = cin
        self.classifier = self.add_child("classifier", Linear(cin, cfg.num_classes, rng=rng))

    def layers(self):
        return [l for st in self.stages for l in st.layers]

    def hyper_joint_matrices(self):
        return [l.spatial.hyper_joint_matrix() for l in self.layers()]

    def forward(self, x, mask=None):
        """Logits for ``x`` of shape (B, P, 3, T, V).

        Present persons are processed as independent batch items; their
        pooled features are averaged per sample before the classifier.
        """
        if x.ndim == 4:
            x = x[:, None]
        B, P = x.shape[:2]
        if x.shape[2] != 3 or x.shape[4] != self.cfg.V:
            raise ShapeMismatch(f"expected (B, P, 3, T, {self.cfg.V}), got {x.shape}")
        if mask is None:
            mask = np.ones((B, P), dtype=bool)
        counts = mask.sum(axis=1)
        if np.any(counts == 0):
            raise ShapeMismatch("every sample needs at least one person")
        feats = x[mask]
        avg = np.zeros((B, len(feats)))
        avg[np.nonzero(mask)[0], np.arange(len(feats))] = 1.0
        avg /= counts[:, None]
        h = self.embedding.forward(feats)
        for st in self.stages:
            h = st.forward(h)
        pooled = h.mean(axis=(2, 3))
        logits = self.classifier.forward(avg @ pooled)
        self._cache = (h.shape, avg)
        return logits

    def backward(self, dlogits):
        hshape, avg = self._cache
        dpooled = avg.T @ self.classifier.backward(dlogits)
        _, _, T, V = hshape
        dh = np.broadcast_to(dpooled[:, :, None, None] / (T * V), hshape)
        for st in reversed(self.stages):
            dh = st.backward(dh)
        self.embedding.backward(dh)

    def loss_and_backward(self, x, labels, mask=None, backward=True):
        """Forward, total loss, and (optionally) gradients accumulated in ``grads``."""
        logits = self.forward(x, mask)
        ce, dlogits = label_smoothed_cross_entropy(logits, labels, self.cfg.label_smoothing)
        div, dF = divergence_loss_and_grad(self)
        if backward:
            self.backward(dlogits)
            for layer, g in zip(self.layers(), dF):
                if g is not None:
                    layer.spatial.grads["hyper_joints"] += g
        return ce + div, logits

    def predict(self, x, mask=None, batch_size=64):
        was = self.training
        self.eval()
        try:
            outs = [self.forward(x[i:i + batch_size], None if mask is None else mask[i:i + batch_size])
                    for i in range(0, len(x), batch_size)]
        finally:
            self.train(was)
        return np.concatenate(outs, axis=0)


# --- losses -----------------------------------------------------------------

def log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def label_smoothed_cross_entropy(logits, labels, smoothing=0.1):
    """Mean smoothed cross-entropy and its gradient with respect to the logits."""
    B, K = logits.shape
    labels = np.asarray(labels)
    if B == 0:
        raise ValueError("empty batch")
    if np.any(labels < 0) or np.any(labels >= K):
        raise LabelOutOfRange(f"labels must lie in [0, {K})")
    q = np.full((B, K), smoothing / K)
    q[np.arange(B), labels] += 1.0 - smoothing
    lp = log_softmax(logits)
    loss = -np.sum(q * lp) / B
    return loss, (np.exp(lp) - q) / B


def cosine_matrix(F_h: np.ndarray) -> np.ndarray:
    """ReLU'd pairwise cosine similarity of hyper-joint columns, zero diagonal."""
    return _cosine_parts(F_h)[0]


def _cosine_parts(F_h):
    G = F_h.T @ F_h
    n = np.sqrt(np.sum(F_h * F_h, axis=0))
    Q = np.outer(n, n) + COSINE_EPS
    R = np.maximum(G, 0.0)
    C = R / Q
    # self-similarity minus the identity cancels exactly
    np.fill_diagonal(C, 0.0)
    return C, G, n, Q, R


def _divergence_term(F_h):
    V_h = F_h.shape[1]
    C, G, n, Q, R = _cosine_parts(F_h)
    scale = 1.0 / (V_h - 1) ** 2
    value = C.sum() * scale
    off = ~np.eye(V_h, dtype=bool)
    A = np.where(off & (G > 0), scale / Q, 0.0)
    dF = F_h @ (A + A.T)
    Bm = np.where(off, scale * R / Q ** 2, 0.0)
    dn = -(Bm @ n + Bm.T @ n)
    safe = np.where(n > 0, n, 1.0)
    dF += F_h * np.where(n > 0, dn / safe, 0.0)[None, :]
    return value, dF


def divergence_loss_and_grad(model: HyperGCN):
    mats = model.hyper_joint_matrices()
    if not mats or model.cfg.V_h < 2:
        return 0.0, [None] * len(mats)
    L = len(mats)
    total, grads = 0.0, []
    for F_h in mats:
        v, g = _divergence_term(F_h)
        total += v / L
        grads.append(g / L)
    return total, grads


def divergence_loss(model: HyperGCN) -> float:
    return divergence_loss_and_grad(model)[0]


def divergence_of(F_h_list) -> float:
    """Divergence averaged over a list of (C, V_h) hyper-joint matrices."""
    if not F_h_list or F_h_list[0].shape[1] < 2:
        return 0.0
    return sum(_divergence_term(F)[0] for F in F_h_list) / len(F_h_list)


def total_loss(logits, labels, model: HyperGCN) -> float:
    ce, _ = label_smoothed_cross_entropy(logits, labels, model.cfg.label_smoothing)
    return ce + divergence_loss(model)


# --- accounting --------------------------------------------------------------

def count_params(model: Module) -> int:
    return int(sum(p.size for p in model.parameters().values()))


def flop_breakdown(model: HyperGCN, T_in: int | None = None, V: int | None = None) -> dict:
    """FLOPs (2 x multiply-accumulates) for one single-person sample.

    ``per_frame`` scales with the frame count; ``fixed`` covers work done
    after temporal pooling (hypergraph construction and the classifier).
    """
    cfg = model.cfg
    T = cfg.T_in if T_in is None else T_in
    V = cfg.V if V is None else V
    per_frame = model.embedding.proj.flops(T, V)
    fixed = model.classifier.flops()
    for layer in model.layers():
        sp = layer.spatial
        graph_part = sp.flops(1, V) - (2 * 8 * sp.c_in * sp.c_out * V + 2 * sp.cin * V * sp.N)
        fixed += graph_part
        per_frame += layer.flops(T, V) - graph_part
        T = -(-T // layer.stride)
    return {"per_frame": int(per_frame), "fixed": int(fixed), "total": int(per_frame + fixed)}


def estimate_flops(model: HyperGCN, T_in: int | None = None, V: int | None = None) -> int:
    return flop_breakdown(model, T_in, V)["total"]


# --- checkpoints -------------------------------------------------------------

CKPT_MAGIC = b"HGCN"
CKPT_VERSION = 1


def save_checkpoint(path, model: HyperGCN, state: dict[str, np.ndarray] | None = None) -> None:
    """Write ``model`` (or an explicit state dict) with its config.

    Layout: magic, u32 version, u32 config length, config text (key=value
    lines), u32 entry count, then per entry in sorted name order: u32 name
    length, name, u32 ndim, u32 dims, float32 data, all little-endian.
    """
    state = model.state_dict() if state is None else state
    meta = "".join(f"{k}={v}\n" for k, v in model.cfg.to_items().items()).encode()
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(meta)), meta,
             struct.pack("<I", len(state))]
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f4")
        raw = name.encode()
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_checkpoint(path) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if raw[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    try:
        pos = 4
        version, meta_len = struct.unpack_from("<II", raw, pos)
        pos += 8
        if version != CKPT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        meta = raw[pos:pos + meta_len].decode()
        pos += meta_len
        items = dict(line.split("=", 1) for line in meta.splitlines() if line)
        cfg = ModelConfig.from_items(items)
        (count,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        state = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            name = raw[pos:pos + n].decode()
            pos += n
            (ndim,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", raw, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            if pos + 4 * size > len(raw):
                raise CheckpointError(f"{path}: truncated entry {name}")
            state[name] = np.frombuffer(raw, "<f4", size, pos).reshape(shape).copy()
            pos += 4 * size
    except struct.error:
        raise CheckpointError(f"{path}: truncated checkpoint") from None
    return cfg, state


def load_checkpoint(path) -> HyperGCN:
    cfg, state = read_checkpoint(path)
    model = HyperGCN(cfg)
    model.load_state_dict(state)
    return model
