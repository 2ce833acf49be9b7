"""Command-line entry point: ``hypergcn <command> ...``.

Every command prints machine-readable ``key=value`` lines on stdout; logs go
to stderr.  Exit codes: 0 success, 2 configuration or usage error, 3 data
error, 4 numeric failure.

Environment: ``HGCN_THREADS`` caps BLAS threads, ``HGCN_SEED`` overrides the
configured seed.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .data import Modality, load_dataset, load_sequence, prepare, stack_sequences
from .errors import (BoundaryDegeneracy, CheckpointError, ConfigError, DataError,
                     HyperGCNError, ShapeMismatch)
from .gradcheck import gradcheck
from .graph import normalize_hypergraph_forward, write_matrix_csv
from .network import HyperGCN, ModelConfig, count_params, flop_breakdown, load_checkpoint, \
    save_checkpoint
from .train import TrainState, accuracy, fit, fuse_scores

log = logging.getLogger("hypergcn")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def emit(**pairs):
    for k, v in pairs.items():
        print(f"{k}={v}")
    sys.stdout.flush()


def _seed_override(default: int) -> int:
    raw = os.environ.get("HGCN_SEED")
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"HGCN_SEED must be an integer, got {raw!r}") from None


def _thread_limit():
    raw = os.environ.get("HGCN_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"HGCN_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("HGCN_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _apply_seed(cfg: RunConfig) -> RunConfig:
    seed = _seed_override(cfg.seed)
    if seed != cfg.seed:
        cfg = dataclasses.replace(cfg, seed=seed, model=dataclasses.replace(cfg.model, seed=seed))
    return cfg


# --- train ---------------------------------------------------------------------

METRICS_HEADER = "epoch\tlr\ttrain_loss\ttrain_acc\tval_acc"


def format_metrics(m: dict) -> str:
    return (f"{m['epoch']}\t{m['lr']:.12g}\t{m['loss']:.10f}\t{m['acc']:.6f}\t"
            f"{m['val_acc']:.6f}")


def cmd_train(args) -> int:
    cfg = _apply_seed(load_config(args.config))
    if cfg.manifest is None:
        raise ConfigError("train needs a manifest key")
    mc = cfg.model
    common = dict(root=cfg.data_root, layout=mc.skeleton, modality=cfg.modality, T=mc.T_in,
                  max_persons=mc.max_persons)
    train = load_dataset(cfg.manifest, split=cfg.train_split, **common)
    if train is None:
        raise DataError(f"no '{cfg.train_split}' samples in {cfg.manifest}")
    val = load_dataset(cfg.manifest, split=cfg.val_split, **common)
    if np.any(train.labels >= mc.num_classes) or (val is not None and
                                                   np.any(val.labels >= mc.num_classes)):
        raise DataError(f"labels exceed num_classes={mc.num_classes}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.txt")
    model = HyperGCN(mc)
    state = TrainState(seed=cfg.seed)
    metrics_path = out / "metrics.tsv"
    with open(metrics_path, "w") as fh:
        fh.write(METRICS_HEADER + "\n")

        def on_epoch(m):
            fh.write(format_metrics(m) + "\n")
            fh.flush()
            if cfg.checkpoint_every and (m["epoch"] + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(out / f"epoch_{m['epoch']:04d}.ckpt", model)
            if val is not None and m["val_acc"] >= state.best_acc:
                save_checkpoint(out / "best.ckpt", model)

        history = fit(model, train, cfg.optim, state, val, on_epoch)
    save_checkpoint(out / "final.ckpt", model)
    last = history[-1]
    summary = dict(epochs=len(history), steps=state.step, params=count_params(model),
                   final_lr=f"{last['lr']:.12g}", final_train_loss=f"{last['loss']:.6f}",
                   final_train_acc=f"{last['acc']:.4f}",
                   best_val_acc=f"{state.best_acc:.4f}" if val is not None else "nan",
                   train_samples=len(train), val_samples=0 if val is None else len(val),
                   checkpoint=out / "final.ckpt", metrics=metrics_path)
    (out / "summary.txt").write_text("".join(f"{k}={v}\n" for k, v in summary.items()))
    emit(**summary)
    return EXIT_OK


# --- eval / ensemble -------------------------------------------------------------

def write_scores(path, scores: np.ndarray, labels: np.ndarray) -> None:
    """One row per sample: label, then the raw class scores, tab-separated."""
    with open(path, "w") as fh:
        for y, row in zip(labels, scores):
            fh.write(f"{int(y)}\t" + "\t".join(repr(float(v)) for v in row) + "\n")


def read_scores(path) -> tuple[np.ndarray, np.ndarray]:
    labels, rows = [], []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read score file {path}: {exc.strerror or exc}") from None
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        try:
            labels.append(int(parts[0]))
            rows.append([float(v) for v in parts[1:]])
        except ValueError:
            raise DataError(f"{path}:{lineno}: malformed score row") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise ShapeMismatch(f"{path}: score rows are empty or ragged")
    return np.array(labels, dtype=np.int64), np.array(rows)


def _load_model(path) -> HyperGCN:
    if not Path(path).is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def cmd_eval(args) -> int:
    model = _load_model(args.checkpoint)
    mc = model.cfg
    if not Path(args.manifest).is_file():
        raise ConfigError(f"manifest not found: {args.manifest}")
    data = load_dataset(args.manifest, root=args.data_root, layout=mc.skeleton,
                        modality=args.modality, T=mc.T_in, split=args.split,
                        max_persons=mc.max_persons)
    if data is None:
        raise DataError(f"no samples selected from {args.manifest}")
    if np.any(data.labels >= mc.num_classes):
        raise DataError(f"labels exceed num_classes={mc.num_classes}")
    scores = model.predict(data.x, data.mask)
    if args.scores:
        write_scores(args.scores, scores, data.labels)
    emit(top1=f"{accuracy(scores, data.labels):.4f}", samples=len(data))
    return EXIT_OK


def cmd_ensemble(args) -> int:
    loaded = [read_scores(p) for p in args.scores]
    labels = loaded[0][0]
    for path, (lab, s) in zip(args.scores, loaded):
        if s.shape != loaded[0][1].shape:
            raise ShapeMismatch(f"{path}: shape {s.shape} differs from {loaded[0][1].shape}")
        if not np.array_equal(lab, labels):
            raise ShapeMismatch(f"{path}: labels differ from {args.scores[0]}")
    weights = None
    if args.weights:
        try:
            weights = [float(w) for w in args.weights.split(",")]
        except ValueError:
            raise ConfigError(f"bad weights {args.weights!r}") from None
        if len(weights) != len(loaded):
            raise ConfigError(f"{len(weights)} weights for {len(loaded)} score files")
    fused = fuse_scores([s for _, s in loaded], weights)
    emit(top1=f"{accuracy(fused, labels):.4f}", streams=len(loaded), samples=len(labels))
    return EXIT_OK


# --- gradcheck / flops / export ----------------------------------------------------

def _model_config(path, tiny: bool) -> ModelConfig:
    if path:
        return load_config(path, check_paths=False).model
    return ModelConfig.tiny() if tiny else ModelConfig()


def cmd_gradcheck(args) -> int:
    cfg = _model_config(args.config, tiny=True)
    seed = _seed_override(args.seed)
    report = gradcheck(cfg, args.tolerance, seed, max_per_tensor=args.max_per_tensor,
                       linear=args.linear)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_NUMERIC


def cmd_flops(args) -> int:
    cfg = _model_config(args.config, tiny=False)
    model = HyperGCN(cfg)
    T = cfg.T_in if args.frames is None else args.frames
    fl = flop_breakdown(model, T)
    emit(params=count_params(model), frames=T, joints=cfg.V, flops=fl["total"],
         gflops=f"{fl['total'] / 1e9:.4f}", flops_per_frame_part=fl["per_frame"],
         flops_fixed_part=fl["fixed"])
    return EXIT_OK


def cmd_export_graph(args) -> int:
    model = _load_model(args.checkpoint)
    mc = model.cfg
    seq = load_sequence(args.sample)
    if seq.joint_count != mc.V:
        raise DataError(f"sample has {seq.joint_count} joints, model expects {mc.V}")
    data = stack_sequences([prepare(seq, mc.skeleton, Modality.parse(args.modality), mc.T_in)],
                           mc.max_persons)
    model.predict(data.x[:1], data.mask[:1])
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = 0
    for li, layer in enumerate(model.layers()):
        sp = layer.spatial
        if sp.last_incidence is None:
            continue
        H, w = sp.last_incidence[0], sp.last_edge_weights[0]   # first person
        Hhat, _ = normalize_hypergraph_forward(H, w)
        for j, b in enumerate(sp.active):
            stem = f"layer{li}_branch{b}"
            write_matrix_csv(out / f"{stem}_incidence.csv", H[j])
            write_matrix_csv(out / f"{stem}_propagator.csv", Hhat[j])
            write_matrix_csv(out / f"{stem}_edge_weights.csv", w[j][None, :])
            written += 1
    emit(layers=mc.num_layers, graphs=written, vertices=mc.V + mc.V_h, out_dir=out)
    return EXIT_OK


# --- plumbing ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hypergcn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a run config")
    t.add_argument("config")
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="top-1 accuracy of a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("manifest")
    e.add_argument("--modality", default="joint")
    e.add_argument("--data-root", default=None)
    e.add_argument("--split", default=None, help="train or val (default: all entries)")
    e.add_argument("--scores", default=None, help="write per-sample scores here")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("ensemble", help="fuse score files from several streams")
    s.add_argument("scores", nargs="+")
    s.add_argument("--weights", default=None, help="comma-separated, one per file")
    s.set_defaults(func=cmd_ensemble)

    g = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    g.add_argument("--config", default=None, help="run config (default: tiny model)")
    g.add_argument("--tolerance", type=float, default=1e-4)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--max-per-tensor", type=int, default=4)
    g.add_argument("--linear", action="store_true", help="disable every nonlinearity")
    g.set_defaults(func=cmd_gradcheck)

    f = sub.add_parser("flops", help="parameter and FLOP count")
    f.add_argument("--config", default=None, help="run config (default: full model)")
    f.add_argument("--frames", type=int, default=None)
    f.set_defaults(func=cmd_flops)

    x = sub.add_parser("export-graph", help="write learned incidence matrices as CSV")
    x.add_argument("checkpoint")
    x.add_argument("sample", help="SKL1 sequence file")
    x.add_argument("out_dir")
    x.add_argument("--modality", default="joint")
    x.set_defaults(func=cmd_export_graph)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        with _thread_limit():
            return args.func(args)
    except (ConfigError, CheckpointError, ShapeMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, BoundaryDegeneracy) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except HyperGCNError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
