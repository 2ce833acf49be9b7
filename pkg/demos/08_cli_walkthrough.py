"""The command-line tool end to end: data, train, eval, ensemble, export."""
import subprocess
import sys
import tempfile
from pathlib import Path

from hypergcn.data import write_synthetic_dataset


def hgcn(*args):
    out = subprocess.run([sys.executable, "-m", "hypergcn", *map(str, args)],
                         capture_output=True, text=True)
    print(f"$ hypergcn {' '.join(map(str, args[:2]))} ...  (exit {out.returncode})")
    text = out.stdout if out.returncode == 0 else out.stderr
    print("  " + text.strip().replace("\n", "\n  "))
    return out


with tempfile.TemporaryDirectory() as d:
    d = Path(d)
    write_synthetic_dataset(d / "data", n=12, num_classes=2, val_fraction=0.25)
    (d / "run.cfg").write_text(
        "manifest = data/manifest.tsv\nnum_classes = 2\nlayout = toy5\nV_h = 2\nT_in = 8\n"
        "stage_channels = 16,32,32\nk_scales = 2,3,4,5,6,7,3,5\nmax_persons = 1\n"
        "total_epochs = 15\nwarmup_epochs = 3\nstep_epochs = 12\nstep_factors = 0.1\n"
        "batch_size = 3\nseed = 0\n")

    hgcn("train", d / "run.cfg", "--out", d / "run")
    print("  metrics.tsv head:", (d / "run" / "metrics.tsv").read_text().splitlines()[:2])

    # Score one stream as joints and one as bones with the same weights, then fuse.
    for m in ("joint", "bone"):
        hgcn("eval", d / "run" / "final.ckpt", d / "data" / "manifest.tsv", "--split", "val",
             "--modality", m, "--scores", d / f"{m}.tsv")
    hgcn("ensemble", d / "joint.tsv", d / "bone.tsv", "--weights", "2,1")

    hgcn("export-graph", d / "run" / "final.ckpt", d / "data" / "sample_0000.skl", d / "graphs")
    print("  files:", len(list((d / "graphs").glob("*.csv"))))

    hgcn("flops")
    # A config with an unknown key is a usage error (exit 2).
    (d / "bad.cfg").write_text("learning_rate = 0.1\n")
    hgcn("train", d / "bad.cfg", "--out", d / "x")
