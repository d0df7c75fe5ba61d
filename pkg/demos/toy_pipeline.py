"""Run degrade, train, eval and infer through the command-line entry point.

Builds a throwaway split of synthetic images in a temporary directory, so it
needs no downloads and finishes in well under a minute.

    python demos/toy_pipeline.py [--keep DIR]
"""

import argparse
import tempfile
from pathlib import Path

import numpy as np

from adsrnet.cli import main as adsrnet
from adsrnet.data import write_png


def synthetic_image(h, w, seed):
    r = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    channels = [128 + 100 * np.sin(xx / (4 + c) + seed) * np.cos(yy / (6 - c)) for c in range(3)]
    img = np.stack(channels, axis=2) + r.normal(0, 4, (h, w, 3))
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def run(*argv):
    print("$ adsrnet " + " ".join(argv))
    code = adsrnet(list(argv))
    if code != 0:
        raise SystemExit(code)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--keep", help="work in this directory instead of a temporary one")
    args = parser.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(args.keep or tmp)
        for i in range(3):
            write_png(root / "toy" / "HR" / f"{i:03d}.png", synthetic_image(64, 64, i))

        run("degrade", "--hr", str(root / "toy" / "HR"), "--scale", "2", "--out", str(root / "toy" / "LR_x2"))
        run("--threads", "1", "train", "--out", str(root / "run"), "--data.root", str(root), "--data.train", "toy",
            "--model.variant", "six_cru_cb", "--train.patch_lr", "16", "--train.batch_size", "4",
            "--train.total_steps", "30", "--train.lr_initial", "1e-3")
        run("eval", "--baseline", "bicubic", "--data", str(root / "toy"), "--scale", "2")
        run("eval", "--checkpoint", str(root / "run" / "checkpoint.adsr"), "--data", str(root / "toy"), "--scale", "2")
        run("infer", "--checkpoint", str(root / "run" / "checkpoint.adsr"),
            "--in", str(root / "toy" / "LR_x2" / "000.png"), "--out", str(root / "sr.png"))


if __name__ == "__main__":
    main()
