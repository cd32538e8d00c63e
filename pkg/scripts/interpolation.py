"""Walk between two writer styles with a fixed seed and word."""
import argparse
import pathlib

import numpy as np

from glyphdiffuse.engine import Checkpoint, SampleRequest, sample_batch
from glyphdiffuse.experiments import image_grid
from glyphdiffuse.imageio import write_png


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("checkpoint")
    ap.add_argument("--word", default="glyph")
    ap.add_argument("--writer-a", type=int, default=0)
    ap.add_argument("--writer-b", type=int, default=3)
    ap.add_argument("--points", type=int, default=6)
    ap.add_argument("--t-sample", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/interpolation.png")
    args = ap.parse_args()

    ckpt = Checkpoint.load(args.checkpoint)
    lambdas = np.linspace(0.0, 1.0, args.points)
    reqs = [SampleRequest(args.word, interpolation=(args.writer_a, args.writer_b, float(lam)),
                          t_sample=args.t_sample, seed=args.seed) for lam in lambdas]
    images = sample_batch(ckpt, reqs)
    pathlib.Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_png(image_grid(np.stack(images), columns=1), args.out)
    print("lambdas:", ", ".join(f"{lam:.2f}" for lam in lambdas))


if __name__ == "__main__":
    main()
