"""Sample one word at every truncation point and tile the results.

Each row starts the reverse chain from a different T_sample with the same
seed; small values leave the latent mostly noise, large values give the
model the whole schedule.
"""
import argparse
import pathlib
import time

import numpy as np

from glyphdiffuse.engine import Checkpoint, SampleRequest, sample_batch
from glyphdiffuse.experiments import image_grid
from glyphdiffuse.imageio import write_png


def main():
    ap = argparse.ArgumentParser(description="truncated sampling sweep")
    ap.add_argument("checkpoint")
    ap.add_argument("--word", default="ink")
    ap.add_argument("--writer", type=int, default=0)
    ap.add_argument("--steps", default="100,200,300,400,500,600,700,800,900,1000")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/sweep.png")
    args = ap.parse_args()

    ckpt = Checkpoint.load(args.checkpoint)
    steps = [int(s) for s in args.steps.split(",")]
    reqs = [SampleRequest(args.word, args.writer, t_sample=s, seed=args.seed) for s in steps]
    start = time.perf_counter()
    images = sample_batch(ckpt, reqs)
    print(f"{len(steps)} truncation points in {time.perf_counter() - start:.1f}s")
    for s, img in zip(steps, images):
        print(f"t_sample={s:4d} ink_fraction={np.mean(img < 0):.3f}")
    pathlib.Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_png(image_grid(np.stack(images), columns=1), args.out)


if __name__ == "__main__":
    main()
