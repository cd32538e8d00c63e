"""Train the desk denoiser on the toy glyph set and report style accuracy.

    python scripts/toy_experiment.py --out runs/toy
"""
import argparse
import json
import pathlib
import time

from glyphdiffuse.engine import TrainConfig
from glyphdiffuse.experiments import TOY_TRAIN, evaluate_toy, image_grid, train_toy
from glyphdiffuse.imageio import write_png


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/toy")
    ap.add_argument("--epochs", type=int, default=TOY_TRAIN.epochs)
    ap.add_argument("--lr", type=float, default=TOY_TRAIN.learning_rate)
    ap.add_argument("--batch-size", type=int, default=TOY_TRAIN.batch_size)
    ap.add_argument("--n", type=int, default=64, help="generated images to score")
    ap.add_argument("--t-sample", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                      weight_decay=TOY_TRAIN.weight_decay, seed=args.seed, log_every=10)
    run = train_toy(config=cfg, log=print)
    run.checkpoint.save(out / "checkpoint.gdf")
    print(f"trained {args.epochs} epochs in {run.train_seconds:.0f}s; "
          f"loss {run.history[0]:.4f} -> {run.history[-1]:.4f}")

    ev = evaluate_toy(run, n=args.n, t_sample=args.t_sample, seed=args.seed)
    write_png(image_grid(ev.images, columns=4), out / "samples.png")
    summary = {
        "style_accuracy": ev.style_accuracy,
        "classifier_heldout_accuracy": ev.classifier_heldout,
        "fid": ev.fid,
        "first_epoch_loss": run.history[0],
        "last_epoch_loss": run.history[-1],
        "train_seconds": run.train_seconds,
        "sample_seconds": ev.sample_seconds,
        "n_generated": args.n,
        "t_sample": args.t_sample,
        "finished": time.strftime("%Y-%m-%d %H:%M:%S"),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    for k, v in summary.items():
        print(f"{k}={v}")


if __name__ == "__main__":
    main()
