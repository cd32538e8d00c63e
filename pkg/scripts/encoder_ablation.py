"""Ablate the text encoder: positional encoding and attention on or off.

Trains one short run per variant from the same seed and reports the
final training loss plus style accuracy of a few samples.  Intended as a
qualitative check; at desk scale the differences are small and noisy.
"""
import argparse
import dataclasses

from glyphdiffuse.denoiser import DenoiserConfig
from glyphdiffuse.experiments import TOY_TRAIN, evaluate_toy, train_toy

VARIANTS = {
    "full": {},
    "no_positional_encoding": {"use_positional_encoding": False},
    "no_attention": {"use_attention": False},
    "embedding_only": {"use_positional_encoding": False, "use_attention": False},
}


def main():
    ap = argparse.ArgumentParser(description="text encoder ablation")
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--n", type=int, default=16)
    ap.add_argument("--t-sample", type=int, default=1000)
    args = ap.parse_args()

    cfg = dataclasses.replace(TOY_TRAIN, epochs=args.epochs, log_every=0)
    print(f"{'variant':<24} {'final_loss':>10} {'style_acc':>9}")
    for name, overrides in VARIANTS.items():
        run = train_toy(config=cfg, denoiser=DenoiserConfig(**overrides))
        ev = evaluate_toy(run, n=args.n, t_sample=args.t_sample)
        print(f"{name:<24} {run.history[-1]:>10.5f} {ev.style_accuracy:>9.3f}")


if __name__ == "__main__":
    main()
