"""Command-line entry point: ``glyphdiffuse <subcommand> [options]``."""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import container
from .codec import Codec, train_autoencoder
from .config import RunConfig, load_config, parse_config, preset
from .dataset import Dataset, ToySpec, generate_toy, load_manifest
from .denoiser import DenoiserModel
from .engine import Checkpoint, SampleRequest, sample_batch, train
from .errors import GlyphDiffuseError, ValidationError
from .imageio import write_pgm, write_png
from .metrics import frechet_distance, format_report, style_accuracy, train_style_classifier, write_report

PROG = "glyphdiffuse"


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def resolve_config(args: argparse.Namespace, overrides: dict[str, object]) -> RunConfig:
    """preset -> config file -> --set assignments -> dedicated flags."""
    cfg = preset(args.preset)
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = parse_config(fh.read(), base=cfg)
    cfg = cfg.with_overrides(args.set or [])
    cfg = cfg.with_overrides(f"{k} = {v}" for k, v in overrides.items() if v is not None)
    return cfg.validate()


def load_dataset(cfg: RunConfig) -> Dataset:
    d = cfg.dataset
    if d.manifest:
        return load_manifest(d.manifest, d.height, d.width)
    return generate_toy(ToySpec(d.num_styles, tuple(d.words), d.height, d.width, d.samples_per_pair, d.seed))


def save_image(image, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if str(path).lower().endswith(".png"):
        write_png(image, path)
    else:
        write_pgm(image, path)


def save_codec(codec: Codec, path, config_text: str) -> None:
    meta, tensors = codec.state()
    container.save(path, tensors, {"codec": meta, "run_config": config_text})


def load_codec(path) -> Codec:
    tensors, meta = container.load(path)
    return Codec.from_state(meta["codec"], tensors)


def writer_index(checkpoint: Checkpoint, writer: int) -> int:
    """Dataset writer id -> dense style-table row."""
    if checkpoint.writer_map:
        if writer not in checkpoint.writer_map:
            raise ValidationError(f"writer {writer} was not seen in training; known: {sorted(checkpoint.writer_map)}")
        return checkpoint.writer_map[writer]
    return writer


def parse_steps(text: str) -> list[int]:
    """``start:stop:step`` with an inclusive stop."""
    try:
        start, stop, step = (int(p) for p in text.split(":"))
    except ValueError:
        raise ValidationError(f"--steps expects start:stop:step, got {text!r}") from None
    if step < 1 or start < 1 or stop < start:
        raise ValidationError(f"--steps needs 1 <= start <= stop and step >= 1, got {text!r}")
    return list(range(start, stop + 1, step))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_toy(args) -> int:
    cfg = resolve_config(args, {"dataset.seed": args.seed})
    d = cfg.dataset
    ds = generate_toy(ToySpec(d.num_styles, tuple(d.words), d.height, d.width, d.samples_per_pair, d.seed),
                      out_dir=args.out)
    print(f"records={len(ds)} manifest={Path(args.out) / 'manifest.tsv'}")
    return 0


def cmd_train_codec(args) -> int:
    cfg = resolve_config(args, {"dataset.manifest": args.data, "codec.kind": args.kind})
    ds = load_dataset(cfg)
    c = cfg.codec
    if c.kind == "learned":
        history: list[float] = []
        codec = train_autoencoder(ds.images(), c.autoencoder(), seed=c.seed, history=history)
        for i, loss in enumerate(history, start=1):
            print(f"codec_epoch={i} loss={loss:.6f}")
    else:
        codec = Codec(c.kind, c.factor, c.latent_channels, seed=c.seed)
        codec.fit_stats(ds.images())
    save_codec(codec, args.out, cfg.to_text())
    print(codec.describe())
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args, {
        "dataset.manifest": args.data, "train.epochs": args.epochs, "train.learning_rate": args.lr,
        "train.batch_size": args.batch_size, "train.seed": args.seed, "sample.checkpoint": args.out})
    ds = load_dataset(cfg)
    if args.codec:
        codec = load_codec(args.codec)
    elif cfg.codec.kind == "learned":
        codec = train_autoencoder(ds.images(), cfg.codec.autoencoder(), seed=cfg.codec.seed)
    else:
        codec = Codec(cfg.codec.kind, cfg.codec.factor, cfg.codec.latent_channels, seed=cfg.codec.seed)
    vocab = ds.vocabulary()
    model = DenoiserModel(cfg.denoiser, codec.latent_channels, ds.num_writers, vocab.size)
    ckpt = train(model, ds, cfg.train, codec, cfg.schedule.build(), vocab, run_config=cfg.to_text(),
                 checkpoint_path=cfg.sample.checkpoint)
    print(f"checkpoint={cfg.sample.checkpoint} final_loss={ckpt.history[-1]:.6f}")
    return 0


def _sampling_config(args) -> tuple[RunConfig, Checkpoint]:
    cfg = resolve_config(args, {"sample.checkpoint": args.checkpoint, "sample.t_sample": args.t_sample,
                                "sample.seed": args.seed})
    return cfg, Checkpoint.load(cfg.sample.checkpoint)


def cmd_sample(args) -> int:
    cfg, ckpt = _sampling_config(args)
    req = SampleRequest(args.word, writer_index(ckpt, args.writer), t_sample=cfg.sample.t_sample,
                        seed=cfg.sample.seed)
    save_image(sample_batch(ckpt, [req])[0], args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_interpolate(args) -> int:
    cfg, ckpt = _sampling_config(args)
    a, b = writer_index(ckpt, args.writer_a), writer_index(ckpt, args.writer_b)
    try:
        lams = [float(x) for x in args.lambdas.split(",")]
    except ValueError:
        raise ValidationError(f"--lambdas expects comma-separated numbers, got {args.lambdas!r}") from None
    reqs = [SampleRequest(args.word, interpolation=(a, b, lam), t_sample=cfg.sample.t_sample,
                          seed=cfg.sample.seed) for lam in lams]
    for lam, image in zip(lams, sample_batch(ckpt, reqs)):
        path = Path(args.out_dir) / f"lambda_{lam:.3f}.pgm"
        save_image(image, path)
        print(f"wrote {path}")
    return 0


def cmd_sweep(args) -> int:
    cfg, ckpt = _sampling_config(args)
    steps = parse_steps(args.steps)
    w = writer_index(ckpt, args.writer)
    reqs = [SampleRequest(args.word, w, t_sample=s, seed=cfg.sample.seed) for s in steps]
    for s, image in zip(steps, sample_batch(ckpt, reqs)):
        path = Path(args.out_dir) / f"t_sample_{s:04d}.pgm"
        save_image(image, path)
        print(f"wrote {path}")
    return 0


def cmd_evaluate(args) -> int:
    cfg, ckpt = _sampling_config(args)
    if args.data is not None or args.n is not None:
        cfg = cfg.with_overrides(f"{k} = {v}" for k, v in
                                 {"dataset.manifest": args.data, "metrics.n_generated": args.n}.items()
                                 if v is not None).validate()
    m = cfg.metrics
    real = load_dataset(cfg)
    clf = train_style_classifier(real, m.classifier(), seed=m.seed)
    words = sorted(set(real.words()))
    writers = ckpt.model.num_writers
    reqs = [SampleRequest(words[i % len(words)], i % writers, t_sample=cfg.sample.t_sample,
                          seed=cfg.sample.seed + i) for i in range(m.n_generated)]
    fake = np.stack(sample_batch(ckpt, reqs)).astype(np.float32)
    labels = np.array([r.writer_id for r in reqs])
    metrics = {
        "fid": frechet_distance(clf.features(real.images()), clf.features(fake)),
        "style_accuracy": style_accuracy(clf, fake, labels),
        "n_real": len(real),
        "n_generated": len(fake),
    }
    print(format_report(metrics))
    print(f"classifier_heldout_accuracy={clf.heldout_accuracy}")
    if args.out:
        write_report(metrics, args.out, cfg.to_text())
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file of 'section.key = value' lines")
    common.add_argument("--preset", default="desk", help="base preset (desk or iam-full)")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config key")

    parser = argparse.ArgumentParser(prog=PROG, description="Latent diffusion for styled word images.")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("gen-toy", parents=[common], help="render the procedural toy dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_toy)

    p = sub.add_parser("train-codec", parents=[common], help="fit codec statistics or train an autoencoder")
    p.add_argument("--data", help="manifest path (default: toy set)")
    p.add_argument("--kind", choices=("identity", "pooled", "learned"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_codec)

    p = sub.add_parser("train", parents=[common], help="train the denoiser")
    p.add_argument("--data", help="manifest path (default: toy set)")
    p.add_argument("--codec", help="codec file from train-codec")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="checkpoint path")
    p.set_defaults(func=cmd_train)

    def sampling(name, help_text, func):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--checkpoint")
        p.add_argument("--t-sample", type=int)
        p.add_argument("--seed", type=int)
        p.set_defaults(func=func)
        return p

    p = sampling("sample", "generate one word image", cmd_sample)
    p.add_argument("--word", required=True)
    p.add_argument("--writer", type=int, required=True)
    p.add_argument("--out", required=True, help=".pgm or .png")

    p = sampling("interpolate", "blend two writer styles", cmd_interpolate)
    p.add_argument("--word", required=True)
    p.add_argument("--writer-a", type=int, required=True)
    p.add_argument("--writer-b", type=int, required=True)
    p.add_argument("--lambdas", default="0,0.25,0.5,0.75,1")
    p.add_argument("--out-dir", required=True)

    p = sampling("sweep-timesteps", "sample one word at several truncation points", cmd_sweep)
    p.add_argument("--word", required=True)
    p.add_argument("--writer", type=int, required=True)
    p.add_argument("--steps", default="100:1000:100", help="start:stop:step, stop inclusive")
    p.add_argument("--out-dir", required=True)

    p = sampling("evaluate", "FID-lite and style accuracy of generated samples", cmd_evaluate)
    p.add_argument("--data", help="manifest of real images (default: toy set)")
    p.add_argument("--n", type=int, help="number of generated images")
    p.add_argument("--out", help="JSON summary path")
    return parser


def _thread_limit() -> int | None:
    raw = os.environ.get("GLYPH_DIFFUSE_THREADS", "").strip()
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"GLYPH_DIFFUSE_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValidationError(f"GLYPH_DIFFUSE_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        limit = _thread_limit()
        if limit is None:
            return args.func(args)
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=limit):
            return args.func(args)
    except (GlyphDiffuseError, ValueError, OSError, IndexError, KeyError) as exc:
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"{PROG}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
