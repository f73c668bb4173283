"""Command line surface: forge, train, edit, copy-paste, gradcheck, serve, report."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import rngs
from .config import Config
from .dataset import Loader, assemble_sample, read_annotations, align_and_crop, write_shard
from .model import DiscriminatorConfig, GeneratorConfig
from .raster import load_image, load_mask, save_image
from .sketch import SketchConfig, make_sketch
from .colordomain import build_color_map


def _load_config(path) -> Config:
    return Config.load(path) if path else Config()


def cmd_forge(args) -> int:
    config = _load_config(args.config)
    side = config.get_int("size")
    annotations = read_annotations(args.annotations)
    if not annotations:
        raise ValueError(f"{args.annotations}: no usable annotation rows")
    use_sketch_cache = not config.get_bool("sketch.raw_edges")
    samples = []
    cache = {}
    for k in range(args.count):
        ann = annotations[k % len(annotations)]
        if ann.file not in cache:
            img = align_and_crop(load_image(os.path.join(args.input, ann.file)), ann, side)
            # the sketch and color map depend only on the image, so pay
            # for the filter stack once per image, not once per sample
            sketch_bits = make_sketch(img, SketchConfig.from_config(config)).bits if use_sketch_cache else None
            cmap = build_color_map(img, iterations=config.get_int("color.bilateral_iters"))
            cache[ann.file] = (img, sketch_bits, cmap)
            print(f"prepared {ann.file}", file=sys.stderr)
        img, sketch_bits, cmap = cache[ann.file]
        samples.append(
            assemble_sample(
                img,
                rngs.subseed(args.seed, rngs.FORGE, k),
                config,
                sketch_bits=sketch_bits,
                color_map=cmap,
            )
        )
    write_shard(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .training import LossWeights, train

    config = _load_config(args.config)
    gen_cfg = GeneratorConfig.from_config(config)
    disc_cfg = DiscriminatorConfig.from_config(config)
    loader = Loader.from_shards(args.shards, batch=config.get_int("train.batch"), rng_seed=args.seed)

    def progress(row):
        step = int(row[0])
        if step % 50 == 0 or step == args.steps - 1:
            print(
                f"step {step}: d={row[1]:.4f} g={row[2]:.4f} rec={row[3]:.5f}",
                file=sys.stderr,
            )

    state = train(
        loader,
        gen_cfg,
        disc_cfg,
        LossWeights.from_config(config),
        steps=args.steps,
        out_dir=args.out,
        seed=args.seed,
        lr=config.get_float("train.lr"),
        n_critic=config.get_int("train.n_critic"),
        checkpoint_every=config.get_int("train.checkpoint_every"),
        resume=args.resume,
        progress=progress,
    )
    print(f"finished at step {state.step}; checkpoints and metrics.csv in {args.out}")
    return 0


def _load_editor_model(args):
    from .editor import load_model

    config = _load_config(args.config)
    return load_model(args.ckpt, config), config


def cmd_edit(args) -> int:
    from .editor import edit_from_layers

    model, config = _load_editor_model(args)
    image = load_image(args.image)
    mask = load_mask(args.mask)
    sketch = load_mask(args.sketch).bits if args.sketch else None
    color = valid = None
    if args.color:
        color = load_image(args.color).to_rgb().data
        valid = color.sum(axis=2) > 0  # black pixels mean "unconstrained"
    out = edit_from_layers(
        image, mask, model, sketch=sketch, color=color, valid=valid, noise_seed=args.seed
    )
    save_image(out, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_copy_paste(args) -> int:
    from .editor import CopyPasteRequest, copy_paste

    model, config = _load_editor_model(args)
    try:
        dx, dy = (int(v) for v in args.offset.split(","))
    except ValueError:
        raise ValueError(f"--offset wants X,Y integers, got {args.offset!r}") from None
    req = CopyPasteRequest(
        source=load_image(args.source),
        source_mask=load_mask(args.source_mask),
        target=load_image(args.target),
        offset=(dx, dy),
        noise_seed=args.seed,
    )
    out = copy_paste(req, model, config)
    save_image(out, args.out)
    print(f"wrote {args.out}")
    return 0


def _gradcheck_cases():
    from .autodiff import Tensor, ops
    from .model import lrn

    r = np.random.default_rng(7)
    a = r.standard_normal((3, 4))
    b = r.standard_normal((3, 4))
    m = r.standard_normal((3, 5))
    x_img = r.standard_normal((2, 3, 6, 6))
    w = r.standard_normal((4, 3, 3, 3)) * 0.4
    bias = r.standard_normal(4) * 0.1
    wt = r.standard_normal((3, 2, 3, 3)) * 0.4
    bt = r.standard_normal(2) * 0.1

    def mixed_net(x, w1, b1, w2, b2, wl):
        h = ops.leaky_relu(ops.conv2d(x, w1, b1, stride=2, padding=1), 0.2)
        h = lrn(h)
        h = ops.leaky_relu(ops.conv2d(h, w2, b2, padding=1), 0.2)
        h = ops.flatten(h)
        return ops.mean(h @ wl)

    w1 = r.standard_normal((4, 3, 3, 3)) * 0.4
    b1 = r.standard_normal(4) * 0.1
    w2 = r.standard_normal((4, 4, 3, 3)) * 0.4
    b2 = r.standard_normal(4) * 0.1
    wl = r.standard_normal((4 * 3 * 3, 1)) * 0.3

    return [
        ("add", lambda x, y: ops.tsum(x + y), [a, b]),
        ("mul", lambda x, y: ops.tsum(x * y), [a, b]),
        ("matmul", lambda x, y: ops.tsum(x.transpose((1, 0)) @ y), [a, m]),
        ("reshape", lambda x: ops.tsum(ops.exp(x.reshape((4, 3)))), [a]),
        ("transpose", lambda x: ops.tsum(x.transpose((1, 0)) * 2.0), [a]),
        ("broadcast", lambda x: ops.tsum(ops.broadcast_to(x, (5, 3, 4)) ** 2.0), [a]),
        ("sum-axis", lambda x: ops.tsum(ops.tsum(x, axis=1) ** 2.0), [a]),
        ("mean", lambda x: ops.mean(x * x), [a]),
        ("abs", lambda x: ops.tsum(abs(x)), [a + 0.3]),
        ("pow", lambda x: ops.tsum((x * x + 1.0) ** 1.5), [a]),
        ("leaky-relu", lambda x: ops.tsum(ops.leaky_relu(x, 0.2)), [a + 0.05]),
        ("exp-log", lambda x: ops.tsum(ops.log(ops.exp(x) + 1.0)), [a]),
        ("clip", lambda x: ops.tsum(ops.clip(x, -0.8, 0.8) ** 2.0), [a]),
        ("crop-embed", lambda x: ops.tsum(ops.embed(x[0:2, 1:3], (5, 5), (slice(1, 3), slice(2, 4)))), [a]),
        ("concat", lambda x, y: ops.tsum(ops.concat([x, y], axis=1) ** 2.0), [a, b]),
        ("sqrt-norm", lambda x: ops.tsum(ops.sqrt(ops.sum_sq(x, axis=1) + 1e-8)), [a]),
        ("softplus", lambda x: ops.tsum(ops.softplus(x)), [a]),
        ("lrn", lambda x: ops.tsum(lrn(x)), [x_img]),
        ("conv2d", lambda x, ww, bb: ops.tsum(ops.conv2d(x, ww, bb, stride=2, padding=1)), [x_img, w, bias]),
        ("conv2d-dilated", lambda x, ww, bb: ops.tsum(ops.conv2d(x, ww, bb, padding=2, dilation=2)), [x_img, w, bias]),
        ("tconv", lambda x, ww, bb: ops.tsum(ops.conv2d_transpose(x, ww, bb, stride=2, padding=1, output_padding=1)), [r.standard_normal((2, 3, 4, 4)), wt, bt]),
        ("mixed-net", mixed_net, [x_img, w1, b1, w2, b2, wl]),
    ]


def cmd_gradcheck(args) -> int:
    from .autodiff import check_grad, check_grad_second

    failures = 0
    for name, fn, arrays in _gradcheck_cases():
        err = check_grad(fn, arrays)
        ok = err < 1e-4
        failures += not ok
        print(f"{'ok  ' if ok else 'FAIL'} {name:<14} max rel err {err:.3e}")
    for name, fn, arrays in _gradcheck_cases():
        if name not in ("conv2d", "mixed-net", "sqrt-norm", "tconv"):
            continue
        err = check_grad_second(fn, arrays)
        ok = err < 1e-3
        failures += not ok
        print(f"{'ok  ' if ok else 'FAIL'} {name + ' (2nd)':<14} max rel err {err:.3e}")
    return 1 if failures else 0


def cmd_serve(args) -> int:
    from .server import serve

    model, config = _load_editor_model(args)
    host, _, port = args.addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"--addr wants HOST:PORT, got {args.addr!r}")
    serve(model, config, host, int(port))
    return 0


def cmd_report(args) -> int:
    from .report import render_report

    for path in render_report(args.metrics, args.out):
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sketchfill")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("forge", help="forge training shards from annotated images")
    f.add_argument("--input", required=True, help="directory of source images")
    f.add_argument("--annotations", required=True, help="csv of file,lx,ly,rx,ry eye positions")
    f.add_argument("--config", default=None)
    f.add_argument("--out", required=True, help="output shard path")
    f.add_argument("--count", type=int, default=200, help="samples to forge")
    f.add_argument("--seed", type=int, default=0)
    f.set_defaults(fn=cmd_forge)

    t = sub.add_parser("train", help="run the adversarial training loop")
    t.add_argument("--shards", nargs="+", required=True)
    t.add_argument("--config", default=None)
    t.add_argument("--steps", type=int, required=True)
    t.add_argument("--out", required=True, help="checkpoint + metrics directory")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--resume", default=None, help="checkpoint to continue from")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("edit", help="complete a masked region from conditioning files")
    e.add_argument("--image", required=True)
    e.add_argument("--mask", required=True)
    e.add_argument("--sketch", default=None, help="binary sketch png (optional)")
    e.add_argument("--color", default=None, help="color strokes png, black = none (optional)")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--config", default=None)
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_edit)

    c = sub.add_parser("copy-paste", help="transplant a region's sketch into another image")
    c.add_argument("--source", required=True)
    c.add_argument("--source-mask", required=True)
    c.add_argument("--target", required=True)
    c.add_argument("--offset", default="0,0", help="X,Y shift in pixels")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--ckpt", required=True)
    c.add_argument("--config", default=None)
    c.add_argument("--out", required=True)
    c.set_defaults(fn=cmd_copy_paste)

    g = sub.add_parser("gradcheck", help="finite-difference check of the autodiff engine")
    g.set_defaults(fn=cmd_gradcheck)

    s = sub.add_parser("serve", help="run the editing API")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--addr", default="127.0.0.1:8642", help="HOST:PORT")
    s.set_defaults(fn=cmd_serve)

    r = sub.add_parser("report", help="render metrics.csv to loss-curve figures")
    r.add_argument("--metrics", required=True)
    r.add_argument("--out", default=None, help="figure directory (default: beside the csv)")
    r.set_defaults(fn=cmd_report)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as e:
        print(f"error: no such file: {e.filename or e}", file=sys.stderr)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
    except RuntimeError as e:
        print(f"error: {e}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
