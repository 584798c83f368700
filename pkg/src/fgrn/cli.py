"""Command-line entry point: ``fgrn <command> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from fgrn import io
from fgrn.checks import exactness_suite, fits_oracle
from fgrn.errors import FgrnError
from fgrn.inference import mode_complete, mode_correct, mode_encode, mode_generative
from fgrn.quadtree import extract_patches, train_layerwise

log = logging.getLogger("fgrn")

MISMATCH_TOL = 1e-9


def _binary_image(path, net, threshold=0.5) -> np.ndarray:
    img = io.load_images([path], threshold).images[0]
    if img.shape != net.grid_shape(0):
        raise SystemExit(f"{path}: image {img.shape} does not match network input {net.grid_shape(0)}")
    return img


def cmd_train(args) -> int:
    run = io.load_config(args.config)
    cfg = run.architecture
    corpus = io.load_images(io.image_paths(args.images), run.threshold)
    pyramids = [
        extract_patches(img, cfg, run.patches_per_image, seed=cfg.seed + j)
        for j, img in enumerate(corpus.images)
    ]
    log.info("training on %d patches from %d images", sum(map(len, pyramids)), len(corpus))
    net = train_layerwise(pyramids, cfg)
    net.metadata.update(images=corpus.names, threshold=run.threshold, patches_per_image=run.patches_per_image)
    io.save_checkpoint(net, args.out)
    return 0


def cmd_generate(args) -> int:
    net = io.load_checkpoint(args.ckpt)
    fwd = mode_generative(net, args.layer, (args.row, args.col), args.state)
    io.render_distribution_grid(fwd, args.out)
    return 0


def cmd_encode(args) -> int:
    net = io.load_checkpoint(args.ckpt)
    posts = mode_encode(net, _binary_image(args.image, net))
    Path(args.out).write_text(io.format_encoding(posts))
    return 0


def cmd_complete(args) -> int:
    net = io.load_checkpoint(args.ckpt)
    image = _binary_image(args.image, net)
    mask = io.load_mask(args.mask)
    if mask.shape != image.shape:
        raise SystemExit(f"mask {mask.shape} does not match image {image.shape}")
    res = mode_complete(net, image, mask)
    # observed pixels keep their value, erased ones show the recalled distribution
    shown = np.where(mask[..., None], np.eye(net.card(0))[image], res.forward)
    io.render_distribution_grid(shown, args.out)
    return 0


def cmd_correct(args) -> int:
    net = io.load_checkpoint(args.ckpt)
    soft = io.read_soft(args.soft, net.grid_shape(0), net.card(0))
    io.render_distribution_grid(mode_correct(net, soft), args.out)
    return 0


def cmd_oracle_check(args) -> int:
    net = io.load_checkpoint(args.ckpt) if args.ckpt else None
    if net is not None and not fits_oracle(net, args.max_vars):
        log.warning("checkpoint network is too large to enumerate; checking random networks instead")
        net = None
    results = exactness_suite(args.trials, args.seed, max_vars=args.max_vars, net=net)
    worst = max(r.posterior_error for r in results)
    diam = max(r.diameter_change for r in results)
    gap = max(r.schedule_gap for r in results)
    skipped = sum(r.skipped for r in results)
    target = "checkpoint network" if net is not None else "random networks"
    print(f"{len(results)} trials on {target}: max posterior error {worst:.3g}, "
          f"diameter change {diam:.3g}, schedule gap {gap:.3g}, impossible evidence {skipped}")
    return 1 if worst > MISMATCH_TOL else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fgrn", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a quadtree network on a directory of images")
    p.add_argument("--config", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="render the pixel distribution under a clamped latent")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--layer", type=int, required=True)
    p.add_argument("--state", type=int, required=True)
    p.add_argument("--row", type=int, default=0)
    p.add_argument("--col", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("encode", help="write latent posteriors of an image as text")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("complete", help="recall erased pixels (mask value 0 marks erased)")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("correct", help="clean up per-pixel soft evidence")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--soft", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("oracle-check", help="compare inference against brute-force enumeration")
    p.add_argument("--ckpt")
    p.add_argument("--max-vars", type=int, default=20)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_oracle_check)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except FgrnError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
