"""Command-line front end.

Heavy imports happen inside the subcommands so that GPDBN_THREADS can
pin the BLAS thread pools before anything numerical loads.  Exit codes:
0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys


def _apply_thread_env():
    threads = os.environ.get("GPDBN_THREADS")
    if not threads:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = threads


def _parse_floats(text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _parse_ints(text: str):
    try:
        return [int(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _add_dataset_args(p: argparse.ArgumentParser):
    p.add_argument("--stars", action="store_true", help="use the built-in star family")
    p.add_argument("--data", help="directory of binary PGM images")
    p.add_argument("--idx", help="idx-format image file")
    p.add_argument("--labels", help="idx-format label file (enables --digits)")
    p.add_argument("--limit", type=int, help="cap on the number of images loaded")
    p.add_argument("--digits", type=_parse_ints, help="keep only these labels, e.g. 0,1,2")


def _load_dataset(args, parser: argparse.ArgumentParser):
    from . import data

    chosen = [bool(args.stars), args.data is not None, args.idx is not None]
    if sum(chosen) != 1:
        parser.error("choose exactly one dataset source: --stars, --data or --idx")
    if args.stars:
        return data.gen_stars()
    if args.data:
        return data.load_pgm_dir(args.data)
    return data.load_idx(args.idx, args.labels, limit=args.limit, digits=args.digits)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpdbn", description="Train, query and serve the generative shape model."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-stars", help="write the star image family as PGM files")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=30)
    p.add_argument("--size", type=int, default=32)

    p = sub.add_parser("train", help="fit a model and write a checkpoint")
    _add_dataset_args(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--q", type=int, default=2, help="latent dimensions")
    p.add_argument(
        "--arch", type=_parse_ints, default=[200, 100, 50],
        help="hidden layer widths from the visible layer upward, e.g. 200,100,50",
    )
    p.add_argument("--log-every", type=int, default=10)
    p.add_argument("--fixed-noise", action="store_true",
                   help="keep the observation noise variance at its initial value")

    p = sub.add_parser("sample", help="decode an image at a latent point")
    p.add_argument("--model", required=True)
    p.add_argument("--x", required=True, type=_parse_floats, help="latent point, e.g. 0.3,-0.1")
    p.add_argument("--j", type=int, default=25, help="decodes averaged per image")
    p.add_argument("--stochastic", action="store_true", help="single raw decode instead")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output PGM path")

    p = sub.add_parser("project", help="find the latent point explaining an image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True, help="input PGM path")
    p.add_argument("--noise", type=float, default=0.0,
                   help="salt-and-pepper fraction applied before projecting")
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--gamma", default="auto")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the reconstruction as PGM")

    p = sub.add_parser("eval", help="projection experiment with a corruption baseline")
    _add_dataset_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--noise", type=float, default=0.2)
    p.add_argument("--indices", type=_parse_ints, help="subset of image indices")
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV output path (default: stdout)")

    p = sub.add_parser("interp", help="score decoded frames along the latent geodesic")
    _add_dataset_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--grid", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", help="write the decoded frames as PGM files")

    p = sub.add_parser("export-manifold", help="write the latent atlas as JSON")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", type=int, default=40)
    p.add_argument("--j", type=int, default=9)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("serve", help="expose a checkpoint over HTTP")
    p.add_argument("--model", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", type=int, default=40)

    return parser


def _cmd_gen_stars(args) -> int:
    from . import data

    ds = data.gen_stars(args.count, args.size)
    os.makedirs(args.out, exist_ok=True)
    for i in range(len(ds)):
        path = os.path.join(args.out, f"star_{i:03d}.pgm")
        data.write_pgm(path, ds.images[i], ds.width, ds.height)
    print(f"wrote {len(ds)} images to {args.out}")
    return 0


def _cmd_train(args, parser) -> int:
    from . import trainer as tr

    ds = _load_dataset(args, parser)
    arch = tuple(reversed(args.arch))
    model = tr.init_model(ds, q=args.q, arch=arch, seed=args.seed)
    cfg = tr.TrainConfig(
        iters=args.iters,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        seed=args.seed,
        log_every=args.log_every,
        checkpoint_path=args.out,
        optimize_noise=not args.fixed_noise,
    )
    tr.train(model, ds.images, cfg, log_stream=sys.stdout)
    print(f"checkpoint written to {args.out}")
    return 0


def _cmd_sample(args) -> int:
    import numpy as np

    from . import data
    from . import model as gm

    model = gm.load_checkpoint(args.model)
    rng = np.random.default_rng(args.seed)
    x = np.asarray(args.x, dtype=np.float64)
    if x.shape[0] != model.q:
        raise ValueError(f"--x has {x.shape[0]} coordinates, model expects {model.q}")
    if args.stochastic:
        probs = gm.sample_at(model, x, rng)
    else:
        probs = gm.predict_mean(model, x, rng, j=args.j)
    data.write_pgm(args.out, probs, model.width, model.height)
    print(f"log_variance={gm.log_predictive_variance(model, x):.6g}")
    return 0


def _cmd_project(args) -> int:
    import numpy as np

    from . import data
    from . import model as gm

    model = gm.load_checkpoint(args.model)
    pixels, width, height = data.load_pgm(args.image)
    if (width, height) != (model.width, model.height):
        raise ValueError(
            f"image is {width}x{height}, model expects {model.width}x{model.height}"
        )
    rng = np.random.default_rng(args.seed)
    target = pixels if args.noise == 0.0 else data.salt_pepper(pixels, args.noise, rng)
    gamma = args.gamma if args.gamma == "auto" else float(args.gamma)
    result = gm.project(
        model, target, rng, restarts=args.restarts, steps=args.steps, gamma=gamma
    )
    coords = ",".join(f"{v:.6g}" for v in result.x)
    score = data.ssim(result.probs, pixels, width, height)
    print(f"x={coords} loss={result.loss:.6g} ssim_vs_input={score:.6g}")
    if args.out:
        data.write_pgm(args.out, result.probs, width, height)
    return 0


def _cmd_eval(args, parser) -> int:
    import numpy as np

    from . import evaluation as ev
    from . import model as gm

    ds = _load_dataset(args, parser)
    model = gm.load_checkpoint(args.model)
    rng = np.random.default_rng(args.seed)
    report = ev.projection_experiment(
        model, ds, rng, noise_fraction=args.noise, indices=args.indices,
        restarts=args.restarts, steps=args.steps,
    )
    if args.out:
        report.save(args.out)
    else:
        sys.stdout.write(report.to_csv())
    print(
        f"mean ssim_recon={report.mean_recon:.6g} mean ssim_noisy={report.mean_noisy:.6g}"
    )
    return 0


def _cmd_interp(args, parser) -> int:
    import numpy as np

    from . import data
    from . import evaluation as ev
    from . import model as gm

    ds = _load_dataset(args, parser)
    model = gm.load_checkpoint(args.model)
    rng = np.random.default_rng(args.seed)
    mean, sd, _ = ev.interpolation_test(
        model, ds, rng, frames=args.frames, repeats=args.repeats, grid_res=args.grid
    )
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        path = ev.geodesic_path(
            model,
            model.latents.value[0],
            model.latents.value[-1],
            grid_res=args.grid,
            frames=args.frames,
        )
        probs = gm.Predictor(model).mean_probs(path, 25, np.random.default_rng(args.seed))
        for i in range(args.frames):
            out = os.path.join(args.out_dir, f"frame_{i:03d}.pgm")
            data.write_pgm(out, probs[i], model.width, model.height)
    print(f"interpolation ssim mean={mean:.6g} sd={sd:.6g}")
    return 0


def _cmd_export_manifold(args) -> int:
    import numpy as np

    from . import evaluation as ev
    from . import model as gm

    model = gm.load_checkpoint(args.model)
    export = ev.export_manifold(
        model, np.random.default_rng(args.seed), grid_res=args.grid, j=args.j
    )
    export.save(args.out)
    print(f"manifold written to {args.out}")
    return 0


def _cmd_serve(args) -> int:
    from . import serve

    serve.serve_checkpoint(
        args.model, host=args.host, port=args.port, seed=args.seed,
        manifold_grid=args.grid,
    )
    return 0


def main(argv=None) -> int:
    _apply_thread_env()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "gen-stars":
            return _cmd_gen_stars(args)
        if args.command == "train":
            return _cmd_train(args, parser)
        if args.command == "sample":
            return _cmd_sample(args)
        if args.command == "project":
            return _cmd_project(args)
        if args.command == "eval":
            return _cmd_eval(args, parser)
        if args.command == "interp":
            return _cmd_interp(args, parser)
        if args.command == "export-manifold":
            return _cmd_export_manifold(args)
        if args.command == "serve":
            return _cmd_serve(args)
        parser.error(f"unknown command {args.command!r}")
    except Exception as err:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
