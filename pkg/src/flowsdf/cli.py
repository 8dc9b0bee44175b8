"""Command-line entry point.

Every subcommand resolves a flat configuration (defaults < ``--config`` file <
``--set key=value`` < dedicated flags), writes it to ``OUT/config.txt`` and
puts all outputs under ``--out``. Re-running a subcommand with
``--config OUT/config.txt`` reproduces its outputs.

Exit codes: 0 ok, 2 config error, 3 I/O error, 4 numerical failure.
"""

import argparse
import logging
import os
import sys

from flowsdf.config import ConfigError, RunConfig
from flowsdf.data import FormatError, load_dataset, read_tensor, write_pgm, write_tensor
from flowsdf.evaluation import ablate_k, ablate_sdf, predict, score, write_csv
from flowsdf.model import CheckpointError
from flowsdf.pipeline import LoadedModel, make_data, read_field, split_dir, train_from_config
from flowsdf.sampler import NonFiniteStateError
from flowsdf.sdf import sdf_from_mask
from flowsdf.train import NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

EPILOG = """exit codes:
  0  success
  2  configuration error (unknown key, invalid value)
  3  I/O error (missing or malformed file)
  4  numerical failure (non-finite loss or state)
"""

# subcommand -> [(flag, config key, help)]
FLAGS = {
    "make-data": [("--seed", "data.seed", "generator seed")],
    "sdf": [("--mask", "paths.mask", "mask file (.fstn or .pgm)"),
            ("--delta", "sdf.delta", "truncation radius in pixels")],
    "train": [("--dataset", "paths.dataset", "dataset directory from make-data"),
              ("--steps", "train.max_steps", "maximum optimizer steps"),
              ("--seed", "train.seed", "training seed")],
    "sample": [("--checkpoint", "paths.checkpoint", "checkpoint file"),
               ("--image", "paths.image", "conditioning image (.fstn or .pgm)"),
               ("--nfe", "sampler.nfe", "field evaluations per integration"),
               ("-T", "sampler.noise_steps", "noise injection steps"),
               ("-K", "sampler.ensemble", "ensemble size"),
               ("--seed", "sampler.seed", "sampling base seed")],
    "eval": [("--checkpoint", "paths.checkpoint", "checkpoint file"),
             ("--dataset", "paths.dataset", "dataset directory"),
             ("--predictions", "paths.predictions", "directory of predicted *_mask.fstn files"),
             ("-K", "sampler.ensemble", "ensemble size"),
             ("--patch", "eval.patch", "patch size for tiled inference (0: whole image)"),
             ("--stride", "eval.stride", "patch stride")],
    "ablate": [("--checkpoint", "paths.checkpoint", "checkpoint of the SDF model"),
               ("--checkpoint-binary", "paths.checkpoint_binary", "checkpoint of the binary model"),
               ("--dataset", "paths.dataset", "dataset directory"),
               ("--mode", "ablate.mode", "k or sdf"),
               ("-K", "sampler.ensemble", "ensemble size for the sdf comparison")],
}


class InputError(OSError):
    pass


def _require_file(path, what):
    if not path:
        raise ConfigError(f"{what} is required")
    if not os.path.exists(path):
        raise InputError(f"{what} not found: {path}")
    return path


def cmd_make_data(cfg, out):
    make_data(cfg, out)


def cmd_sdf(cfg, out):
    mask = read_field(_require_file(cfg["paths.mask"], "mask"))[0] > 0.5
    try:
        sdf = sdf_from_mask(mask, cfg["sdf.delta"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    write_tensor(os.path.join(out, "sdf.fstn"), sdf[None])
    write_pgm(os.path.join(out, "sdf.pgm"), sdf, -cfg["sdf.delta"], cfg["sdf.delta"])


def cmd_train(cfg, out):
    _require_file(cfg["paths.dataset"], "dataset")
    train_from_config(cfg, out)


def _load_model(cfg, key="paths.checkpoint"):
    return LoadedModel(_require_file(cfg[key], "checkpoint"), cfg["sampler.weights"])


def cmd_sample(cfg, out):
    loaded = _load_model(cfg)
    image = read_field(_require_file(cfg["paths.image"], "image"))
    stats = predict(loaded.model, image, cfg.sampler_config(), loaded.scale,
                    cfg["eval.patch"], cfg["eval.stride"])
    lo, hi = -loaded.scale, loaded.scale
    write_tensor(os.path.join(out, "sdf.fstn"), stats.mean)
    write_tensor(os.path.join(out, "variance.fstn"), stats.variance)
    write_tensor(os.path.join(out, "std.fstn"), stats.std)
    write_pgm(os.path.join(out, "sdf.pgm"), stats.mean, lo, hi)
    write_pgm(os.path.join(out, "mask.pgm"), stats.consensus_mask, 0, 1)
    write_pgm(os.path.join(out, "std.pgm"), stats.std, 0, max(float(stats.std.max()), 1e-12))


def _test_split(cfg):
    directory = split_dir(_require_file(cfg["paths.dataset"], "dataset"), "test")
    return directory, load_dataset(directory)


def cmd_eval(cfg, out):
    _, (images, masks) = _test_split(cfg)
    stems = [f"{i:05d}" for i in range(len(images))]
    if cfg["paths.predictions"]:
        pred_dir = _require_file(cfg["paths.predictions"], "predictions")
        preds = [read_tensor(os.path.join(pred_dir, f"{s}_mask.fstn")) > 0.5 for s in stems]
        f, i = score(preds, masks > 0.5)
    else:
        loaded = _load_model(cfg)
        pred_dir = os.path.join(out, "predictions")
        os.makedirs(pred_dir, exist_ok=True)
        preds = []
        for stem, x in zip(stems, images):
            stats = predict(loaded.model, x, cfg.sampler_config(), loaded.scale,
                            cfg["eval.patch"], cfg["eval.stride"])
            write_tensor(os.path.join(pred_dir, f"{stem}_mask.fstn"), stats.consensus_mask)
            preds.append(stats.consensus_mask)
        f, i = score(preds, masks > 0.5)
    rows = [(s, float(a), float(b)) for s, a, b in zip(stems, f, i)]
    rows.append(("mean", float(f.mean()), float(i.mean())))
    write_csv(os.path.join(out, "metrics.csv"), ["image", "f1", "iou"], rows)
    print(f"f1={f.mean():.6f} miou={i.mean():.6f}")


def cmd_ablate(cfg, out):
    _, (images, masks) = _test_split(cfg)
    sampler = cfg.sampler_config()
    patch, stride, repeats = cfg["eval.patch"], cfg["eval.stride"], cfg["eval.repeats"]
    loaded = _load_model(cfg)
    if cfg["ablate.mode"] == "k":
        rows = ablate_k(loaded.model, images, masks, cfg["eval.k_values"], sampler,
                        loaded.scale, repeats, patch, stride)
        write_csv(os.path.join(out, "ablate_k.csv"), ["K", "miou", "f1"], rows)
        return
    binary = _load_model(cfg, "paths.checkpoint_binary")
    rows, checksums = ablate_sdf({"sdf": (loaded.model, loaded.scale),
                                  "binary": (binary.model, binary.scale)},
                                 images, masks, sampler, repeats, patch, stride)
    write_csv(os.path.join(out, "ablate_sdf.csv"), ["variant", "f1", "miou"], rows)
    with open(os.path.join(out, "ablate_sdf_inputs.txt"), "w", encoding="utf-8") as fh:
        fh.writelines(f"{name} {digest}\n" for name, digest in checksums.items())


COMMANDS = {"make-data": cmd_make_data, "sdf": cmd_sdf, "train": cmd_train,
            "sample": cmd_sample, "eval": cmd_eval, "ablate": cmd_ablate}


def build_parser():
    parser = argparse.ArgumentParser(prog="flowsdf", description=__doc__.split("\n")[0],
                                     epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, flags in FLAGS.items():
        p = sub.add_parser(name, epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a configuration key (repeatable, last wins)")
        p.add_argument("--threads", type=int, default=0, help="cap on BLAS threads (0: all cores)")
        p.add_argument("-v", "--verbose", action="store_true")
        for flag, key, help_text in flags:
            p.add_argument(flag, dest=key, default=None, help=f"{help_text} [{key}]")
    return parser


def resolve(args):
    overrides = list(args.set)
    for _, key, _ in FLAGS[args.command]:
        value = getattr(args, key)
        if value is not None:
            overrides.append(f"{key}={value}")
    return RunConfig.load(args.config, overrides)


def _fail(code, kind, message):
    print(f"flowsdf: error code={code} kind={kind} message={message}", file=sys.stderr)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        os.makedirs(args.out, exist_ok=True)
        cfg.write(args.out)
        if args.threads > 0:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=args.threads):
                COMMANDS[args.command](cfg, args.out)
        else:
            COMMANDS[args.command](cfg, args.out)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except (NumericalError, NonFiniteStateError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, "numerical", exc)
    except (OSError, FormatError, CheckpointError) as exc:
        return _fail(EXIT_IO, "io", exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
