"""Command-line interface.

Exit codes: 0 success, 1 usage error (bad flags, bad config), 2 runtime
error.  Diagnostics go to stderr; results go to files or stdout.  Every
command is deterministic given identical inputs, flags, and seed when
CIT_THREADS=1.
"""

import argparse
import dataclasses
import sys

import numpy as np

from . import __version__, fileio, synthdata, training
from .config import TrainConfig, build_config
from .errors import ConfigError
from .tps import TpsWarper


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """argparse variant that reports usage problems via exit code 1."""

    def error(self, message):
        raise UsageError("%s: %s" % (self.prog, message))


_CONFIG_HELP = {
    "height": "canvas height in pixels",
    "width": "canvas width in pixels",
    "steps": "number of optimization steps",
    "batch_size": "samples per optimization step",
    "lr": "base learning rate",
    "decay_start": "step at which the linear decay to zero begins",
    "seed": "run seed (data order and parameter init)",
    "ablation": "B1 matching-only, B2 reasoning-only, B3 full, B4 full+mask loss",
    "tps_k": "control lattice size K (2K^2 warp parameters)",
}


def _add_config_flags(parser):
    parser.add_argument("--config", metavar="FILE",
                        help="configuration file (key = value lines); "
                             "command-line flags win")
    for f in dataclasses.fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        parser.add_argument(flag, dest="cfg_" + f.name, metavar=f.name.upper(),
                            help=_CONFIG_HELP.get(f.name, "config field %s" % f.name))


def _config_from_args(args):
    file_values = fileio.parse_config_file(args.config) if args.config else None
    overrides = {name[4:]: value for name, value in vars(args).items()
                 if name.startswith("cfg_") and value is not None}
    return build_config(file_values, overrides)


def _build_parser():
    parser = Parser(prog="tryon", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND",
                               parser_class=Parser)

    p = sub.add_parser("gen-data",
                       help="write a synthetic dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--count", type=int, required=True, help="number of samples")
    _add_config_flags(p)  # --seed here is the seed of the first sample

    p = sub.add_parser("train-matching",
                       help="train the stage-1 warp model")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint file to write")
    _add_config_flags(p)

    p = sub.add_parser("train-tryon",
                       help="train the stage-2 rendering model")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--stage1", required=True, help="stage-1 checkpoint")
    p.add_argument("--out", required=True, help="checkpoint file to write")
    _add_config_flags(p)

    p = sub.add_parser("warp",
                       help="warp a cloth image toward a person representation")
    p.add_argument("--ckpt", required=True, help="stage-1 checkpoint")
    p.add_argument("--cloth", required=True, help="cloth image (PPM)")
    p.add_argument("--person", required=True, help="person representation (CITT)")
    p.add_argument("--out", required=True, help="warped cloth output (PPM)")
    p.add_argument("--cloth-mask", help="cloth mask (PGM)")
    p.add_argument("--out-mask", help="warped mask output (PGM)")
    p.add_argument("--out-theta", help="regressed offsets output (CITT)")
    _add_config_flags(p)

    p = sub.add_parser("tryon",
                       help="full two-stage try-on inference")
    p.add_argument("--stage1", required=True, help="stage-1 checkpoint")
    p.add_argument("--stage2", required=True, help="stage-2 checkpoint")
    p.add_argument("--person", required=True, help="person representation (CITT)")
    p.add_argument("--cloth", required=True, help="cloth image (PPM)")
    p.add_argument("--cloth-mask", required=True, help="cloth mask (PGM)")
    p.add_argument("--out", required=True, help="composed image output (PPM)")
    p.add_argument("--out-mask", help="composition mask output (PGM)")
    p.add_argument("--out-render", help="raw rendering output (PPM)")
    _add_config_flags(p)

    p = sub.add_parser("eval",
                       help="compare prediction and reference directories")
    p.add_argument("--pred", required=True, help="predictions directory")
    p.add_argument("--ref", required=True, help="references directory")

    p = sub.add_parser("grad-check",
                       help="finite-difference verification of all gradients")
    p.add_argument("--eps", type=float, default=1e-4, help="central step size")
    p.add_argument("--seed", type=int, default=0, help="input seed")

    sub.add_parser("version", help="print the version")
    return parser


def _cmd_gen_data(args):
    cfg = _config_from_args(args)
    synthdata.generate_dataset(args.out, args.count, cfg.seed, cfg)
    print("wrote %d samples to %s" % (args.count, args.out))
    return 0


def _write_trace(path, losses):
    with open(path, "w", encoding="utf-8") as fh:
        for v in losses:
            fh.write("%r\n" % v)


def _cmd_train_matching(args):
    cfg = _config_from_args(args)
    samples = synthdata.load_dataset(args.data)
    result = training.train_matching(samples, cfg)
    fileio.save_checkpoint(args.out, result.checkpoint)
    _write_trace(args.out + ".loss.txt", result.losses)
    print("saved %s (final loss %r)" % (args.out, result.losses[-1] if result.losses else None))
    return 0


def _cmd_train_tryon(args):
    cfg = _config_from_args(args)
    samples = synthdata.load_dataset(args.data)
    stage1 = fileio.load_checkpoint(args.stage1)
    result = training.train_tryon(samples, stage1, cfg)
    fileio.save_checkpoint(args.out, result.checkpoint)
    _write_trace(args.out + ".loss.txt", result.losses)
    print("saved %s (final loss %r)" % (args.out, result.losses[-1] if result.losses else None))
    return 0


def _cmd_warp(args):
    cfg = _config_from_args(args)
    model, warper = training.build_matching(cfg, fileio.load_checkpoint(args.ckpt))
    person = fileio.read_tensor(args.person)
    cloth = fileio.read_ppm(args.cloth)
    mask = fileio.read_pgm(args.cloth_mask) if args.cloth_mask else None
    theta, warped, warped_mask = training.warp_with_model(model, warper, person,
                                                          cloth, mask)
    fileio.write_ppm(args.out, warped)
    if args.out_mask:
        if warped_mask is None:
            raise ConfigError("--out-mask requires --cloth-mask")
        fileio.write_pgm(args.out_mask, warped_mask)
    if args.out_theta:
        fileio.write_tensor(args.out_theta, theta)
    return 0


def _cmd_tryon(args):
    from .autodiff import Tensor, no_grad

    cfg = _config_from_args(args)
    stage1, warper = training.build_matching(cfg, fileio.load_checkpoint(args.stage1))
    stage2 = training.build_reasoning(cfg, fileio.load_checkpoint(args.stage2))
    person = fileio.read_tensor(args.person)
    cloth = fileio.read_ppm(args.cloth)
    mask = fileio.read_pgm(args.cloth_mask)
    _, warped, warped_mask = training.warp_with_model(stage1, warper, person,
                                                      cloth, mask)
    with no_grad():
        out = stage2.render(Tensor(person), Tensor(warped), Tensor(warped_mask))
    fileio.write_ppm(args.out, out.image.data)
    if args.out_mask:
        fileio.write_pgm(args.out_mask, out.mask.data)
    if args.out_render:
        fileio.write_ppm(args.out_render, out.rendered.data)
    return 0


def _cmd_eval(args):
    lines, _ = training.evaluate_dirs(args.pred, args.ref)
    for line in lines:
        print(line)
    return 0


def _cmd_grad_check(args):
    from .verification import run_suite

    worst = 0.0
    failed = False
    for name, err in run_suite(seed=args.seed):
        print("%s=%r" % (name, err))
        if not np.isfinite(err) or err >= 1e-4:
            failed = True
        worst = max(worst, err)
    print("max_rel_err=%r" % worst)
    return 2 if failed else 0


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    handlers = {
        "gen-data": _cmd_gen_data,
        "train-matching": _cmd_train_matching,
        "train-tryon": _cmd_train_tryon,
        "warp": _cmd_warp,
        "tryon": _cmd_tryon,
        "eval": _cmd_eval,
        "grad-check": _cmd_grad_check,
        "version": lambda a: (print(__version__), 0)[1],
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures map to exit 2
        print("error: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
