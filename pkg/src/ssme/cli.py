"""Command-line entry point: ``ssme <command> [options]``."""
import argparse
import os
import sys

from . import __version__
from .datacube import synth_cube, write_cube, write_pgm
from .exceptions import SSMEError, StageError
from .pipeline import (
    build_config,
    compare_configs,
    format_table,
    parse_runs,
    run_classify,
    run_compare,
    run_embed,
    run_evaluate,
    run_pipeline,
)

DEFAULT_RUNS = "osf,pca:30,le:60,lle:60,ssme:16"


def _common(p, method=True, embedding=True):
    p.add_argument("--config", metavar="PATH", help="key = value file; flags override it")
    p.add_argument("--cube", metavar="HDR", help="cube header")
    p.add_argument("--labels", metavar="PATH", help="label raster (PGM or flat uint16)")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--train", help="training pixels per class, or 'table1'")
    p.add_argument("--names", help="id,name CSV, 'indian-pines' or 'table1'")
    if method:
        p.add_argument("--method", choices=("ssme", "pca", "le", "lle", "osf"))
    if embedding:
        p.add_argument("--k", type=int)
        p.add_argument("--dims", type=int)
        p.add_argument("--eta", type=float, help="coupling tolerance (default 1e-3)")
        p.add_argument("--ridge", type=float)
        p.add_argument("--sigma", help="heat kernel width or 'auto'")
        p.add_argument("--normalize", action="store_true", default=None,
                       help="per-band min-max scaling to [0, 1]")
        p.add_argument("--dump", action="append",
                       choices=("graph", "affinity", "embedding", "map"))
        p.add_argument("--no-cache", dest="cache", action="store_false", default=None)


def _config(args, **extra):
    keys = ("cube", "labels", "seed", "threads", "out", "train", "names", "method", "k",
            "dims", "eta", "ridge", "sigma", "normalize", "dump", "cache")
    over = {k: getattr(args, k, None) for k in keys}
    over.update(extra)
    return build_config(args.config, **over)


def cmd_pipeline(args):
    res = run_pipeline(_config(args))
    r = res.report
    print(f"{res.params['method']}: OA={r.oa:.4f} AA={r.aa:.4f} kappa={r.kappa:.4f}")
    for path in res.paths:
        print(path)


def cmd_compare(args):
    base = _config(args)
    rows = run_compare(compare_configs(base, parse_runs(args.runs), base.out), base.out)
    sys.stdout.write(format_table(rows))


def cmd_embed(args):
    for path in run_embed(_config(args)):
        print(path)


def cmd_classify(args):
    for path in run_classify(args.embedding, _config(args)):
        print(path)


def cmd_evaluate(args):
    report, paths = run_evaluate(args.classmap, _config(args))
    print(f"OA={report.oa:.4f} AA={report.aa:.4f} kappa={report.kappa:.4f}")
    for path in paths:
        print(path)


def cmd_synth(args):
    cube, labels = synth_cube(args.height, args.width, args.classes, args.bands,
                              args.noise, args.seed)
    os.makedirs(args.out, exist_ok=True)
    hdr = os.path.join(args.out, "scene.hdr")
    write_cube(hdr, cube)
    lab = os.path.join(args.out, "labels.pgm")
    write_pgm(lab, labels.labels)
    print(hdr)
    print(lab)


def build_parser():
    parser = argparse.ArgumentParser(prog="ssme", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pipeline", help="embed, classify and score one method")
    _common(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("compare", help="run several methods on one split")
    _common(p, method=False)
    p.add_argument("--runs", default=DEFAULT_RUNS,
                   help=f"comma list of method[:dims] (default {DEFAULT_RUNS})")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("embed", help="write an embedding dump")
    _common(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("classify", help="1-NN class map from an embedding dump")
    _common(p, method=False, embedding=False)
    p.add_argument("embedding", help="embedding dump written by 'embed'")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="score a class map on the test pixels")
    _common(p, method=False, embedding=False)
    p.add_argument("classmap", help="class map raster written by 'classify'")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="write a synthetic labeled scene")
    p.add_argument("--height", type=int, default=24)
    p.add_argument("--width", type=int, default=24)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--bands", type=int, default=30)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="synth")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except StageError as exc:
        print(f"ssme: {exc}", file=sys.stderr)
        return 2
    except (SSMEError, OSError) as exc:
        print(f"ssme: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
