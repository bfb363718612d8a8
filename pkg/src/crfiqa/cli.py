"""Command-line entry points.

Every command writes into its ``--out`` directory together with a
``manifest.json`` that records the exact argument vector; ``crfiqa rerun
manifest.json`` replays it. Exit codes: 0 success, 2 usage error, 3 data
error, 4 training divergence.
"""

import argparse
import logging
import os
import sys

import numpy as np

from . import __version__
from . import io
from .evaluation import (comparison_scores, erc_curve, normalize_scores, pair_quality,
                         reject_grid, template_verification)
from .exceptions import (ConfigError, CRFIQAError, DivergenceError,
                         InsufficientClassesError, MissingIdError)
from .losses import LossConfig
from .model import BackboneConfig, forward_batch, init_state, load_checkpoint, save_checkpoint
from .synthdata import SyntheticSpec, all_pairs, generate, make_templates, split_holdout
from .trainer import TrainConfig, train, train_on_top, write_log

logger = logging.getLogger("crfiqa")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGENCE = 0, 2, 3, 4
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO,
              "debug": logging.DEBUG}


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text):
    if text == "":
        return ()
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _path(out, name):
    return os.path.join(out, name)


def _manifest(args, argv, inputs, outputs):
    config = {k: (list(v) if isinstance(v, tuple) else v)
              for k, v in sorted(vars(args).items()) if k not in ("func", "out", "command")}
    io.write_json(_path(args.out, "manifest.json"), {
        "command": args.command,
        "argv": list(argv),
        "config": config,
        "seed": getattr(args, "seed", None),
        "inputs": inputs,
        "outputs": sorted(outputs),
        "tool_version": __version__,
    })


def cmd_gen_data(args, argv):
    spec = SyntheticSpec(args.num_classes, args.samples_per_class, args.input_dim,
                         args.noise_levels, args.seed)
    data = generate(spec)
    train_part, holdout = split_holdout(data, args.holdout, seed=args.seed + 1)
    tids, tlabels, members = make_templates(holdout, args.template_size, seed=args.seed)
    io.write_dataset(_path(args.out, "dataset.csv"), data)
    io.write_dataset(_path(args.out, "train.csv"), train_part)
    io.write_dataset(_path(args.out, "holdout.csv"), holdout)
    io.write_pairs(_path(args.out, "pairs.csv"), all_pairs(holdout.ids, holdout.labels))
    io.write_templates(_path(args.out, "templates.csv"), members)
    io.write_pairs(_path(args.out, "template_pairs.csv"), all_pairs(tids, tlabels))
    outputs = ["dataset.csv", "train.csv", "holdout.csv", "pairs.csv", "templates.csv",
               "template_pairs.csv"]
    _manifest(args, argv, {}, outputs)
    logger.info("wrote %d samples (%d train, %d held out)", len(data), len(train_part),
                len(holdout))


def cmd_train(args, argv):
    data = io.read_dataset(args.dataset)
    n_classes = int(data.labels.max()) + 1 if len(data) else 0
    if n_classes < 2:
        raise InsufficientClassesError("training needs at least 2 identities")
    backbone = BackboneConfig(data.inputs.shape[1], args.embedding_dim, args.hidden_dims,
                              args.activation, args.head_input,
                              embedding_norm=args.embedding_norm)
    loss = LossConfig(args.scale, args.margin, args.lam, args.beta, args.eps)
    mode = args.mode.replace("-", "_")
    cfg = TrainConfig(loss, args.batch_size, args.iterations, args.lr, None, args.momentum,
                      args.weight_decay, args.seed, args.target, mode, args.warmup)
    state = init_state(backbone, n_classes, seed=args.seed)
    dataset = (data.inputs, data.labels)
    if mode == "on_top":
        state, reports = train(state, dataset, cfg, objective="arcface", log_every=args.log_every)
        state = train_on_top(state, dataset, cfg)
    else:
        state, reports = train(state, dataset, cfg, log_every=args.log_every)
    save_checkpoint(state, _path(args.out, "checkpoint.crfq"))
    write_log(reports, _path(args.out, "train_log.csv"))
    _manifest(args, argv, {"dataset": args.dataset}, ["checkpoint.crfq", "train_log.csv"])
    if reports:
        logger.info("final arc %.4f cr %.5f", reports[-1].arc_loss, reports[-1].cr_loss)


def cmd_score(args, argv):
    state = load_checkpoint(args.checkpoint)
    data = io.read_dataset(args.dataset)
    if data.inputs.shape[1] != state.config.input_dim:
        raise ConfigError(f"dataset has {data.inputs.shape[1]} features, checkpoint expects "
                          f"{state.config.input_dim}")
    out = forward_batch(state, data.inputs)
    raw = out["quality"]
    io.write_quality(_path(args.out, "quality.csv"), data.ids, raw, normalize_scores(raw))
    io.write_embeddings(_path(args.out, "embeddings.csv"), data.ids, out["normalized"])
    _manifest(args, argv, {"checkpoint": args.checkpoint, "dataset": args.dataset},
              ["quality.csv", "embeddings.csv"])


def cmd_erc(args, argv):
    quality = io.read_quality(args.quality, args.quality_column)
    pairs = io.read_pairs(args.pairs)
    embeddings = io.read_embeddings(args.embeddings)
    scores = comparison_scores(embeddings, pairs)
    missing = {i for i in list(pairs.id_a) + list(pairs.id_b) if i not in quality}
    if missing:
        raise MissingIdError(missing)
    qa = np.array([quality[i] for i in pairs.id_a])
    qb = np.array([quality[i] for i in pairs.id_b])
    pq = pair_quality(qa, qb, args.pair_rule)
    g = pairs.genuine
    curve = erc_curve(scores[g], pq[g], scores[~g], args.fmr,
                      grid=reject_grid(args.grid_step, args.grid_max),
                      recalibrate=args.recalibrate, impostor_quality=pq[~g], ties=args.ties)
    io.write_scores(_path(args.out, "scores.csv"), pairs, scores, pq)
    io.write_erc(_path(args.out, "erc.csv"), _path(args.out, "erc.json"), curve)
    _manifest(args, argv, {"quality": args.quality, "pairs": args.pairs,
                           "embeddings": args.embeddings},
              ["scores.csv", "erc.csv", "erc.json"])
    print(f"auc {curve.auc!r}")


def cmd_weighted_verify(args, argv):
    embeddings = io.read_embeddings(args.embeddings)
    quality = io.read_quality(args.quality, args.quality_column)
    templates = io.read_templates(args.templates)
    pairs = io.read_pairs(args.pairs)
    report = template_verification(embeddings, quality, templates, pairs, args.fmr)
    payload = {"fmr_target": report.fmr_target,
               "weighted": {"threshold": report.weighted_threshold,
                            "fnmr": report.weighted_fnmr},
               "baseline": {"threshold": report.baseline_threshold,
                            "fnmr": report.baseline_fnmr}}
    io.write_json(_path(args.out, "weighted_verify.json"), payload)
    _manifest(args, argv, {"embeddings": args.embeddings, "quality": args.quality,
                           "templates": args.templates, "pairs": args.pairs},
              ["weighted_verify.json"])
    print(f"weighted_fnmr {report.weighted_fnmr!r}")
    print(f"baseline_fnmr {report.baseline_fnmr!r}")


def cmd_rerun(args, argv):
    manifest = io.read_json(args.manifest)
    replay = list(manifest["argv"])
    if args.out is not None:
        replay = _replace_out(replay, args.out)
    return main(replay)


def _replace_out(argv, out):
    argv = list(argv)
    for i, tok in enumerate(argv):
        if tok == "--out" and i + 1 < len(argv):
            argv[i + 1] = out
            return argv
        if tok.startswith("--out="):
            argv[i] = f"--out={out}"
            return argv
    return argv + ["--out", out]


def build_parser():
    parser = argparse.ArgumentParser(prog="crfiqa",
                                     description="Certainty-ratio quality assessment toolkit.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset and pair files")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-classes", type=int, default=20)
    p.add_argument("--samples-per-class", type=int, default=50)
    p.add_argument("--input-dim", type=int, default=32)
    p.add_argument("--noise-levels", type=_floats, default=(0.05, 0.2, 0.5, 1.0))
    p.add_argument("--holdout", type=float, default=0.2)
    p.add_argument("--template-size", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train backbone, centers and quality head")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iterations", type=int, default=5000)
    p.add_argument("--lr", type=float, default=0.03)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--warmup", type=int, default=0)
    p.add_argument("--lambda", dest="lam", type=float, default=10.0)
    p.add_argument("--margin", type=float, default=0.5)
    p.add_argument("--scale", type=float, default=64.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--eps", type=float, default=1e-9)
    p.add_argument("--target", choices=("cr", "ccs"), default="cr")
    p.add_argument("--mode", choices=("simultaneous", "on-top"), default="simultaneous")
    p.add_argument("--hidden-dims", type=_ints, default=(128, 128))
    p.add_argument("--embedding-dim", type=int, default=16)
    p.add_argument("--activation", choices=("relu", "tanh"), default="relu")
    p.add_argument("--head-input", choices=("raw", "normalized"), default="raw")
    p.add_argument("--embedding-norm", choices=("batch", "none"), default="batch")
    p.add_argument("--log-every", type=int, default=0,
                   help="emit a progress log line every N iterations")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="predict quality and embeddings for a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("erc", help="error-versus-reject curve of a quality file")
    p.add_argument("--quality", required=True, help="CSV with an id column and a quality column")
    p.add_argument("--quality-column", default="quality_raw")
    p.add_argument("--pairs", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--fmr", type=float, default=1e-3)
    p.add_argument("--grid-step", type=float, default=0.01)
    p.add_argument("--grid-max", type=float, default=0.95)
    p.add_argument("--pair-rule", choices=("min", "mean"), default="min")
    p.add_argument("--ties", choices=("average", "order"), default="average",
                   help="how equal pair qualities are rejected")
    p.add_argument("--recalibrate", action="store_true",
                   help="re-derive the threshold at every rejection ratio")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_erc)

    p = sub.add_parser("weighted-verify", help="template verification with quality weights")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--quality", required=True)
    p.add_argument("--quality-column", default="quality_norm",
                   help="weights must be non-negative")
    p.add_argument("--templates", required=True)
    p.add_argument("--pairs", required=True, help="template-level pair file")
    p.add_argument("--fmr", type=float, default=1e-3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_weighted_verify)

    p = sub.add_parser("rerun", help="replay the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_rerun)
    return parser


def _configure_logging():
    name = os.environ.get("CRFIQA_LOG_LEVEL", "warn").lower()
    if name not in LOG_LEVELS:
        print(f"crfiqa: CRFIQA_LOG_LEVEL must be one of {sorted(LOG_LEVELS)}", file=sys.stderr)
        return False
    logging.basicConfig(level=LOG_LEVELS[name], format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("crfiqa").setLevel(LOG_LEVELS[name])
    return True


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    if not _configure_logging():
        return EXIT_USAGE
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        if args.command != "rerun":
            os.makedirs(args.out, exist_ok=True)
        code = args.func(args, argv)
    except DivergenceError as exc:
        print(f"crfiqa: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (CRFIQAError, LookupError, OSError) as exc:
        print(f"crfiqa: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
