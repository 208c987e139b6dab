"""Command-line entry point: ``glsanet <command> [--config c] [--seed s] [--out dir]``."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import classifier as C
from . import pipeline as P
from .errors import ConfigError, GlsaError
from .glsa import init_params as init_glsa
from .grid import ObjectivenessTargets
from .io.checkpoint import load_checkpoint, save_checkpoint
from .io.config import load_config
from .io.dataset import list_dataset, load_dataset
from .io.ppm import atomic_write, read_ppm, write_pgm
from .io.report import format_table, metric_record, dumps_record
from .io.synthetic import write_class_dataset, write_planted_dataset
from .params import ParamSet
from .saliency import extract
from .tensor import Tensor


def _log(msg: str):
    print(msg, file=sys.stderr, flush=True)


def _path(args, name: str) -> str:
    return os.path.join(args.out, name)


def _train_dir(args) -> str:
    return args.data or _path(args, os.path.join("data", "train"))


def _load_into(model: C.DualBranchModel, params: ParamSet, path: str) -> C.DualBranchModel:
    for name, t in model.params.items():
        if name not in params:
            raise GlsaError(f"{path}: missing tensor {name!r}")
        if params[name].shape != t.shape:
            raise GlsaError(f"{path}: tensor {name!r} has shape {params[name].shape}, expected {t.shape}")
        t.data[...] = params[name].data
    return model


def _glsa_params(args, cfg) -> ParamSet:
    path = _path(args, "glsa.ckpt")
    if not os.path.exists(path):
        raise GlsaError(f"{path} not found; run train-glsa first")
    return load_checkpoint(path)


def _load_variant(args, cfg, variant: str) -> C.DualBranchModel:
    path = _path(args, "base.ckpt" if variant == "single" and not os.path.exists(_path(args, "single.ckpt"))
                 else f"{variant}.ckpt")
    params = load_checkpoint(path)
    glsa = params.subset("glsa.") if variant == "dbn-glsa" else None
    model = C.build_model(variant, cfg.num_classes, cfg.seed, cfg.backbone_config(), cfg.grid_spec(),
                          cfg.glsa_config(), glsa, cfg.local_aggregation)
    return _load_into(model, params, path)


def cmd_gen_data(args, cfg):
    root = _path(args, "data")
    write_class_dataset(os.path.join(root, "train"), cfg.class_counts, cfg.image_size, cfg.seed)
    write_class_dataset(os.path.join(root, "test"), cfg.test_counts, cfg.image_size, cfg.seed + 1_000_003)
    if args.planted:
        write_planted_dataset(root, args.planted, cfg.image_size, cfg.N, cfg.seed)
    _log(f"wrote synthetic data under {root}")


def cmd_train_base(args, cfg):
    _, x, y = load_dataset(_train_dir(args))
    model = P.train_base(cfg, x, y, log=_log)
    save_checkpoint(model.params, _path(args, "base.ckpt"))


def cmd_build_glsa_data(args, cfg):
    manifest, x, _ = load_dataset(_train_dir(args))
    base = _load_variant_path(cfg, _path(args, "base.ckpt"))
    pairs = P.glsa_dataset(cfg, base, x)
    table = ParamSet()
    for path, (_, t) in zip(manifest.files, pairs):
        rel = os.path.relpath(path, manifest.root).replace(os.sep, "/")
        table[f"targets/{rel}"] = Tensor(t.values.astype(np.float32))
        table[f"scores/{rel}"] = Tensor(t.source_scores.astype(np.float32))
    save_checkpoint(table, _path(args, "glsa_targets.ckpt"))
    rate = float(np.mean([t.values.mean() for _, t in pairs]))
    _log(f"{len(pairs)} target vectors, positive rate {rate:.3f}")


def _load_variant_path(cfg, path) -> C.DualBranchModel:
    model = C.build_model("single", cfg.num_classes, cfg.seed, cfg.backbone_config(), cfg.grid_spec())
    return _load_into(model, load_checkpoint(path), path)


def cmd_train_glsa(args, cfg):
    root = _train_dir(args)
    table = load_checkpoint(_path(args, "glsa_targets.ckpt"))
    pairs = []
    for name in table.names():
        if name.startswith("targets/"):
            rel = name[len("targets/"):]
            pairs.append((read_ppm(os.path.join(root, rel)),
                          ObjectivenessTargets(table[name].data, table["scores/" + rel].data)))
    if not pairs:
        raise ConfigError("no GLSA targets found; run build-glsa-data first")
    params, history = P.train_glsa(cfg, pairs, log=_log)
    save_checkpoint(params, _path(args, "glsa.ckpt"))
    atomic_write(_path(args, "glsa_history.txt"), "".join(f"{h:.6f}\n" for h in history).encode())


def cmd_train_classifier(args, cfg):
    _, x, y = load_dataset(_train_dir(args))
    glsa = _glsa_params(args, cfg) if args.variant == "dbn-glsa" else None
    model = P.train_variant(cfg, args.variant, x, y, glsa, log=_log)
    save_checkpoint(model.params, _path(args, f"{args.variant}.ckpt"))


def cmd_extract_saliency(args, cfg):
    """One ``<stem>.saliency.pgm`` per image; dataset inputs keep their class subdirectories."""
    model = _load_variant_path(cfg, args.checkpoint or _path(args, "base.ckpt"))
    out_dir = _path(args, "saliency")
    jobs = []
    for p in args.images or [_path(args, os.path.join("data", "test"))]:
        if os.path.isdir(p):
            m = list_dataset(p)
            jobs.extend((f, os.path.join(out_dir, os.path.relpath(os.path.dirname(f), m.root))) for f in m.files)
        else:
            jobs.append((p, out_dir))
    for src, dst in jobs:
        smap = extract(C.score_fn(model), read_ppm(src), xo_mode=cfg.xo_mode)
        stem = os.path.splitext(os.path.basename(src))[0]
        write_pgm(smap.values, os.path.join(dst, f"{stem}.saliency.pgm"))
    _log(f"wrote {len(jobs)} saliency maps under {out_dir}")


def cmd_eval(args, cfg):
    _, x, y = load_dataset(args.data or _path(args, os.path.join("data", "test")))
    variants = args.variant_list or [v for v in C.VARIANTS
                                     if os.path.exists(_path(args, f"{v}.ckpt"))
                                     or (v == "single" and os.path.exists(_path(args, "base.ckpt")))]
    if not variants:
        raise GlsaError(f"no model checkpoints under {args.out}")
    records = []
    for v in variants:
        report = C.evaluate(_load_variant(args, cfg, v), x, y)
        records.append(metric_record(report, v, cfg.seed, cfg.hash()))
    atomic_write(_path(args, "metrics.jsonl"), "".join(dumps_record(r) for r in records).encode("utf-8"))
    print(format_table(records))


def cmd_flops(args, cfg):
    variant = args.variant or "dbn-glsa"
    gcfg = cfg.glsa_config()
    glsa = init_glsa(gcfg, cfg.seed) if variant == "dbn-glsa" else None
    model = C.build_model(variant, cfg.num_classes, cfg.seed, cfg.backbone_config(), cfg.grid_spec(), gcfg,
                          glsa, cfg.local_aggregation)
    counter = C.measure_mul_add(model, np.zeros(cfg.input_shape, np.float32))
    closed = C.closed_form_mul_add(model, cfg.image_size, cfg.image_size)
    rec = {"model": variant, "mul_add": counter.total, "closed_form": closed["total"],
           "breakdown": counter.as_dict(), "closed_form_breakdown": closed, "config_hash": cfg.hash()}
    atomic_write(_path(args, "flops.json"), (json.dumps(rec, sort_keys=True) + "\n").encode("utf-8"))
    print(f"{variant}: {counter.total} MUL-ADD ({counter.total / 1e9:.4f} G), closed form {closed['total']}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-base": cmd_train_base,
    "build-glsa-data": cmd_build_glsa_data,
    "train-glsa": cmd_train_glsa,
    "train-classifier": cmd_train_classifier,
    "extract-saliency": cmd_extract_saliency,
    "eval": cmd_eval,
    "flops": cmd_flops,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glsanet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", default="runs", help="output directory (default: runs)")
        if name in ("train-base", "build-glsa-data", "train-glsa", "train-classifier", "eval"):
            p.add_argument("--data", help="dataset root (default: <out>/data/train, eval: <out>/data/test)")
        if name == "gen-data":
            p.add_argument("--planted", type=int, default=0, help="also write N planted-patch images")
        if name == "train-classifier":
            p.add_argument("--variant", choices=C.VARIANTS, default="dbn-glsa")
        if name == "flops":
            p.add_argument("--variant", choices=C.VARIANTS)
        if name == "eval":
            p.add_argument("--variant", dest="variant_list", action="append", choices=C.VARIANTS)
        if name == "extract-saliency":
            p.add_argument("--checkpoint", help="single-branch checkpoint (default: <out>/base.ckpt)")
            p.add_argument("images", nargs="*", help="PPM files or dataset directories")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed)
    except ConfigError as e:
        print(f"glsanet: invalid config: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"glsanet: {e}", file=sys.stderr)
        return 1
    try:
        os.makedirs(args.out, exist_ok=True)
        COMMANDS[args.command](args, cfg)
    except ConfigError as e:
        print(f"glsanet: invalid config: {e}", file=sys.stderr)
        return 3
    except (GlsaError, OSError) as e:
        print(f"glsanet: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
