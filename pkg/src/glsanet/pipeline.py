"""End-to-end experiment: base ConNet -> saliency targets -> GLSA -> three variants."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import classifier as C
from .glsa import glsa_train, init_params as init_glsa
from .grid import build_glsa_dataset
from .io.config import RunConfig
from .io.synthetic import class_dataset


def train_base(cfg: RunConfig, images, labels, log=None) -> C.DualBranchModel:
    """The single-branch network; doubles as the pretrained ConNet for saliency."""
    model = C.build_model("single", cfg.num_classes, cfg.seed, cfg.backbone_config(), cfg.grid_spec())
    C.train_classifier(model, images, labels, cfg.epochs, cfg.lr, cfg.momentum, cfg.batch_size, cfg.seed, log=log,
                       cosine=cfg.lr_schedule == "cosine")
    return model


def glsa_dataset(cfg: RunConfig, base: C.DualBranchModel, images):
    return build_glsa_dataset(C.score_fn(base), images, cfg.N, cfg.tau, xo_mode=cfg.xo_mode,
                              target_norm=cfg.target_norm)


def train_glsa(cfg: RunConfig, pairs, log=None):
    gcfg = cfg.glsa_config()
    params = init_glsa(gcfg, cfg.seed)
    params, history = glsa_train(params, gcfg, pairs, cfg.glsa_epochs, cfg.glsa_lr, cfg.momentum,
                                 cfg.batch_size, cfg.seed, log=log)
    return params, history


def train_variant(cfg: RunConfig, variant: str, images, labels, glsa_params=None, log=None):
    model = C.build_model(variant, cfg.num_classes, cfg.seed, cfg.backbone_config(), cfg.grid_spec(),
                          cfg.glsa_config(), glsa_params, cfg.local_aggregation)
    C.train_classifier(model, images, labels, cfg.epochs, cfg.lr, cfg.momentum, cfg.batch_size, cfg.seed, log=log,
                       cosine=cfg.lr_schedule == "cosine")
    return model


@dataclass
class ExperimentResult:
    seed: int
    reports: dict = field(default_factory=dict)
    glsa_history: list = field(default_factory=list)
    target_rate: float = 0.0


def run_experiment(cfg: RunConfig, log=None, data=None) -> ExperimentResult:
    """Train and evaluate single / DBN / DBN-GLSA on one seed of synthetic data."""
    if data is None:
        xtr, ytr = class_dataset(cfg.class_counts, cfg.image_size, cfg.seed)
        xte, yte = class_dataset(cfg.test_counts, cfg.image_size, cfg.seed + 1_000_003)
    else:
        xtr, ytr, xte, yte = data
    res = ExperimentResult(cfg.seed)
    base = train_base(cfg, xtr, ytr, log)
    res.reports["single"] = C.evaluate(base, xte, yte)
    pairs = glsa_dataset(cfg, base, xtr)
    res.target_rate = float(np.mean([t.values.mean() for _, t in pairs]))
    glsa_params, res.glsa_history = train_glsa(cfg, pairs, log)
    for variant in ("dbn", "dbn-glsa"):
        model = train_variant(cfg, variant, xtr, ytr, glsa_params if variant == "dbn-glsa" else None, log)
        res.reports[variant] = C.evaluate(model, xte, yte)
    return res
