"""End-to-end steps shared by the command line and the acceptance suite.

Every step is a pure function of its inputs and the run seed, so two runs
with the same configuration write the same bytes.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import datagen, evaluation, io, network
from . import discriminator as disc
from .tensor import Rng

log = logging.getLogger(__name__)

DISC_ARCH = disc.DiscArch()
ADAPT_MODES = ("ps", "sm", "ps+sm", "mmd")


@dataclass
class Data:
    source_images: np.ndarray
    source_labels: np.ndarray
    target_images: np.ndarray
    target_subjects: np.ndarray
    protocols: datagen.Protocols
    manifest: dict


def from_dataset(ds):
    return Data(ds.source_images, ds.source_labels, ds.target_images, ds.target_subjects, ds.protocols,
                ds.manifest())


def generate(cfg):
    return datagen.generate(cfg.seed, n_source=cfg.n_source, n_target=cfg.n_target,
                            source_per_id=cfg.source_per_id, target_per_id=cfg.target_per_id, gap=cfg.gap)


def save_dataset(directory, ds):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    io.write_json(d / "manifest.json", ds.manifest())
    io.save_tensor(d / "source_images.bin", ds.source_images)
    io.save_tensor(d / "target_images.bin", ds.target_images)
    np.savetxt(d / "source_labels.csv", ds.source_labels, fmt="%d")
    np.savetxt(d / "target_subjects.csv", ds.target_subjects, fmt="%d")
    io.save_protocols(d / "protocols", ds.protocols)


def load_dataset(directory):
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    shape = tuple(manifest["image_shape"])
    xs = io.load_tensor(d / "source_images.bin").reshape((-1, *shape))
    xt = io.load_tensor(d / "target_images.bin").reshape((-1, *shape))
    ys = np.loadtxt(d / "source_labels.csv", dtype=np.int64, ndmin=1)
    yt = np.loadtxt(d / "target_subjects.csv", dtype=np.int64, ndmin=1)
    if len(ys) != len(xs) or len(yt) != len(xt):
        raise io.FormatError("label count does not match image count")
    return Data(xs, ys, xt, yt, io.load_protocols(d / "protocols"), manifest)


def arch_for(data):
    n_classes = int(data.source_labels.max()) + 1
    return network.Arch(n_classes=n_classes)


def params_hash(params):
    h = hashlib.sha256()
    for k in sorted(params):
        h.update(k.encode())
        h.update(np.ascontiguousarray(params[k], dtype="<f8").tobytes())
    return h.hexdigest()


def train_baseline(data, cfg):
    tc = cfg.train_config(mode="baseline", adapt_epochs=0)
    base, _, curves = network.train(arch_for(data), _f64(data.source_images), data.source_labels, tc, seed=cfg.seed)
    return base, curves


def train_discriminator(data, cfg):
    rng = Rng(cfg.seed).child("disc")
    params = disc.init_params(DISC_ARCH, rng.child("init"))
    dc = disc.DiscTrainConfig(lr=cfg.disc_lr, epochs=cfg.disc_epochs, batch_size=cfg.disc_batch_size)
    return disc.train_discriminator(DISC_ARCH, _f64(data.source_images), _f64(data.target_images), params, dc, rng)


def source_scores(data, disc_params):
    return disc.score(DISC_ARCH, disc_params, _f64(data.source_images))


def adapt(data, cfg, baseline_params, mode, lf=None, disc_params=None):
    """Adaptation phase forked from ``baseline_params``; returns (params, curves)."""
    if mode in ("ps", "ps+sm") and disc_params is None:
        raise ValueError(f"mode {mode} needs discriminator weights")
    tc = cfg.train_config(mode=mode, lf=cfg.lf if lf is None else lf)
    xt = _f64(data.target_images) if mode in ("sm", "ps+sm", "mmd") else None
    if disc_params is None:
        scores = None
    elif cfg.disc_joint and mode in ("ps", "ps+sm"):
        dc = disc.DiscTrainConfig(lr=cfg.disc_lr, batch_size=cfg.disc_batch_size)
        scores = disc.JointScorer(DISC_ARCH, disc_params, dc)
        xt = _f64(data.target_images)
    else:
        scores = source_scores(data, disc_params)
    _, adapted, curves = network.train(
        arch_for(data), _f64(data.source_images), data.source_labels, tc, seed=cfg.seed,
        xt=xt, source_scores=scores, baseline_params=baseline_params,
    )
    return adapted, curves


def train(data, cfg, disc_params=None, baseline_params=None):
    """Both phases in the configured mode; returns (baseline, final, curves)."""
    curves = []
    if baseline_params is None:
        baseline_params, curves = train_baseline(data, cfg)
    if cfg.mode == "baseline" or cfg.adapt_epochs == 0:
        return baseline_params, baseline_params, curves
    adapted, more = adapt(data, cfg, baseline_params, cfg.mode, disc_params=disc_params)
    return baseline_params, adapted, curves + more


def evaluate_model(data, params):
    arch = arch_for(data)
    emb = network.embed(arch, params, _f64(data.target_images))
    rows = evaluation.evaluate(data.protocols, emb)
    stats = network.embed_stats(emb, data.target_subjects)
    return {"metrics": rows, "embed_stats": {k: (list(v) if v else None) for k, v in stats.items()}}


SUMMARY_COLUMNS = (
    ("TPR@FPR=0.0001", "TPR@FPR", 1e-4),
    ("TPR@FPR=0.001", "TPR@FPR", 1e-3),
    ("TPR@FPR=0.01", "TPR@FPR", 1e-2),
    ("TPR@FPR=0.1", "TPR@FPR", 1e-1),
    ("kfold_accuracy", "kfold_accuracy", None),
    ("rank1", "rank", 1),
    ("rank10", "rank", 10),
    ("TPIR@FPIR=0.01", "TPIR@FPIR", 1e-2),
    ("TPIR@FPIR=0.1", "TPIR@FPIR", 1e-1),
)


def summarize(report):
    row = {name: evaluation.metric(report["metrics"], proto, level) for name, proto, level in SUMMARY_COLUMNS}
    for key in ("intra_cos", "inter_cos", "norm"):
        v = report["embed_stats"].get(key)
        row[key] = None if v is None else v[0]
    return row


def ablation(data, cfg, lf_sweep=False, on_step=None):
    """Baseline, discriminator, then every adaptation mode from one checkpoint.

    Returns ``(rows, reports, baseline_hash)``; rows are dicts with ``mode``,
    ``lf`` and the summary columns.
    """
    base, _ = train_baseline(data, cfg)
    base_hash = params_hash(base)
    disc_params, _ = train_discriminator(data, cfg)
    runs = [("baseline", None)] + [(m, cfg.lf) for m in ADAPT_MODES]
    if lf_sweep:
        runs += [("sm", lf) for lf in range(1, 5) if lf != cfg.lf]
    rows, reports = [], {}
    for mode, lf in runs:
        params = base if mode == "baseline" else adapt(data, cfg, base, mode, lf, disc_params)[0]
        report = evaluate_model(data, params)
        key = mode if lf is None or lf == cfg.lf else f"{mode}_lf{lf}"
        reports[key] = report
        rows.append({"mode": mode, "lf": lf if mode in ("sm", "ps+sm") else None, **summarize(report)})
        if on_step:
            on_step(key, params)
    return rows, reports, base_hash


def style_eps_terms(curves):
    """Last recorded ε per style term, for diagnostics."""
    out = {}
    for c in curves:
        if c.term.startswith("eps_"):
            out[c.term] = c.value
    return out


def _f64(x):
    return np.asarray(x, dtype=np.float64)

