"""Command-line front end.

    styleda datagen             --config run.cfg
    styleda train               --config run.cfg --mode sm
    styleda train-discriminator --config run.cfg
    styleda eval                --config run.cfg
    styleda ablation            --config run.cfg
    styleda sinkhorn-check

Exit codes: 0 success, 1 failed checks, 2 configuration error, 3 missing or
malformed files, 4 non-finite loss.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import checks, config, io, pipeline
from . import discriminator as disc
from .tensor import NonFiniteError

log = logging.getLogger("styleda")

EXIT_OK, EXIT_CHECKS, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3, 4


class UsageError(Exception):
    """A precondition the user can fix by changing the configuration."""


def _out(cfg):
    d = Path(cfg.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _echo(cfg, name="config.txt"):
    config.save(_out(cfg) / name, cfg)


def _weights_path(cfg):
    return Path(cfg.weights or Path(cfg.out) / "model.sdaw")


def _disc_path(cfg):
    return Path(cfg.disc_weights or Path(cfg.out) / "discriminator.sdaw")


def cmd_datagen(cfg):
    ds = pipeline.generate(cfg)
    pipeline.save_dataset(cfg.data_dir, ds)
    _echo(cfg)
    print(f"wrote {len(ds.source_ids)} source / {len(ds.target_ids)} target identities to {cfg.data_dir}")
    return EXIT_OK


def cmd_train(cfg):
    data = pipeline.load_dataset(cfg.data_dir)
    disc_params = None
    if cfg.mode in ("ps", "ps+sm"):
        path = _disc_path(cfg)
        if not path.exists():
            raise UsageError(f"mode {cfg.mode} needs discriminator weights; {path} not found "
                             "(run train-discriminator or set disc_weights)")
        disc_params = io.load_weights(path)
    base = io.load_weights(cfg.baseline_weights) if cfg.baseline_weights else None
    base, final, curves = pipeline.train(data, cfg, disc_params=disc_params, baseline_params=base)
    out = _out(cfg)
    io.save_weights(out / "baseline.sdaw", base)
    io.save_weights(_weights_path(cfg), final)
    io.write_curves(out / "curves.csv", curves)
    _echo(cfg)
    print(f"mode {cfg.mode}: weights {_weights_path(cfg)} ({pipeline.params_hash(final)[:12]})")
    return EXIT_OK


def cmd_train_discriminator(cfg):
    data = pipeline.load_dataset(cfg.data_dir)
    params, history = pipeline.train_discriminator(data, cfg)
    out = _out(cfg)
    io.save_weights(_disc_path(cfg), params)
    s_scores = disc.score(pipeline.DISC_ARCH, params, data.source_images)
    t_scores = disc.score(pipeline.DISC_ARCH, params, data.target_images)
    disc.write_score_table(
        out / "scores.csv",
        [f"s{i}" for i in range(len(s_scores))] + [f"t{i}" for i in range(len(t_scores))],
        ["source"] * len(s_scores) + ["target"] * len(t_scores),
        list(s_scores) + list(t_scores),
    )
    with open(out / "score_histogram.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lo", "hi", "source", "source_weighted", "target"])
        hs = disc.score_histogram(s_scores)
        hw = disc.score_histogram(s_scores, weights=s_scores)
        ht = disc.score_histogram(t_scores)
        for (lo, hi, a), (_, _, b), (_, _, c) in zip(hs, hw, ht):
            w.writerow([repr(lo), repr(hi), repr(a), repr(b), repr(c)])
    io.write_json(out / "discriminator.json", {
        "loss_history": history,
        "source_mean": float(s_scores.mean()),
        "source_weighted_mean": disc.weighted_mean_score(s_scores),
        "target_mean": float(t_scores.mean()),
    })
    _echo(cfg)
    print(f"discriminator loss {history[-1]:.4f}; mean score source {s_scores.mean():.3f}, "
          f"target {t_scores.mean():.3f}")
    return EXIT_OK


def cmd_eval(cfg):
    data = pipeline.load_dataset(cfg.data_dir)
    params = io.load_weights(_weights_path(cfg))
    report = pipeline.evaluate_model(data, params)
    report["weights_sha256"] = pipeline.params_hash(params)
    out = _out(cfg)
    io.write_json(out / "report.json", report)
    io.write_metric_csv(out / "metrics.csv", report["metrics"])
    _echo(cfg)
    for name, value in pipeline.summarize(report).items():
        print(f"{name:16s} {value if value is None else f'{value:.4f}'}")
    return EXIT_OK


def cmd_ablation(cfg):
    data = pipeline.load_dataset(cfg.data_dir)
    rows, reports, base_hash = pipeline.ablation(data, cfg, lf_sweep=cfg.lf_sweep)
    out = _out(cfg)
    columns = ["mode", "lf"] + [c for c in rows[0] if c not in ("mode", "lf")]
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c]) for c in columns])
    io.write_json(out / "ablation.json", {"baseline_sha256": base_hash, "rows": rows, "reports": reports})
    _echo(cfg)
    for r in rows:
        label = r["mode"] if r["lf"] is None else f"{r['mode']} (L_f={r['lf']})"
        print(f"{label:16s} TPR@FPR=0.01 {r['TPR@FPR=0.01']:.4f}  TPIR@FPIR=0.1 {r['TPIR@FPIR=0.1']:.4f}  "
              f"inter-cos {r['inter_cos']:.4f}")
    return EXIT_OK


def cmd_sinkhorn_check(cfg):
    results = checks.sinkhorn_suite(seed=cfg.seed)
    for c in results:
        print(c.line())
    return EXIT_OK if all(c.passed for c in results) else EXIT_CHECKS


COMMANDS = {
    "datagen": cmd_datagen,
    "train": cmd_train,
    "train-discriminator": cmd_train_discriminator,
    "eval": cmd_eval,
    "ablation": cmd_ablation,
    "sinkhorn-check": cmd_sinkhorn_check,
}


def build_parser():
    p = argparse.ArgumentParser(prog="styleda", description=__doc__.split("\n")[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--mode")
    p.add_argument("--lf", type=int)
    p.add_argument("--out")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve(args):
    cfg = config.load(args.config) if args.config else config.RunConfig()
    overrides = {k: getattr(args, k) for k in ("seed", "mode", "lf", "out") if getattr(args, k) is not None}
    return cfg.with_(**overrides) if overrides else cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
    except config.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        return COMMANDS[args.command](cfg)
    except (UsageError, config.ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, io.FormatError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NonFiniteError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
