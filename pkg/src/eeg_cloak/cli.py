"""``eeg-cloak`` command line: one subcommand per pipeline stage.

Every stage reads and writes under a work directory (``--workdir``, else
$EEG_CLOAK_WORKDIR, else the config's ``workdir``) and embeds the producing
RunConfig in its outputs. Exit codes: 0 ok, 2 unknown command or bad usage,
3 invalid config, 4 stage failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .errors import ConfigInvalid, EEGCloakError, MissingRegime

log = logging.getLogger("eeg_cloak")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3, 4
TASKS = ("identity", "alcoholism", "stimulus")
REGIMES = ("none", "alc", "sti", "both")


class Work:
    """Fixed layout of the work directory."""

    def __init__(self, root):
        self.root = Path(root)

    manifest = property(lambda self: self.root / "manifest.json")
    split = property(lambda self: self.root / "split.json")
    features = property(lambda self: self.root / "features.npy")
    features_meta = property(lambda self: self.root / "features.json")
    normalizer = property(lambda self: self.root / "normalizer.json")
    dummies = property(lambda self: self.root / "dummies")
    reports = property(lambda self: self.root / "reports")

    def images(self, split: str) -> Path:
        return self.root / "images" / split

    def model(self, task: str) -> Path:
        return self.root / "models" / f"{task}.ckpt"

    def gan(self, regime: str) -> Path:
        return self.root / "gan" / f"{regime}.ckpt"

    def disguised(self, regime: str) -> Path:
        return self.root / "disguised" / regime


def _dump_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _write_run_config(directory, cfg: RunConfig) -> None:
    _dump_json(Path(directory) / "run_config.json", {"config": cfg.to_dict()})


def _write_history_csv(path, rows: list[dict]) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


# stages

def cmd_ingest(cfg: RunConfig, args) -> None:
    from .dataset import build_manifest
    from .fixtures import SyntheticCorpus

    root = Path(args.root or cfg.corpus_root)
    if args.synthetic_fixtures:
        log.info("writing synthetic corpus (%d subjects) to %s", args.synthetic_fixtures, root)
        SyntheticCorpus(args.synthetic_fixtures, cfg.fixture_trials_per_condition, cfg.seed).write(root)
    manifest = build_manifest(root, threads=cfg.threads)
    out = Path(args.out) if args.out else Work(cfg.workdir).manifest
    out.parent.mkdir(parents=True, exist_ok=True)
    manifest.save(out, extra={"config": cfg.to_dict()})
    log.info("manifest: %d trials, %d subjects -> %s", len(manifest.trials), len(manifest.subjects), out)


def cmd_split(cfg: RunConfig, args) -> None:
    from .dataset import Manifest, split_within_subject

    work = Work(cfg.workdir)
    manifest = Manifest.load(args.manifest or work.manifest)
    seed = cfg.seed if args.seed is None else args.seed
    split = split_within_subject(manifest, tuple(cfg.split_ratios), seed)
    out = Path(args.out) if args.out else work.split
    split.save(out, extra={"config": cfg.to_dict()})
    log.info("split (seed %d) -> %s", seed, out)


def _load_features(work: Work):
    from .spectral import BandFeatures

    powers = np.load(work.features)
    meta = json.loads(work.features_meta.read_text())
    return [BandFeatures(p, t["subject_id"], t["alcoholism"], t["stimulus"], t["trial_id"])
            for p, t in zip(powers, meta["trials"])], meta


def _features_of(args):
    from .dataset import load_trial
    from .spectral import trial_band_features

    path, rec, bands = args
    return trial_band_features(load_trial(path), bands, stimulus=rec.stimulus, trial_id=rec.trial_id)


def cmd_preprocess(cfg: RunConfig, args) -> None:
    from concurrent.futures import ProcessPoolExecutor

    from .dataset import SPLITS, Manifest, SplitAssignment
    from .spectral import dump_features_csv, make_bands
    from .topomap import assemble_images, default_electrode_table, fit_normalizer, save_images

    work = Work(cfg.workdir)
    manifest = Manifest.load(args.manifest or work.manifest)
    split = SplitAssignment.load(args.split or work.split)
    bands = make_bands(cfg.band_edges)
    jobs = [(manifest.trial_path(rec), rec, bands) for rec in manifest.trials]
    if cfg.threads > 1:
        with ProcessPoolExecutor(cfg.threads) as pool:
            feats = list(pool.map(_features_of, jobs, chunksize=8))
    else:
        feats = [_features_of(j) for j in jobs]

    np.save(work.features, np.stack([f.powers for f in feats]))
    _dump_json(work.features_meta, {
        "bands": [[b.name, b.lo_hz, b.hi_hz] for b in bands],
        "trials": [{"trial_id": f.trial_id, "subject_id": f.subject_id, "alcoholism": f.alcoholism,
                    "stimulus": f.stimulus, "split": split.assignment[f.trial_id]} for f in feats],
        "config": cfg.to_dict(),
    })
    if args.dump_features:
        dump_features_csv(feats, default_electrode_table().names, args.dump_features)

    train = [f for f in feats if split.assignment[f.trial_id] == "train"]
    norm = fit_normalizer(train, tuple(cfg.normalizer_percentiles))
    norm.save(work.normalizer, extra={"config": cfg.to_dict()})
    table = default_electrode_table()
    for name in SPLITS:
        part = [f for f in feats if split.assignment[f.trial_id] == name]
        d = work.images(name)
        save_images(assemble_images(part, table, norm, cfg.image_size, cfg.image_size), d)
        _write_run_config(d, cfg)
        log.info("%s: %d images -> %s", name, len(part), d)


def cmd_dummies(cfg: RunConfig, args) -> None:
    from .dummyid import make_dummy_set
    from .topomap import Normalizer, default_electrode_table

    work = Work(cfg.workdir)
    feats, meta = _load_features(work)
    train = [f for f, t in zip(feats, meta["trials"]) if t["split"] == "train"]
    norm = Normalizer.load(work.normalizer)
    k = args.k or cfg.dummy_k
    m = args.m or cfg.dummy_m
    dummy = make_dummy_set(train, default_electrode_table(), norm, k, m, cfg.seed, cfg.image_size, cfg.image_size)
    dummy.save(work.dummies, extra={"config": cfg.to_dict()})
    log.info("dummy set: %d images (k=%d, m=%d) -> %s", len(dummy.images), k, m, work.dummies)


def _subject_index(work: Work) -> dict[str, int]:
    from .dataset import Manifest

    return Manifest.load(work.manifest).subject_index()


def cmd_train_cls(cfg: RunConfig, args) -> None:
    from .classifier import NetConfig, TrainOptions, build_net, set_deterministic, train_classifier
    from .dummyid import DummySet
    from .errors import JointIdentityUnsupported
    from .topomap import load_images

    set_deterministic(cfg.threads)
    work = Work(cfg.workdir)
    sidx = _subject_index(work)
    joint = cfg.cls_joint and args.task != "identity" if args.joint is None else args.joint
    if joint and args.task == "identity":
        raise JointIdentityUnsupported("joint training with dummy images is only defined for alcoholism/stimulus")
    config = NetConfig.for_task(args.task, args.depth or cfg.cls_depth, n_subjects=len(sidx),
                                width=cfg.cls_width, image_size=cfg.image_size)
    net = build_net(config, cfg.seed)
    dummy = DummySet.load(work.dummies) if joint else None
    opts = TrainOptions(cfg.cls_epochs, cfg.cls_batch, cfg.cls_lr, joint, cfg.seed)
    # checkpoint selection on the test split; validation stays untouched for the disguise comparison
    model = train_classifier(net, load_images(work.images("train")), load_images(work.images("test")),
                             opts, dummy=dummy, subject_index=sidx)
    out = Path(args.out) if args.out else work.model(args.task)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out, extra={"run_config": cfg.to_dict()})
    _write_history_csv(out.with_suffix(".history.csv"), model.history)
    log.info("%s classifier: best held-out acc %.4f -> %s", args.task, model.best_val_acc, out)


def cmd_predict(cfg: RunConfig, args) -> None:
    from .classifier import TrainedModel, predict_batch, set_deterministic
    from .topomap import load_images

    set_deterministic(cfg.threads)
    model = TrainedModel.load(args.model)
    task = args.task or model.config.tasks[0]
    images = load_images(args.images)
    probs, preds = predict_batch(model, images, task)
    rows = [{"name": im.name, "subject_id": im.subject_id, "prediction": int(p),
             **{f"p{j}": f"{q:.6f}" for j, q in enumerate(pr)}} for im, p, pr in zip(images, preds, probs)]
    out = Path(args.out) if args.out else Work(cfg.workdir).reports / f"predict_{task}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_history_csv(out, rows)
    print(f"{task}: {len(rows)} predictions -> {out}")


def _disguiser_options(cfg: RunConfig):
    from .disguiser import DisguiserOptions

    return DisguiserOptions(
        epochs=cfg.gan_epochs, batch=cfg.gan_batch, lr=cfg.gan_lr, beta1=cfg.gan_beta1,
        lambda_cycle=cfg.lambda_cycle, lambda_task=cfg.lambda_task, lambda_sem=cfg.lambda_sem,
        gate_threshold=cfg.gate_threshold, gate_decay=cfg.gate_decay, ngf=cfg.gen_filters,
        ndf=cfg.disc_filters, n_blocks=cfg.gen_blocks, c_depth=cfg.c_depth, c_width=cfg.c_width,
        c_lr=cfg.c_lr, seed=cfg.seed,
    )


def cmd_train_gan(cfg: RunConfig, args) -> None:
    from .classifier import set_deterministic
    from .disguiser import constraint_set_from_name, train_disguiser
    from .dummyid import DummySet
    from .topomap import load_images

    set_deterministic(cfg.threads)
    work = Work(cfg.workdir)
    regime = args.constraints or cfg.constraints
    model = train_disguiser(
        load_images(work.images("train")), DummySet.load(work.dummies), constraint_set_from_name(regime),
        _disguiser_options(cfg),
        log=lambda row: log.info("gan[%s] epoch %d: adv_G %.4f cycle %.4f task %.4f sem %.4f gate %d", regime,
                                 row["epoch"], row["adv_G"], row["cycle"], row["task"], row["semantic"],
                                 row["gate"]),
    )
    out = Path(args.out) if args.out else work.gan(regime)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out, extra={"run_config": cfg.to_dict(), "regime": regime})
    _write_history_csv(out.with_suffix(".losses.csv"), model.history)
    log.info("disguiser [%s] -> %s (gate opened at step %s)", regime, out, model.gate_opened_at)


def _disguise_dir(model_path, src, dst, cfg: RunConfig) -> list:
    from .disguiser import DisguiserModel, disguise_batch
    from .topomap import load_images, save_images

    model = DisguiserModel.load(model_path)
    out = disguise_batch(model, load_images(src))
    save_images(out, dst)
    _write_run_config(dst, cfg)
    return out


def cmd_disguise(cfg: RunConfig, args) -> None:
    from .classifier import set_deterministic

    set_deterministic(cfg.threads)
    out = _disguise_dir(args.model, args.inp, args.out, cfg)
    log.info("disguised %d images -> %s", len(out), args.out)


def _evaluate_all(work: Work, images, split: str, cfg: RunConfig) -> dict:
    from .classifier import TrainedModel
    from .evalreport import evaluate_model

    reports = {}
    for task in TASKS:
        path = work.model(task)
        if not path.exists():
            raise EEGCloakError(f"missing {task} classifier {path}; run train-cls --task {task}")
        reports[task] = evaluate_model(TrainedModel.load(path), images, task, split, cfg.to_dict())
    return reports


def compare_regime(work: Work, cfg: RunConfig, regime: str, split: str = "validation"):
    """Evaluation classifiers on the original split vs. its disguised version."""
    from .evalreport import bar_chart_svg, comparison_row
    from .topomap import load_images

    gan = work.gan(regime)
    if not gan.exists():
        raise MissingRegime(f"no disguiser for regime {regime!r} at {gan}; run train-gan --constraints {regime}")
    original = load_images(work.images(split))
    disguised = _disguise_dir(gan, work.images(split), work.disguised(regime), cfg)
    rep_o = _evaluate_all(work, original, split, cfg)
    rep_d = _evaluate_all(work, disguised, split, cfg)
    work.reports.mkdir(parents=True, exist_ok=True)
    for tag, reps in (("original", rep_o), (f"disguised_{regime}", rep_d)):
        for task, r in reps.items():
            r.save(work.reports / f"{tag}_{task}.json")
    row_o, row_d = comparison_row(rep_o), comparison_row(rep_d)
    (work.reports / f"compare_{regime}.svg").write_text(
        bar_chart_svg(row_o, row_d, f"original vs disguised ({regime})"))
    _dump_json(work.reports / f"compare_{regime}.json",
               {"regime": regime, "split": split, "original": row_o, "disguised": row_d, "config": cfg.to_dict()})
    return row_o, row_d


def cmd_eval(cfg: RunConfig, args) -> None:
    from .classifier import TrainedModel, set_deterministic
    from .evalreport import evaluate_model
    from .topomap import load_images

    set_deterministic(cfg.threads)
    work = Work(cfg.workdir)
    if args.regime:
        row_o, row_d = compare_regime(work, cfg, args.regime, args.split)
        for k in row_o:
            print(f"{k:>10}  original {_pct(row_o[k]):>7}  disguised {_pct(row_d[k]):>7}")
        return
    if not args.model:
        raise ConfigInvalid("eval needs --model and --images, or --regime")
    images_dir = Path(args.images) if args.images else work.images(args.split)
    report = evaluate_model(TrainedModel.load(args.model), load_images(images_dir), args.task,
                            split=args.split, config=cfg.to_dict())
    out = Path(args.out) if args.out else work.reports / f"eval_{report.task}_{images_dir.name}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    report.save(out)
    extra = ""
    if report.task == "alcoholism":
        extra = f"  sens {_pct(report.sensitivity)}  spec {_pct(report.specificity)}"
    print(f"{report.task}: acc {_pct(report.accuracy)}{extra}  (n={report.n}) -> {out}")


def cmd_ablate(cfg: RunConfig, args) -> None:
    from .classifier import set_deterministic
    from .evalreport import ablation_report

    set_deterministic(cfg.threads)
    work = Work(cfg.workdir)
    missing = [r for r in REGIMES if not work.gan(r).exists()]
    if missing:
        raise MissingRegime(f"missing disguisers for {missing}; run train-gan for each")
    original, regimes = None, {}
    for r in REGIMES:
        original, regimes[r] = compare_regime(work, cfg, r, args.split)
    table = ablation_report(original, regimes, cfg.to_dict())
    table.save(work.reports)
    print(table.to_text(), end="")


def cmd_export_png(cfg: RunConfig, args) -> None:
    from .topomap import export_png, load_images

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    images = load_images(args.inp)
    for i, img in enumerate(images):
        export_png(img, out / ((img.name or f"img{i:06d}").replace("/", "__") + ".png"), args.scale)
    log.info("exported %d PNGs -> %s", len(images), out)


def _pct(v):
    return "n/a" if v is None else f"{100 * v:.2f}"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (strict keys; empty file = defaults)")
    common.add_argument("--workdir", help="work directory (default: $EEG_CLOAK_WORKDIR or config workdir)")
    common.add_argument("--threads", type=int, help="worker threads; 1 = deterministic mode")
    common.add_argument("--quiet", action="store_true", help="only print warnings and results")

    p = argparse.ArgumentParser(prog="eeg-cloak", description="Disguise subject identity in EEG topographic images.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", required=True)

    s = sub.add_parser("ingest", parents=[common], help="parse a corpus into a manifest")
    s.add_argument("--root", help="corpus directory (default: config corpus_root)")
    s.add_argument("--out", help="manifest path (default: <workdir>/manifest.json)")
    s.add_argument("--synthetic-fixtures", type=int, metavar="N",
                   help="first write a synthetic corpus of N subjects into --root")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("split", parents=[common], help="within-subject train/test/validation split")
    s.add_argument("--manifest")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("preprocess", parents=[common], help="band powers, normalizer and EEG images")
    s.add_argument("--manifest")
    s.add_argument("--split")
    s.add_argument("--dump-features", metavar="CSV", help="also write per-electrode band powers as CSV")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("dummies", parents=[common], help="grand-averaged dummy-identity images")
    s.add_argument("--k", type=int, help="subjects per average (default: config dummy_k)")
    s.add_argument("--m", type=int, help="exemplars per group (default: config dummy_m)")
    s.set_defaults(func=cmd_dummies)

    s = sub.add_parser("train-cls", parents=[common], help="train an evaluation classifier")
    s.add_argument("--task", choices=TASKS, required=True)
    s.add_argument("--depth", type=int, choices=(18, 34, 50))
    g = s.add_mutually_exclusive_group()
    g.add_argument("--joint", dest="joint", action="store_true", default=None, help="add dummy images to training")
    g.add_argument("--no-joint", dest="joint", action="store_false")
    s.add_argument("--out")
    s.set_defaults(func=cmd_train_cls)

    s = sub.add_parser("predict", parents=[common], help="per-image predictions of a classifier as CSV")
    s.add_argument("--model", required=True)
    s.add_argument("--images", required=True)
    s.add_argument("--task", choices=TASKS)
    s.add_argument("--out")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("train-gan", parents=[common], help="train a disguiser")
    s.add_argument("--constraints", choices=REGIMES, help="semantic constraint set (default: config)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_train_gan)

    s = sub.add_parser("disguise", parents=[common], help="disguise a directory of real images")
    s.add_argument("--model", required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_disguise)

    s = sub.add_parser("eval", parents=[common], help="evaluate a classifier, or compare original vs disguised")
    s.add_argument("--model")
    s.add_argument("--images")
    s.add_argument("--task", choices=TASKS)
    s.add_argument("--split", default="validation", choices=("train", "test", "validation"))
    s.add_argument("--regime", choices=REGIMES, help="compare original vs disguised with this disguiser")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", parents=[common], help="four-regime ablation table")
    s.add_argument("--split", default="validation", choices=("train", "test", "validation"))
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("export-png", parents=[common], help="write EEG images as 8-bit PNGs")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--scale", type=int, default=1)
    s.set_defaults(func=cmd_export_png)
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig().validate()
    workdir = args.workdir or os.environ.get("EEG_CLOAK_WORKDIR")
    return cfg.replace(workdir=workdir, threads=args.threads)


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        args.func(cfg, args)
    except ConfigInvalid as exc:
        print(f"eeg-cloak: config invalid: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EEGCloakError, OSError, ValueError, KeyError) as exc:
        print(f"eeg-cloak {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


def main() -> None:
    sys.exit(dispatch())
