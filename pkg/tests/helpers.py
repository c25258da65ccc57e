"""Shared builders for tests."""

import numpy as np

from eeg_cloak.fixtures import separable_images
from eeg_cloak.topomap import EEGImage


def separable_eeg_images(n_per_class, size=32, seed=0):
    """Separable 3-class set wrapped as EEGImages, class stored in ``stimulus``."""
    pix, labels = separable_images(n_per_class, size, seed)
    return [EEGImage(p, f"co2c{int(y):07d}", 0, int(y), name=f"sep{seed}_{i:04d}")
            for i, (p, y) in enumerate(zip(pix, labels))]


def random_images(n, size=32, seed=0, provenance="real"):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        sid = f"dummy:g{i % 10}:0:{i}" if provenance == "dummy" else f"co2{'ac'[i % 2]}{i % 4:07d}"
        out.append(EEGImage(rng.uniform(size=(3, size, size)), sid, i % 2, i % 5, provenance, name=f"r{i:04d}"))
    return out


TINY_CONFIG = {
    "dummy_k": 2, "dummy_m": 2,
    "cls_width": 8, "cls_epochs": 2, "cls_batch": 32,
    "gan_epochs": 1, "gen_filters": 8, "disc_filters": 8, "gen_blocks": 1, "c_width": 8,
    "fixture_subjects": 4, "fixture_trials_per_condition": 3,
}


def run_pipeline(dispatch, workdir, config: dict, regimes=("none", "alc", "sti", "both")):
    """ingest -> split -> preprocess -> dummies -> 3 classifiers -> disguisers -> ablate, via the CLI."""
    import json

    workdir.mkdir(parents=True, exist_ok=True)
    cfg = workdir / "config.json"
    cfg.write_text(json.dumps({**config, "workdir": str(workdir / "work"), "corpus_root": str(workdir / "corpus")}))
    common = ["--config", str(cfg), "--quiet"]
    steps = [["ingest", "--synthetic-fixtures", str(config["fixture_subjects"])], ["split"], ["preprocess"],
             ["dummies"]]
    steps += [["train-cls", "--task", t] for t in ("identity", "alcoholism", "stimulus")]
    steps += [["train-gan", "--constraints", r] for r in regimes]
    steps += [["ablate"]]
    for step in steps:
        code = dispatch(step[:1] + common + step[1:])
        assert code == 0, f"{step} exited {code}"
    return workdir / "work"
