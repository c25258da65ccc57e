"""Dummy identities: grand-averaged band powers per (alcoholism, stimulus) group."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InsufficientSubjects
from .spectral import BandFeatures
from .topomap import DEFAULT_SIZE, DUMMY_PREFIX, EEGImage, assemble_images, load_images, save_images

N_ALCOHOLISM = 2
N_STIMULUS = 5
N_GROUPS = N_ALCOHOLISM * N_STIMULUS


def group_key(alcoholism: int, stimulus: int) -> int:
    if alcoholism not in range(N_ALCOHOLISM) or stimulus not in range(N_STIMULUS):
        raise ValueError(f"invalid classes ({alcoholism}, {stimulus})")
    return alcoholism * N_STIMULUS + stimulus


def group_labels(group: int) -> tuple[int, int]:
    return divmod(group, N_STIMULUS)


def dummy_subject_id(group: int, seed: int, n: int) -> str:
    return f"{DUMMY_PREFIX}g{group}:{seed}:{n}"


def parse_dummy_subject_id(sid: str) -> tuple[int, int, int]:
    g, seed, n = sid[len(DUMMY_PREFIX):].split(":")
    return int(g[1:]), int(seed), int(n)


@dataclass
class DummySet:
    images: list[EEGImage]
    contributors: list[list[str]]
    k: int
    m: int
    seed: int
    features: list[BandFeatures] = field(default_factory=list, repr=False)

    def groups(self) -> list[int]:
        return [group_key(img.alcoholism, img.stimulus) for img in self.images]

    def metadata(self) -> dict:
        return {
            "k": self.k,
            "m": self.m,
            "seed": self.seed,
            "exemplars": {img.subject_id: subs for img, subs in zip(self.images, self.contributors)},
        }

    def save(self, directory, extra: dict | None = None) -> None:
        save_images(self.images, directory)
        meta = self.metadata()
        if extra:
            meta.update(extra)
        (Path(directory) / "dummies.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory) -> "DummySet":
        meta = json.loads((Path(directory) / "dummies.json").read_text())
        images = load_images(directory)
        return cls(images, [meta["exemplars"][img.subject_id] for img in images], meta["k"], meta["m"], meta["seed"])


def subject_means(features) -> dict[int, dict[str, np.ndarray]]:
    """group -> subject -> mean feature matrix over that subject's trials in the group."""
    acc: dict[int, dict[str, list[np.ndarray]]] = defaultdict(lambda: defaultdict(list))
    for f in features:
        acc[group_key(f.alcoholism, f.stimulus)][f.subject_id].append(f.powers)
    return {g: {s: np.mean(v, axis=0) for s, v in subs.items()} for g, subs in acc.items()}


def grand_average(per_subject: list[np.ndarray]) -> np.ndarray:
    return np.mean(np.stack(per_subject), axis=0)


def dummy_features(train_features, k: int = 5, m: int = 20, seed: int = 0):
    """Averaged BandFeatures for every group: ``m`` exemplars of ``k`` seeded subjects each.

    Returns (features, contributors). Each subject is first reduced to its own
    mean so that heavily recorded subjects do not dominate the average.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    means = subject_means(train_features)
    rng = np.random.default_rng(seed)
    feats, contributors = [], []
    for g in range(N_GROUPS):
        subs = sorted(means.get(g, {}))
        if len(subs) < k:
            raise InsufficientSubjects(g, k, len(subs))
        alc, stim = group_labels(g)
        for n in range(m):
            chosen = sorted(subs[i] for i in rng.choice(len(subs), size=k, replace=False))
            avg = grand_average([means[g][s] for s in chosen])
            feats.append(BandFeatures(avg, dummy_subject_id(g, seed, n), alc, stim,
                                      trial_id=f"dummy_g{g}_{n:03d}"))
            contributors.append(chosen)
    return feats, contributors


def make_dummy_set(train_features, table, norm, k: int = 5, m: int = 20, seed: int = 0,
                   h: int = DEFAULT_SIZE, w: int = DEFAULT_SIZE) -> DummySet:
    """Dummy-identity images from training-split features, using the fitted normalizer."""
    feats, contributors = dummy_features(train_features, k, m, seed)
    images = assemble_images(feats, table, norm, h, w, provenance="dummy")
    return DummySet(images, contributors, k, m, seed, feats)
