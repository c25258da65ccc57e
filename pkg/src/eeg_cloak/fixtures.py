"""Synthetic corpus in the UCI file convention, for tests and CI.

Every channel is a sum of integer-Hz sinusoids in the theta, alpha and beta
bands plus white noise. Log-amplitudes are the sum of
  * a smooth scalp pattern shared by everyone,
  * an alcoholism effect (raised frontal beta, lowered posterior alpha),
  * a stimulus effect (a band/region modulation per condition),
  * a fixed per-subject spatial watermark (the "identity"),
  * per-trial jitter.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataset import N_SAMPLES, SAMPLE_RATE, Trial, write_trial
from .spectral import BANDS
from .topomap import default_electrode_table

CONDITIONS = ("S1 obj", "S2 match", "S2 nomatch", "S2 match err", "S2 nomatch err")


def subject_ids(n_subjects: int) -> list[str]:
    """Alternating alcoholic / control ids in the corpus naming scheme."""
    out = []
    for i in range(n_subjects):
        cls = "a" if i % 2 == 0 else "c"
        out.append(f"co2{cls}{364 + i:07d}")
    return out


def _spatial_bumps(coords, centres, widths):
    d = coords @ np.asarray(centres).T
    return np.exp((d - 1) / np.asarray(widths) ** 2)


class SyntheticCorpus:
    def __init__(self, n_subjects: int = 6, trials_per_condition: int = 8, seed: int = 0,
                 watermark: float = 0.6, jitter: float = 0.12, noise_uv: float = 0.5,
                 alcoholism_effect: float = 0.6, stimulus_effect: float = 0.35):
        self.table = default_electrode_table()
        self.n_subjects = n_subjects
        self.trials_per_condition = trials_per_condition
        self.seed = seed
        self.jitter = jitter
        self.noise_uv = noise_uv
        rng = np.random.default_rng(seed)
        xyz = self.table.coords
        n_ch = len(self.table)

        front = _spatial_bumps(xyz, [[0.7, 0, 0.7]], [0.8])[:, 0]
        back = _spatial_bumps(xyz, [[-0.7, 0, 0.7]], [0.8])[:, 0]
        self.base = np.log(np.column_stack([6.0 + 2 * front, 8.0 + 4 * back, 4.0 + 1.0 * np.ones(n_ch)]))

        self.alc = np.zeros((n_ch, 3))
        self.alc[:, 2] = alcoholism_effect * front
        self.alc[:, 1] = -0.5 * alcoholism_effect * back

        regions = [[0.7, 0.5, 0.5], [0.7, -0.5, 0.5], [-0.7, 0.5, 0.5], [-0.7, -0.5, 0.5], [0.0, 0.0, 1.0]]
        bump = _spatial_bumps(xyz, regions, [0.7] * 5)
        self.stim = np.zeros((len(CONDITIONS), n_ch, 3))
        for s in range(len(CONDITIONS)):
            self.stim[s, :, s % 2] = stimulus_effect * bump[:, s]

        self.subjects = subject_ids(n_subjects)
        # watermark: a few sharp random bumps per subject, all bands
        self.marks = {}
        for sid in self.subjects:
            centres = rng.normal(size=(4, 3))
            centres /= np.linalg.norm(centres, axis=1, keepdims=True)
            centres[:, 2] = np.abs(centres[:, 2])
            centres /= np.linalg.norm(centres, axis=1, keepdims=True)
            signs = rng.choice([-1.0, 1.0], size=(4, 3))
            self.marks[sid] = watermark * _spatial_bumps(xyz, centres, [0.45] * 4) @ signs

    def log_amplitudes(self, sid: str, stimulus: int, rng) -> np.ndarray:
        alc = 1 if sid[3] == "a" else 0
        jitter = rng.normal(scale=self.jitter, size=self.base.shape)
        return self.base + alc * self.alc + self.stim[stimulus] + self.marks[sid] + jitter

    def make_trial(self, sid: str, stimulus: int, trial_index: int) -> Trial:
        rng = np.random.default_rng([self.seed, self.subjects.index(sid), stimulus, trial_index])
        amp = np.exp(self.log_amplitudes(sid, stimulus, rng))
        t = np.arange(N_SAMPLES) / SAMPLE_RATE
        n_ch = len(self.table)
        sig = rng.normal(scale=self.noise_uv, size=(n_ch, N_SAMPLES))
        for b, band in enumerate(BANDS):
            freqs = np.arange(int(band.lo_hz), int(np.ceil(band.hi_hz)))
            for _ in range(2):
                f = rng.choice(freqs, size=n_ch)
                ph = rng.uniform(0, 2 * np.pi, size=n_ch)
                sig += (amp[:, b] / np.sqrt(2))[:, None] * np.cos(2 * np.pi * f[:, None] * t + ph[:, None])
        return Trial(
            subject_id=sid,
            alcoholism=1 if sid[3] == "a" else 0,
            condition=CONDITIONS[stimulus],
            samples=np.round(sig, 3),
            trial_index=trial_index,
            channel_names=self.table.names,
        )

    def trials(self):
        for sid in self.subjects:
            idx = 0
            for s in range(len(CONDITIONS)):
                for _ in range(self.trials_per_condition):
                    yield self.make_trial(sid, s, idx)
                    idx += 1

    def write(self, root, compress: bool = True) -> list[Path]:
        """One directory per subject, files named <subject>.rd.<nnn>[.gz]."""
        root = Path(root)
        paths = []
        for trial in self.trials():
            d = root / trial.subject_id
            d.mkdir(parents=True, exist_ok=True)
            p = d / f"{trial.subject_id}.rd.{trial.trial_index:03d}{'.gz' if compress else ''}"
            write_trial(trial, p, compress=compress)
            paths.append(p)
        return paths


def write_synthetic_corpus(root, n_subjects: int = 6, trials_per_condition: int = 8, seed: int = 0,
                           **kw) -> list[Path]:
    return SyntheticCorpus(n_subjects, trials_per_condition, seed, **kw).write(root)


def separable_images(n_per_class: int = 50, size: int = 32, seed: int = 0):
    """3-class image set whose class is the brightest RGB channel.

    Returns (pixels (n, 3, size, size) float32, labels (n,)).
    """
    rng = np.random.default_rng(seed)
    n = 3 * n_per_class
    labels = np.repeat(np.arange(3), n_per_class)
    pix = rng.uniform(0.0, 0.5, size=(n, 3, size, size)).astype(np.float32)
    pix[np.arange(n), labels] += 0.4
    perm = rng.permutation(n)
    return np.clip(pix[perm], 0, 1), labels[perm]
