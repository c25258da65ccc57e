"""Ingest of the UCI alcoholism EEG corpus: trial parsing, manifest, splits.

Trial files follow the corpus convention::

    # co2a0000364.rd
    # 120 trials, 64 chans, 416 samples 368 post_stim samples
    # 3.906000 msecs uV
    # S1 obj , trial 0
    # FP1 chan 0
    0 FP1 0 -8.921
    ...

The subject file id carries the alcoholism class at its fourth character
('a' alcoholic, 'c' control). Files may be gzip-compressed.
"""

from __future__ import annotations

import gzip
import json
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import (
    EmptyCorpus,
    MalformedTrial,
    MissingConditionHeader,
    TooFewTrials,
    UnknownSensor,
    VocabSizeMismatch,
)
from .topomap import default_electrode_table

N_CHANNELS = 64
N_SAMPLES = 256
SAMPLE_RATE = 256
N_STIMULI = 5
ALCOHOLIC = 1
CONTROL = 0
SPLITS = ("train", "test", "validation")
DEFAULT_RATIOS = (0.7, 0.2, 0.1)
TRIAL_GLOB = "*.rd*"

_CONDITION_RE = re.compile(r"^#\s*(?P<cond>.+?)\s*,\s*trial\s+(?P<idx>\d+)\s*$")
_CHAN_RE = re.compile(r"^#\s*\S+\s+chan\s+\d+\s*$")


@dataclass(eq=False)
class Trial:
    """One 64-channel x 256-sample recording.

    ``samples`` rows follow the electrode table order. ``condition`` is the
    verbatim stimulus string; its class index is resolved by a Manifest.
    """

    subject_id: str
    alcoholism: int
    condition: str
    samples: np.ndarray
    trial_index: int
    sample_rate: int = SAMPLE_RATE
    channel_names: tuple[str, ...] = field(default_factory=lambda: default_electrode_table().names)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.shape != (N_CHANNELS, N_SAMPLES):
            raise MalformedTrial(f"expected {N_CHANNELS}x{N_SAMPLES} samples, got {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise MalformedTrial("non-finite voltage")
        if self.sample_rate != SAMPLE_RATE:
            raise MalformedTrial(f"sample rate must be {SAMPLE_RATE}")
        if self.alcoholism not in (CONTROL, ALCOHOLIC):
            raise MalformedTrial(f"bad alcoholism class {self.alcoholism}")

    def __eq__(self, other):
        if not isinstance(other, Trial):
            return NotImplemented
        return (
            self.subject_id == other.subject_id
            and self.alcoholism == other.alcoholism
            and self.condition == other.condition
            and self.trial_index == other.trial_index
            and self.sample_rate == other.sample_rate
            and tuple(self.channel_names) == tuple(other.channel_names)
            and np.array_equal(self.samples, other.samples)
        )


def alcoholism_from_subject(subject_id: str) -> int:
    if len(subject_id) < 4 or subject_id[3] not in "ac":
        raise MalformedTrial(f"cannot read class character from subject id {subject_id!r}")
    return ALCOHOLIC if subject_id[3] == "a" else CONTROL


def parse_trial(raw_text: str) -> Trial:
    """Parse the text of one trial file."""
    names = default_electrode_table().names
    row_of = {n.upper(): i for i, n in enumerate(names)}
    samples = np.full((N_CHANNELS, N_SAMPLES), np.nan)
    subject_id = None
    condition = None
    trial_index = None
    seen = set()

    for lineno, line in enumerate(raw_text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _CONDITION_RE.match(line)
            if m:
                condition = m.group("cond").rstrip(", ")
                trial_index = int(m.group("idx"))
            elif subject_id is None and not _CHAN_RE.match(line):
                subject_id = line[1:].strip().split()[0]
                if subject_id.endswith(".rd"):
                    subject_id = subject_id[:-3]
            continue
        parts = line.split()
        if len(parts) != 4:
            raise MalformedTrial(f"line {lineno}: expected 4 fields, got {len(parts)}")
        _, sensor, idx, volts = parts
        row = row_of.get(sensor.upper())
        if row is None:
            raise UnknownSensor(f"line {lineno}: sensor {sensor!r} not in electrode table")
        try:
            col = int(idx)
            value = float(volts)
        except ValueError:
            raise MalformedTrial(f"line {lineno}: unparseable values {line!r}") from None
        if not 0 <= col < N_SAMPLES:
            raise MalformedTrial(f"line {lineno}: sample index {col} out of range")
        if (row, col) in seen:
            raise MalformedTrial(f"line {lineno}: duplicate sample {sensor}[{col}]")
        seen.add((row, col))
        samples[row, col] = value

    if condition is None:
        raise MissingConditionHeader("no '<condition> , trial <n>' header line")
    if subject_id is None:
        raise MalformedTrial("no subject id header line")
    channels = {r for r, _ in seen}
    if len(channels) != N_CHANNELS:
        raise MalformedTrial(f"expected {N_CHANNELS} channels, found {len(channels)}")
    if len(seen) != N_CHANNELS * N_SAMPLES:
        raise MalformedTrial(f"expected {N_SAMPLES} samples per channel, found {len(seen)} total")

    return Trial(
        subject_id=subject_id,
        alcoholism=alcoholism_from_subject(subject_id),
        condition=condition,
        samples=samples,
        trial_index=trial_index,
        channel_names=names,
    )


def format_trial(trial: Trial) -> str:
    """Serialize a Trial in the corpus text convention (exact round trip)."""
    out = [
        f"# {trial.subject_id}.rd",
        f"# 1 trials, {N_CHANNELS} chans, {N_SAMPLES} samples",
        f"# {1000.0 / trial.sample_rate:.6f} msecs uV",
        f"# {trial.condition} , trial {trial.trial_index}",
    ]
    for ch, name in enumerate(trial.channel_names):
        out.append(f"# {name} chan {ch}")
        out.extend(f"{trial.trial_index} {name} {i} {v!r}" for i, v in enumerate(trial.samples[ch].tolist()))
    return "\n".join(out) + "\n"


def read_text(path) -> str:
    data = Path(path).read_bytes()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data.decode("utf-8", errors="replace")


def load_trial(path) -> Trial:
    try:
        return parse_trial(read_text(path))
    except (MalformedTrial, UnknownSensor, MissingConditionHeader) as exc:
        raise type(exc)(f"{path}: {exc}") from None


def write_trial(trial: Trial, path, compress: bool = False) -> None:
    text = format_trial(trial).encode()
    Path(path).write_bytes(gzip.compress(text, mtime=0) if compress else text)


@dataclass(frozen=True)
class TrialRecord:
    trial_id: str
    path: str
    subject_id: str
    alcoholism: int
    condition: str
    stimulus: int
    trial_index: int


@dataclass
class Manifest:
    trials: list[TrialRecord]
    subjects: list[tuple[str, int]]
    stimulus_vocab: list[str]
    root: str = "."

    def __post_init__(self):
        ids = [s for s, _ in self.subjects]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate subject ids in manifest")
        if len(self.stimulus_vocab) != N_STIMULI:
            raise VocabSizeMismatch(f"stimulus vocabulary has {len(self.stimulus_vocab)} entries, need {N_STIMULI}")

    @property
    def subject_ids(self) -> list[str]:
        return [s for s, _ in self.subjects]

    def subject_index(self) -> dict[str, int]:
        return {s: i for i, (s, _) in enumerate(self.subjects)}

    def trial_path(self, rec: TrialRecord) -> Path:
        return Path(self.root) / rec.path

    def to_dict(self) -> dict:
        return {
            "root": self.root,
            "stimulus_vocab": list(self.stimulus_vocab),
            "subjects": [{"subject_id": s, "alcoholism": a} for s, a in self.subjects],
            "trials": [rec.__dict__ for rec in self.trials],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Manifest":
        return cls(
            trials=[TrialRecord(**t) for t in d["trials"]],
            subjects=[(s["subject_id"], s["alcoholism"]) for s in d["subjects"]],
            stimulus_vocab=list(d["stimulus_vocab"]),
            root=d.get("root", "."),
        )

    def save(self, path, extra: dict | None = None) -> None:
        d = self.to_dict()
        if extra:
            d.update(extra)
        Path(path).write_text(json.dumps(d, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "Manifest":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _header_of(path: Path) -> tuple[str, str, int]:
    t = load_trial(path)
    return t.subject_id, t.condition, t.trial_index


def build_manifest(root, threads: int = 1, pattern: str = TRIAL_GLOB) -> Manifest:
    """Enumerate and validate every trial file under ``root``."""
    root = Path(root)
    files = sorted(p for p in root.rglob(pattern) if p.is_file() and not p.name.startswith("."))
    if not files:
        raise EmptyCorpus(f"no trial files matching {pattern!r} under {root}")
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            headers = list(pool.map(_header_of, files, chunksize=16))
    else:
        headers = [_header_of(p) for p in files]

    vocab = sorted({cond for _, cond, _ in headers})
    if len(vocab) != N_STIMULI:
        raise VocabSizeMismatch(f"found {len(vocab)} distinct conditions {vocab}, need {N_STIMULI}")
    stim = {c: i for i, c in enumerate(vocab)}

    trials = []
    subjects = {}
    for p, (sid, cond, tidx) in zip(files, headers):
        rel = p.relative_to(root).as_posix()
        alc = alcoholism_from_subject(sid)
        subjects[sid] = alc
        trials.append(TrialRecord(rel, rel, sid, alc, cond, stim[cond], tidx))
    trials.sort(key=lambda r: r.trial_id)
    return Manifest(
        trials=trials,
        subjects=sorted(subjects.items()),
        stimulus_vocab=vocab,
        root=str(root),
    )


def largest_remainder(n: int, ratios) -> list[int]:
    """Apportion ``n`` items by ``ratios`` with the largest-remainder rule.

    Ties on the fractional part go to the earlier ratio, so (0.7, 0.2, 0.1)
    on 3 items gives 2/1/0.
    """
    fr = [Fraction(str(r)) for r in ratios]
    total = sum(fr)
    quotas = [n * r / total for r in fr]
    counts = [int(q) for q in quotas]
    order = sorted(range(len(fr)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


@dataclass
class SplitAssignment:
    assignment: dict[str, str]
    seed: int
    ratios: tuple[float, ...] = DEFAULT_RATIOS

    def ids(self, split: str) -> list[str]:
        return sorted(t for t, s in self.assignment.items() if s == split)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "ratios": list(self.ratios),
            "assignment": dict(sorted(self.assignment.items())),
        }

    def save(self, path, extra: dict | None = None) -> None:
        d = self.to_dict()
        if extra:
            d.update(extra)
        Path(path).write_text(json.dumps(d, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "SplitAssignment":
        d = json.loads(Path(path).read_text())
        return cls(d["assignment"], d["seed"], tuple(d["ratios"]))


def split_within_subject(manifest: Manifest, ratios=DEFAULT_RATIOS, seed: int = 0) -> SplitAssignment:
    """Seeded per-subject shuffle, then a largest-remainder partition."""
    by_subject: dict[str, list[str]] = {s: [] for s in manifest.subject_ids}
    for rec in manifest.trials:
        by_subject[rec.subject_id].append(rec.trial_id)

    rng = np.random.default_rng(seed)
    assignment = {}
    for sid in sorted(by_subject):
        ids = sorted(by_subject[sid])
        if len(ids) < 3:
            raise TooFewTrials(f"subject {sid} has {len(ids)} trials, need at least 3")
        ids = [ids[i] for i in rng.permutation(len(ids))]
        counts = largest_remainder(len(ids), ratios)
        start = 0
        for name, c in zip(SPLITS, counts):
            for tid in ids[start:start + c]:
                assignment[tid] = name
            start += c
    return SplitAssignment(assignment, seed, tuple(ratios))
