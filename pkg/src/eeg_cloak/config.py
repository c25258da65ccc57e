"""Run configuration: a strict JSON key-value file with defaults for every stage."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigInvalid


@dataclass
class RunConfig:
    corpus_root: str = "corpus"
    workdir: str = "work"
    seed: int = 0
    threads: int = 1

    split_ratios: list = field(default_factory=lambda: [0.7, 0.2, 0.1])
    image_size: int = 32
    band_edges: list = field(default_factory=lambda: [4.0, 8.0, 13.0, 30.0])
    normalizer_percentiles: list = field(default_factory=lambda: [1.0, 99.0])

    dummy_k: int = 5
    dummy_m: int = 20

    cls_depth: int = 18
    cls_width: int = 64
    cls_epochs: int = 50
    cls_batch: int = 64
    cls_lr: float = 1e-3
    cls_joint: bool = True

    gan_epochs: int = 100
    gan_batch: int = 16
    gan_lr: float = 2e-4
    gan_beta1: float = 0.5
    lambda_cycle: float = 10.0
    lambda_task: float = 1.0
    lambda_sem: float = 1.0
    gate_threshold: float = 1.0
    gate_decay: float = 0.9
    gen_filters: int = 32
    gen_blocks: int = 4
    disc_filters: int = 32
    c_depth: int = 18
    c_width: int = 64
    c_lr: float = 1e-3
    constraints: str = "alc"

    fixture_subjects: int = 10
    fixture_trials_per_condition: int = 6

    def validate(self) -> "RunConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigInvalid(msg)

        for f in fields(self):
            v = getattr(self, f.name)
            want = {"int": int, "float": (int, float), "str": str, "bool": bool, "list": list}[f.type]
            need(isinstance(v, want) and not (f.type in ("int", "float") and isinstance(v, bool)),
                 f"{f.name}: expected {f.type}, got {type(v).__name__}")
        need(self.threads >= 1, "threads must be >= 1")
        need(len(self.split_ratios) == 3 and all(r >= 0 for r in self.split_ratios) and sum(self.split_ratios) > 0,
             "split_ratios must be three non-negative numbers")
        need(self.image_size >= 8, "image_size must be >= 8")
        need(len(self.band_edges) == 4 and all(a < b for a, b in zip(self.band_edges, self.band_edges[1:])),
             "band_edges must be 4 increasing frequencies")
        need(self.band_edges[0] >= 0 and self.band_edges[3] <= 128, "band_edges must lie in [0, 128] Hz")
        p = self.normalizer_percentiles
        need(len(p) == 2 and 0 <= p[0] < p[1] <= 100, "normalizer_percentiles must be [lo, hi] within 0..100")
        need(self.dummy_k >= 2 and self.dummy_m >= 1, "dummy_k must be >= 2 and dummy_m >= 1")
        need(self.cls_depth in (18, 34, 50) and self.c_depth in (18, 34, 50), "depths must be 18, 34 or 50")
        for name in ("cls_width", "cls_epochs", "cls_batch", "gan_epochs", "gan_batch", "gen_filters",
                     "gen_blocks", "disc_filters", "c_width", "fixture_subjects", "fixture_trials_per_condition"):
            need(getattr(self, name) >= 1, f"{name} must be >= 1")
        for name in ("cls_lr", "gan_lr", "c_lr"):
            need(getattr(self, name) > 0, f"{name} must be > 0")
        for name in ("lambda_cycle", "lambda_task", "lambda_sem", "gate_threshold"):
            need(getattr(self, name) >= 0, f"{name} must be >= 0")
        need(0 <= self.gan_beta1 < 1 and 0 <= self.gate_decay < 1, "gan_beta1 and gate_decay must be in [0, 1)")
        need(self.constraints in ("none", "alc", "sti", "both"), "constraints must be none|alc|sti|both")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **kw) -> "RunConfig":
        d = self.to_dict()
        d.update({k: v for k, v in kw.items() if v is not None})
        return config_from_dict(d)


def config_from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigInvalid("config must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigInvalid(f"unknown config key(s): {', '.join(unknown)}")
    return RunConfig(**d).validate()


def load_config(path) -> RunConfig:
    """Read a JSON config; an empty file yields all defaults."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from None
    if not text.strip():
        return RunConfig().validate()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(d)
