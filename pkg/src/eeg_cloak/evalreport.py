"""Confusion-matrix metrics, original-vs-disguised comparisons and the ablation table.

For the alcoholism task "alcoholic" (class 1) is the positive class.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyMatrix, LabelOutOfRange, LengthMismatch, MissingRegime

POSITIVE = 1

REGIMES = ("none", "alc", "sti", "both")
REGIME_LABELS = {"none": "Baseline", "alc": "+ Alc.", "sti": "+ Sti.", "both": "+ Alc. & Sti."}
COLUMNS = ("id_acc", "alc_sens", "alc_spec", "sti_acc")
COLUMN_LABELS = {"id_acc": "ID Acc.", "alc_sens": "Alcoholism Sens.", "alc_spec": "Alcoholism Spec.",
                 "sti_acc": "Stimulus Acc."}

# Published reference values (percent), shown next to measured numbers, never asserted.
REFERENCE = {
    "original": {"id_acc": 97.46, "alc_sens": 91.29, "alc_spec": 95.44, "sti_acc": 61.66},
    "none": {"id_acc": 0.48, "alc_sens": 65.17, "alc_spec": 35.41, "sti_acc": 37.79},
    "alc": {"id_acc": 9.19, "alc_sens": 72.79, "alc_spec": 91.56, "sti_acc": 43.35},
    "sti": {"id_acc": 21.19, "alc_sens": 78.91, "alc_spec": 62.38, "sti_acc": 52.61},
    "both": {"id_acc": 48.97, "alc_sens": 93.47, "alc_spec": 64.59, "sti_acc": 50.41},
}


@dataclass
class ConfusionMatrix:
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ValueError("confusion counts must be square")
        if np.any(self.counts < 0):
            raise ValueError("confusion counts must be non-negative")

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def _binary(self):
        if self.k != 2:
            raise ValueError("TP/FP/TN/FN are defined for 2x2 matrices only")

    @property
    def tp(self) -> int:
        self._binary()
        return int(self.counts[POSITIVE, POSITIVE])

    @property
    def fn(self) -> int:
        self._binary()
        return int(self.counts[POSITIVE, 1 - POSITIVE])

    @property
    def fp(self) -> int:
        self._binary()
        return int(self.counts[1 - POSITIVE, POSITIVE])

    @property
    def tn(self) -> int:
        self._binary()
        return int(self.counts[1 - POSITIVE, 1 - POSITIVE])

    def accuracy(self) -> float:
        if self.total == 0:
            raise EmptyMatrix("accuracy of an empty confusion matrix")
        return float(np.trace(self.counts)) / self.total

    @classmethod
    def from_binary(cls, tp: int, fn: int, tn: int, fp: int) -> "ConfusionMatrix":
        m = np.zeros((2, 2), dtype=np.int64)
        m[POSITIVE, POSITIVE], m[POSITIVE, 1 - POSITIVE] = tp, fn
        m[1 - POSITIVE, 1 - POSITIVE], m[1 - POSITIVE, POSITIVE] = tn, fp
        return cls(m)


def confusion(preds, truth, k: int) -> ConfusionMatrix:
    """counts[i][j] = number of samples with truth i predicted as j."""
    preds = np.asarray(preds, dtype=np.int64).ravel()
    truth = np.asarray(truth, dtype=np.int64).ravel()
    if len(preds) != len(truth):
        raise LengthMismatch(f"{len(preds)} predictions for {len(truth)} labels")
    for name, arr in (("prediction", preds), ("label", truth)):
        if len(arr) and (arr.min() < 0 or arr.max() >= k):
            raise LabelOutOfRange(f"{name} outside 0..{k - 1}")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (truth, preds), 1)
    return ConfusionMatrix(counts)


@dataclass(frozen=True)
class BinaryMetrics:
    accuracy: float
    sensitivity: float | None
    specificity: float | None


def binary_metrics(cm: ConfusionMatrix) -> BinaryMetrics:
    """Accuracy, sensitivity TP/(TP+FN) and specificity TN/(TN+FP).

    Sensitivity or specificity is None when its denominator is zero.
    """
    if cm.total == 0:
        raise EmptyMatrix("no samples")
    tp, fn, tn, fp = cm.tp, cm.fn, cm.tn, cm.fp
    return BinaryMetrics(
        accuracy=(tp + tn) / cm.total,
        sensitivity=tp / (tp + fn) if tp + fn else None,
        specificity=tn / (tn + fp) if tn + fp else None,
    )


def model_checksum(net) -> str:
    h = hashlib.sha256()
    for name, t in sorted(net.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


@dataclass
class MetricsReport:
    task: str
    accuracy: float
    n: int
    confusion: list[list[int]]
    predictions: list[int]
    truth: list[int]
    sensitivity: float | None = None
    specificity: float | None = None
    split: str = ""
    provenance: str = ""
    model_checksum: str = ""
    config: dict = field(default_factory=dict)

    @classmethod
    def from_predictions(cls, task: str, preds, truth, k: int, **kw) -> "MetricsReport":
        cm = confusion(preds, truth, k)
        sens = spec = None
        if task == "alcoholism":
            bm = binary_metrics(cm)
            acc, sens, spec = bm.accuracy, bm.sensitivity, bm.specificity
        else:
            acc = cm.accuracy()
        return cls(task, acc, cm.total, cm.counts.tolist(), [int(p) for p in preds], [int(t) for t in truth],
                   sens, spec, **kw)

    def recompute(self) -> "MetricsReport":
        """Rebuild the metrics from the stored predictions."""
        kw = {k: getattr(self, k) for k in ("split", "provenance", "model_checksum", "config")}
        return MetricsReport.from_predictions(self.task, self.predictions, self.truth, len(self.confusion), **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "MetricsReport":
        return cls(**json.loads(Path(path).read_text()))


def evaluate_model(model, images, task: str | None = None, split: str = "", config: dict | None = None,
                   subject_index: dict[str, int] | None = None) -> MetricsReport:
    from .classifier import image_labels, predict_batch

    task = task or model.config.tasks[0]
    k = dict(model.config.heads)[task]
    images = list(images)
    _, preds = predict_batch(model, images, task)
    truth = image_labels(images, task, subject_index or model.subject_index).numpy()
    provenance = ",".join(sorted({im.provenance for im in images}))
    return MetricsReport.from_predictions(task, preds, truth, k, split=split, provenance=provenance,
                                          model_checksum=model_checksum(model.net), config=config or {})


def comparison_row(reports: dict[str, MetricsReport]) -> dict[str, float | None]:
    """Table-row metrics (fractions) from per-task reports keyed by task."""
    alc = reports["alcoholism"]
    return {
        "id_acc": reports["identity"].accuracy,
        "alc_sens": alc.sensitivity,
        "alc_spec": alc.specificity,
        "sti_acc": reports["stimulus"].accuracy,
        "alc_acc": alc.accuracy,
    }


@dataclass
class AblationTable:
    original: dict[str, float | None]
    regimes: dict[str, dict[str, float | None]]
    config: dict = field(default_factory=dict)

    def alcoholism_retention(self, regime: str) -> float:
        return self.regimes[regime]["alc_acc"] / self.original["alc_acc"]

    def identity_ratio(self, regime: str) -> float:
        return self.regimes[regime]["id_acc"] / self.original["id_acc"]

    def rows(self):
        yield "original", "Original EEG", self.original
        for r in REGIMES:
            yield r, REGIME_LABELS[r], self.regimes[r]

    def to_dict(self) -> dict:
        return {
            "columns": list(COLUMNS),
            "original": self.original,
            "regimes": {r: self.regimes[r] for r in REGIMES},
            "retention": {r: {"alcoholism": self.alcoholism_retention(r), "identity": self.identity_ratio(r)}
                          for r in REGIMES},
            "reference_percent": REFERENCE,
            "config": self.config,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", *COLUMNS, *(f"ref_{c}" for c in COLUMNS)])
        for key, label, vals in self.rows():
            w.writerow([label, *(_fmt(vals[c]) for c in COLUMNS), *(REFERENCE[key][c] for c in COLUMNS)])
        return buf.getvalue()

    def to_text(self) -> str:
        """Aligned table, measured percent with the published value in brackets."""
        width = 22
        head = f"{'':<16}" + "".join(f"{COLUMN_LABELS[c]:>{width}}" for c in COLUMNS)
        lines = ["(a) Original EEG", head]
        for key, label, vals in self.rows():
            cells = "".join(f"{_pct(vals[c]) + ' [' + format(REFERENCE[key][c], '.2f') + ']':>{width}}"
                            for c in COLUMNS)
            lines.append(f"{label:<16}{cells}")
            if key == "original":
                lines += ["", "(b) Disguised EEG with different constraints", head]
        lines.append("")
        lines.append("values in %, published reference in brackets")
        return "\n".join(lines) + "\n"

    def save(self, directory, stem: str = "ablation") -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{stem}.json").write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")
        (d / f"{stem}.csv").write_text(self.to_csv())
        (d / f"{stem}.txt").write_text(self.to_text())


def _fmt(v):
    return "" if v is None else repr(float(v))


def _pct(v):
    return "n/a" if v is None else f"{100 * v:.2f}"


def ablation_report(original: dict[str, float | None], regimes: dict[str, dict], config: dict | None = None
                    ) -> AblationTable:
    """Table of the four constraint regimes plus the original-EEG reference row."""
    missing = [r for r in REGIMES if r not in regimes]
    if missing:
        raise MissingRegime(f"missing disguiser regime(s): {missing}")
    return AblationTable(dict(original), {r: dict(regimes[r]) for r in REGIMES}, config or {})


def bar_chart_svg(original: dict, disguised: dict, title: str = "original vs disguised") -> str:
    """Grouped bars (original, disguised) for the four table metrics."""
    w, h, left, bottom, top = 560, 300, 50, 40, 30
    plot_h = h - bottom - top
    group_w = (w - left - 20) / len(COLUMNS)
    bar_w = group_w / 3
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" '
             f'font-size="11">',
             f'<text x="{w / 2}" y="16" text-anchor="middle">{title}</text>',
             f'<line x1="{left}" y1="{h - bottom}" x2="{w - 10}" y2="{h - bottom}" stroke="black"/>']
    for tick in (0, 25, 50, 75, 100):
        y = h - bottom - plot_h * tick / 100
        parts.append(f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end">{tick}</text>')
    for i, c in enumerate(COLUMNS):
        x0 = left + i * group_w + bar_w / 2
        for j, (vals, colour) in enumerate(((original, "#4c72b0"), (disguised, "#dd8452"))):
            v = vals.get(c) or 0.0
            bh = plot_h * v
            parts.append(f'<rect x="{x0 + j * bar_w:.1f}" y="{h - bottom - bh:.1f}" width="{bar_w:.1f}" '
                         f'height="{bh:.1f}" fill="{colour}"/>')
            parts.append(f'<text x="{x0 + j * bar_w + bar_w / 2:.1f}" y="{h - bottom - bh - 3:.1f}" '
                         f'text-anchor="middle">{100 * v:.1f}</text>')
        parts.append(f'<text x="{x0 + bar_w:.1f}" y="{h - bottom + 16}" text-anchor="middle">'
                     f'{COLUMN_LABELS[c]}</text>')
    parts.append(f'<rect x="{w - 150}" y="24" width="10" height="10" fill="#4c72b0"/>'
                 f'<text x="{w - 135}" y="33">original</text>'
                 f'<rect x="{w - 80}" y="24" width="10" height="10" fill="#dd8452"/>'
                 f'<text x="{w - 65}" y="33">disguised</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
