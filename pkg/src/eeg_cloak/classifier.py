"""Residual CNN classifiers for identity, alcoholism and stimulus prediction.

ResNet-18/34/50 with a small-image stem (3x3 stride-1 convolution, no
pooling) for 32x32 EEG images. A net may carry several softmax heads over a
shared trunk; the disguiser uses that for its joint constraint classifier.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import Diverged, InvalidConfig, JointIdentityUnsupported, ShapeMismatch

TASKS = ("identity", "alcoholism", "stimulus")
FIXED_CLASSES = {"alcoholism": 2, "stimulus": 5}
DEPTHS = {18: ("basic", (2, 2, 2, 2)), 34: ("basic", (3, 4, 6, 3)), 50: ("bottleneck", (3, 4, 6, 3))}


@dataclass(frozen=True)
class NetConfig:
    depth: int = 18
    heads: tuple[tuple[str, int], ...] = (("alcoholism", 2),)
    width: int = 64
    small_stem: bool = True
    image_size: int = 32

    def __post_init__(self):
        object.__setattr__(self, "heads", tuple((str(t), int(n)) for t, n in self.heads))
        if self.depth not in DEPTHS:
            raise InvalidConfig(f"depth must be one of {sorted(DEPTHS)}, got {self.depth}")
        if not self.heads:
            raise InvalidConfig("at least one head is required")
        for task, n in self.heads:
            if task not in TASKS:
                raise InvalidConfig(f"unknown task {task!r}")
            if task in FIXED_CLASSES and n != FIXED_CLASSES[task]:
                raise InvalidConfig(f"{task} head must have {FIXED_CLASSES[task]} classes, got {n}")
            if n < 2:
                raise InvalidConfig(f"{task} head needs at least 2 classes")
        if self.width < 1 or self.image_size < 8:
            raise InvalidConfig("width must be >= 1 and image_size >= 8")

    @classmethod
    def for_task(cls, task: str, depth: int = 18, n_subjects: int | None = None, **kw) -> "NetConfig":
        if task == "identity":
            if not n_subjects:
                raise InvalidConfig("identity head size comes from the manifest; pass n_subjects")
            return cls(depth, (("identity", n_subjects),), **kw)
        if task not in FIXED_CLASSES:
            raise InvalidConfig(f"unknown task {task!r}")
        return cls(depth, ((task, FIXED_CLASSES[task]),), **kw)

    @property
    def tasks(self) -> tuple[str, ...]:
        return tuple(t for t, _ in self.heads)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["heads"] = [list(h) for h in self.heads]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(d["depth"], tuple(tuple(h) for h in d["heads"]), d["width"], d["small_stem"], d["image_size"])


class BasicBlock(nn.Module):
    expansion = 1

    def __init__(self, in_planes, planes, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_planes, planes, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        self.conv2 = nn.Conv2d(planes, planes, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(planes)
        self.shortcut = nn.Sequential()
        if stride != 1 or in_planes != planes:
            self.shortcut = nn.Sequential(nn.Conv2d(in_planes, planes, 1, stride, bias=False), nn.BatchNorm2d(planes))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class Bottleneck(nn.Module):
    expansion = 4

    def __init__(self, in_planes, planes, stride=1):
        super().__init__()
        out_planes = planes * self.expansion
        self.conv1 = nn.Conv2d(in_planes, planes, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        self.conv2 = nn.Conv2d(planes, planes, 3, stride, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(planes)
        self.conv3 = nn.Conv2d(planes, out_planes, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(out_planes)
        self.shortcut = nn.Sequential()
        if stride != 1 or in_planes != out_planes:
            self.shortcut = nn.Sequential(nn.Conv2d(in_planes, out_planes, 1, stride, bias=False),
                                          nn.BatchNorm2d(out_planes))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = F.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        return F.relu(out + self.shortcut(x))


class ResNet(nn.Module):
    def __init__(self, config: NetConfig):
        super().__init__()
        self.config = config
        kind, blocks = DEPTHS[config.depth]
        block = BasicBlock if kind == "basic" else Bottleneck
        w = config.width
        if config.small_stem:
            self.stem = nn.Sequential(nn.Conv2d(3, w, 3, 1, 1, bias=False), nn.BatchNorm2d(w), nn.ReLU(inplace=True))
        else:
            self.stem = nn.Sequential(nn.Conv2d(3, w, 7, 2, 3, bias=False), nn.BatchNorm2d(w), nn.ReLU(inplace=True),
                                      nn.MaxPool2d(3, 2, 1))
        self.in_planes = w
        self.layer1 = self._stage(block, w, blocks[0], 1)
        self.layer2 = self._stage(block, 2 * w, blocks[1], 2)
        self.layer3 = self._stage(block, 4 * w, blocks[2], 2)
        self.layer4 = self._stage(block, 8 * w, blocks[3], 2)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.heads = nn.ModuleDict({t: nn.Linear(8 * w * block.expansion, n) for t, n in config.heads})

    def _stage(self, block, planes, n, stride):
        layers = []
        for s in [stride] + [1] * (n - 1):
            layers.append(block(self.in_planes, planes, s))
            self.in_planes = planes * block.expansion
        return nn.Sequential(*layers)

    def features(self, x):
        x = self.stem(x)
        x = self.layer4(self.layer3(self.layer2(self.layer1(x))))
        return torch.flatten(self.pool(x), 1)

    def forward(self, x) -> dict[str, torch.Tensor]:
        """Logits per head."""
        z = self.features(x)
        return {t: head(z) for t, head in self.heads.items()}


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def build_net(config: NetConfig, seed: int = 0) -> ResNet:
    torch.manual_seed(seed)
    return ResNet(config)


def stem_truncation(net: ResNet) -> nn.Sequential:
    """First two convolutional layers (stem conv, BN, ReLU, first block conv), sharing parameters."""
    return nn.Sequential(*net.stem[:3], net.layer1[0].conv1)


def set_deterministic(threads: int = 1) -> None:
    torch.set_num_threads(max(1, threads))
    if threads == 1:
        torch.use_deterministic_algorithms(True)


def to_tensor(images) -> torch.Tensor:
    if isinstance(images, torch.Tensor):
        return images.float()
    return torch.from_numpy(np.stack([np.asarray(getattr(im, "pixels", im), dtype=np.float32) for im in images]))


def image_labels(images, task: str, subject_index: dict[str, int] | None = None) -> torch.Tensor:
    if task == "identity":
        if subject_index is None:
            raise InvalidConfig("identity labels need a subject index")
        return torch.tensor([subject_index[im.subject_id] for im in images])
    return torch.tensor([getattr(im, task) for im in images])


@dataclass
class TrainOptions:
    epochs: int = 50
    batch: int = 64
    lr: float = 1e-3
    joint: bool = False
    seed: int = 0


@dataclass
class TrainedModel:
    net: ResNet
    config: NetConfig
    history: list[dict] = field(default_factory=list)
    seed: int = 0
    subject_index: dict[str, int] | None = None
    meta: dict = field(default_factory=dict)

    @property
    def best_val_acc(self) -> float:
        return max(h["val_acc"] for h in self.history) if self.history else float("nan")

    def save(self, path, extra: dict | None = None) -> None:
        meta = {"kind": "classifier", "config": self.config.to_dict(), "history": self.history,
                "seed": self.seed, "subject_index": self.subject_index, **self.meta}
        if extra:
            meta.update(extra)
        save_checkpoint(path, {"net": self.net.state_dict()}, meta)

    @classmethod
    def load(cls, path) -> "TrainedModel":
        states, meta = load_checkpoint(path)
        if meta.get("kind") != "classifier":
            raise InvalidConfig(f"{path} is not a classifier checkpoint")
        config = NetConfig.from_dict(meta["config"])
        net = ResNet(config)
        net.load_state_dict(states["net"])
        net.eval()
        extra = {k: v for k, v in meta.items()
                 if k not in ("kind", "config", "history", "seed", "subject_index")}
        return cls(net, config, meta["history"], meta["seed"], meta["subject_index"], extra)


def _multitask_loss(logits: dict, labels: dict) -> torch.Tensor:
    return sum(F.cross_entropy(logits[t], labels[t]) for t in labels)


@torch.no_grad()
def _evaluate(net, x, labels, batch) -> tuple[float, float]:
    net.eval()
    total, correct, n = 0.0, 0, len(x)
    for i in range(0, n, batch):
        logits = net(x[i:i + batch])
        yb = {t: y[i:i + batch] for t, y in labels.items()}
        total += _multitask_loss(logits, yb).item() * len(logits[next(iter(labels))])
        # accuracy over all heads: a sample counts once per head
        correct += sum(int((logits[t].argmax(1) == yb[t]).sum()) for t in labels)
    return total / n, correct / (n * len(labels))


def fit(net: ResNet, x, labels: dict, val_x, val_labels: dict, opts: TrainOptions) -> list[dict]:
    """Adam on summed cross-entropy; restores the best-validation weights. Returns the history."""
    gen = torch.Generator().manual_seed(opts.seed)
    optim = torch.optim.Adam(net.parameters(), lr=opts.lr)
    history, best_acc, best_state = [], -1.0, None
    n = len(x)
    for epoch in range(1, opts.epochs + 1):
        net.train()
        perm = torch.randperm(n, generator=gen)
        run_loss, run_correct = 0.0, 0
        for i in range(0, n, opts.batch):
            idx = perm[i:i + opts.batch]
            if len(idx) < 2 and n > 1:
                continue  # BatchNorm needs more than one sample
            logits = net(x[idx])
            yb = {t: y[idx] for t, y in labels.items()}
            loss = _multitask_loss(logits, yb)
            if not torch.isfinite(loss):
                raise Diverged(f"non-finite training loss at epoch {epoch}")
            optim.zero_grad()
            loss.backward()
            optim.step()
            run_loss += loss.item() * len(idx)
            run_correct += sum(int((logits[t].argmax(1) == yb[t]).sum()) for t in labels)
        val_loss, val_acc = _evaluate(net, val_x, val_labels, opts.batch)
        history.append({"epoch": epoch, "train_loss": run_loss / n, "train_acc": run_correct / (n * len(labels)),
                        "val_loss": val_loss, "val_acc": val_acc})
        if val_acc > best_acc:
            best_acc, best_state = val_acc, copy.deepcopy(net.state_dict())
    net.load_state_dict(best_state)
    net.eval()
    return history


def train_classifier(net: ResNet, train_images, val_images, opts: TrainOptions | None = None,
                     dummy=None, subject_index: dict[str, int] | None = None) -> TrainedModel:
    """Train ``net`` on its heads' tasks; with ``opts.joint`` the dummy images join the training set."""
    opts = opts or TrainOptions()
    config = net.config
    if not train_images or not val_images:
        raise ValueError("training and validation sets must be non-empty")
    if opts.joint:
        if "identity" in config.tasks:
            raise JointIdentityUnsupported("dummy images carry no real subject label")
        if dummy is None:
            raise ValueError("joint training needs a dummy set")
        dummy_images = getattr(dummy, "images", dummy)
        train_images = list(train_images) + list(dummy_images)
    x, vx = to_tensor(train_images), to_tensor(val_images)
    for t in (x, vx):
        if tuple(t.shape[1:]) != (3, config.image_size, config.image_size):
            raise ShapeMismatch(f"images {tuple(t.shape[1:])} do not match config size {config.image_size}")
    labels = {t: image_labels(train_images, t, subject_index) for t in config.tasks}
    vlabels = {t: image_labels(val_images, t, subject_index) for t in config.tasks}
    history = fit(net, x, labels, vx, vlabels, opts)
    meta = {"train": {"epochs": opts.epochs, "batch": opts.batch, "lr": opts.lr, "joint": opts.joint,
                      "n_train": len(train_images), "n_val": len(val_images)},
            "n_parameters": count_parameters(net)}
    return TrainedModel(net, config, history, opts.seed, subject_index, meta)


@torch.no_grad()
def predict_batch(model, images, task: str | None = None, batch: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Class distributions and argmax labels in inference mode."""
    net = model.net if isinstance(model, TrainedModel) else model
    task = task or net.config.tasks[0]
    if not isinstance(images, torch.Tensor) and len(images) == 0:
        return np.zeros((0, dict(net.config.heads)[task])), np.zeros(0, dtype=np.int64)
    x = to_tensor(images)
    size = net.config.image_size
    if x.ndim != 4 or tuple(x.shape[1:]) != (3, size, size):
        raise ShapeMismatch(f"expected (n, 3, {size}, {size}) images, got {tuple(x.shape)}")
    was_training = net.training
    net.eval()
    probs = torch.cat([F.softmax(net(x[i:i + batch])[task], dim=1) for i in range(0, len(x), batch)])
    net.train(was_training)
    p = probs.double().numpy()
    return p, p.argmax(axis=1)
