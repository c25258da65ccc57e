"""Cycle-consistent translation of real EEG images onto the dummy-identity domain.

Two ResNet-style generators (G_X: real -> dummy, G_Y: dummy -> real) and two
patch discriminators are trained with least-squares adversarial terms and an
L1 cycle loss. An optional constraint classifier C adds a task loss (C's own
cross-entropy on labelled images) and a semantic loss (C's prediction on a
translated image should match its prediction on the source). The semantic
term is switched on once C's smoothed task loss drops below a threshold.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import load_checkpoint, save_checkpoint
from .classifier import FIXED_CLASSES, NetConfig, ResNet, build_net, image_labels, to_tensor
from .errors import Diverged, EmptyDomain, InvalidConfig, MissingLabel, ShapeMismatch, WrongProvenance
from .topomap import EEGImage

CONSTRAINT_SETS = {
    "none": (),
    "alc": ("alcoholism",),
    "sti": ("stimulus",),
    "both": ("alcoholism", "stimulus"),
}
GATE_THRESHOLD = 1.0


def constraint_set_from_name(name: str) -> tuple[str, ...]:
    try:
        return CONSTRAINT_SETS[name]
    except KeyError:
        raise InvalidConfig(f"constraints must be one of {sorted(CONSTRAINT_SETS)}, got {name!r}") from None


class ResnetBlock(nn.Module):
    def __init__(self, dim):
        super().__init__()
        self.body = nn.Sequential(
            nn.ReflectionPad2d(1), nn.Conv2d(dim, dim, 3), nn.InstanceNorm2d(dim), nn.ReLU(True),
            nn.ReflectionPad2d(1), nn.Conv2d(dim, dim, 3), nn.InstanceNorm2d(dim),
        )

    def forward(self, x):
        return x + self.body(x)


class Generator(nn.Module):
    """c7s1 stem, two stride-2 downsamplings, residual blocks, two upsamplings, tanh."""

    def __init__(self, ngf: int = 32, n_blocks: int = 4):
        super().__init__()
        layers = [nn.ReflectionPad2d(3), nn.Conv2d(3, ngf, 7), nn.InstanceNorm2d(ngf), nn.ReLU(True)]
        ch = ngf
        for _ in range(2):
            layers += [nn.Conv2d(ch, ch * 2, 3, 2, 1), nn.InstanceNorm2d(ch * 2), nn.ReLU(True)]
            ch *= 2
        layers += [ResnetBlock(ch) for _ in range(n_blocks)]
        for _ in range(2):
            layers += [nn.ConvTranspose2d(ch, ch // 2, 3, 2, 1, output_padding=1), nn.InstanceNorm2d(ch // 2),
                       nn.ReLU(True)]
            ch //= 2
        layers += [nn.ReflectionPad2d(3), nn.Conv2d(ch, 3, 7), nn.Tanh()]
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class PatchDiscriminator(nn.Module):
    """Three convolutions emitting a grid of realness scores (7x7 for 32x32 input)."""

    def __init__(self, ndf: int = 32):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, ndf, 4, 2, 1), nn.LeakyReLU(0.2, True),
            nn.Conv2d(ndf, ndf * 2, 4, 2, 1), nn.InstanceNorm2d(ndf * 2), nn.LeakyReLU(0.2, True),
            nn.Conv2d(ndf * 2, 1, 4, 1, 1),
        )

    def forward(self, x):
        return self.net(x)


def _init_weights(m):
    if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
        nn.init.normal_(m.weight, 0.0, 0.02)
        if m.bias is not None:
            nn.init.zeros_(m.bias)


def to_signed(x):
    return x * 2 - 1


def to_unit(x):
    return (x + 1) / 2


def lsgan_losses(d_real, d_fake):
    """(generator term, discriminator term) of the least-squares GAN objective.

    generator: mean((d_fake - 1)^2); discriminator: 0.5 mean((d_real - 1)^2) + 0.5 mean(d_fake^2).
    """
    d_real, d_fake = torch.as_tensor(d_real), torch.as_tensor(d_fake)
    if d_real.shape != d_fake.shape:
        raise ShapeMismatch(f"discriminator maps differ: {tuple(d_real.shape)} vs {tuple(d_fake.shape)}")
    g = torch.mean((d_fake - 1) ** 2)
    d = 0.5 * torch.mean((d_real - 1) ** 2) + 0.5 * torch.mean(d_fake ** 2)
    return g, d


def cycle_loss(x, rec_x, y, rec_y):
    """Mean absolute reconstruction error, summed over both directions."""
    x, rec_x, y, rec_y = (torch.as_tensor(t) for t in (x, rec_x, y, rec_y))
    if x.shape != rec_x.shape or y.shape != rec_y.shape:
        raise ShapeMismatch("reconstruction shape differs from its source")
    return torch.mean(torch.abs(x - rec_x)) + torch.mean(torch.abs(y - rec_y))


def constraint_losses(C, x, labels: dict, translated, constraint_set):
    """(task, semantic) losses summed over the constrained tasks.

    task: cross-entropy of C(x) against the true labels.
    semantic: cross-entropy of C(translated) against argmax C(x).
    """
    zero = torch.zeros(())
    if not constraint_set:
        return zero, zero
    missing = [t for t in constraint_set if t not in labels]
    if missing:
        raise MissingLabel(f"no labels for constrained task(s) {missing}")
    logits_x = C(x)
    logits_t = C(translated)
    task = zero
    semantic = zero
    for t in constraint_set:
        y = torch.as_tensor(labels[t])
        task = task + F.cross_entropy(logits_x[t], y)
        pseudo = logits_x[t].detach().argmax(dim=1)
        semantic = semantic + F.cross_entropy(logits_t[t], pseudo)
    return task, semantic


@dataclass
class GanBatchLosses:
    adv_G: float
    adv_D: float
    cycle: float
    task: float
    semantic: float
    total_G: float
    total_D: float
    gate: int = 0
    task_ema: float = float("nan")

    def check(self):
        for k, v in asdict(self).items():
            if k != "task_ema" and not math.isfinite(v):
                raise Diverged(f"{k} became non-finite")


@dataclass
class DisguiserOptions:
    epochs: int = 100
    batch: int = 16
    lr: float = 2e-4
    beta1: float = 0.5
    lambda_cycle: float = 10.0
    lambda_task: float = 1.0
    lambda_sem: float = 1.0
    gate_threshold: float = GATE_THRESHOLD
    gate_decay: float = 0.9
    ngf: int = 32
    ndf: int = 32
    n_blocks: int = 4
    c_depth: int = 18
    c_width: int = 64
    c_lr: float = 1e-3
    seed: int = 0


class Gate:
    """Exponential running mean of the task loss; opens below the threshold and stays open."""

    def __init__(self, threshold: float = GATE_THRESHOLD, decay: float = 0.9):
        self.threshold = threshold
        self.decay = decay
        self.ema = None
        self.open = False
        self.opened_at = None

    def update(self, task_loss: float, step: int) -> int:
        self.ema = task_loss if self.ema is None else self.decay * self.ema + (1 - self.decay) * task_loss
        if not self.open and self.ema < self.threshold:
            self.open = True
            self.opened_at = step
        return int(self.open)


@dataclass
class DisguiserModel:
    G_X: Generator
    G_Y: Generator
    D_X: PatchDiscriminator
    D_Y: PatchDiscriminator
    C: ResNet | None
    constraint_set: tuple[str, ...]
    options: DisguiserOptions
    history: list[dict] = field(default_factory=list)
    gate_opened_at: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def gate_threshold(self) -> float:
        return self.options.gate_threshold

    def networks(self) -> dict[str, nn.Module]:
        nets = {"G_X": self.G_X, "G_Y": self.G_Y, "D_X": self.D_X, "D_Y": self.D_Y}
        if self.C is not None:
            nets["C"] = self.C
        return nets

    def save(self, path, extra: dict | None = None) -> None:
        meta = {"kind": "disguiser", "constraint_set": list(self.constraint_set),
                "options": asdict(self.options), "history": self.history,
                "gate_opened_at": self.gate_opened_at,
                "c_config": self.C.config.to_dict() if self.C is not None else None, **self.meta}
        if extra:
            meta.update(extra)
        save_checkpoint(path, {k: m.state_dict() for k, m in self.networks().items()}, meta)

    @classmethod
    def load(cls, path) -> "DisguiserModel":
        states, meta = load_checkpoint(path)
        if meta.get("kind") != "disguiser":
            raise InvalidConfig(f"{path} is not a disguiser checkpoint")
        opts = DisguiserOptions(**meta["options"])
        model = _new_model(tuple(meta["constraint_set"]), opts)
        for k, m in model.networks().items():
            m.load_state_dict(states[k])
            m.eval()
        model.history = meta["history"]
        model.gate_opened_at = meta["gate_opened_at"]
        model.meta = {k: v for k, v in meta.items()
                      if k not in ("kind", "constraint_set", "options", "history", "gate_opened_at", "c_config")}
        return model


def _new_model(constraint_set, opts: DisguiserOptions) -> DisguiserModel:
    torch.manual_seed(opts.seed)
    nets = [Generator(opts.ngf, opts.n_blocks), Generator(opts.ngf, opts.n_blocks),
            PatchDiscriminator(opts.ndf), PatchDiscriminator(opts.ndf)]
    for n in nets:
        n.apply(_init_weights)
    C = None
    if constraint_set:
        heads = tuple((t, FIXED_CLASSES[t]) for t in constraint_set)
        C = build_net(NetConfig(opts.c_depth, heads, width=opts.c_width), seed=opts.seed + 1)
    return DisguiserModel(*nets, C, tuple(constraint_set), opts)


def _labels(images, constraint_set, domain):
    out = {}
    for t in constraint_set:
        if any(getattr(im, t, None) is None or getattr(im, t) < 0 for im in images):
            raise MissingLabel(f"{domain} images lack {t} labels")
        out[t] = image_labels(images, t)
    return out


def train_disguiser(real_x, dummy_y, constraint_set=(), opts: DisguiserOptions | None = None,
                    log=None) -> DisguiserModel:
    """Alternating generator / discriminator updates, with C trained in the loop on its task loss.

    total_G = adv + lambda_cycle*cycle + lambda_task*task + lambda_sem*semantic*gate.
    Task and semantic losses are averaged over the X->Y and Y->X directions.
    """
    opts = opts or DisguiserOptions()
    constraint_set = tuple(constraint_set)
    for t in constraint_set:
        if t not in FIXED_CLASSES:
            raise InvalidConfig(f"cannot constrain on {t!r}")
    real_images = list(real_x)
    dummy_images = list(getattr(dummy_y, "images", dummy_y))
    if not real_images or not dummy_images:
        raise EmptyDomain("both the real and the dummy domain need images")

    model = _new_model(constraint_set, opts)
    X = to_signed(to_tensor(real_images))
    Y = to_signed(to_tensor(dummy_images))
    if X.shape[1:] != Y.shape[1:]:
        raise ShapeMismatch("real and dummy images differ in shape")
    lx = _labels(real_images, constraint_set, "real")
    ly = _labels(dummy_images, constraint_set, "dummy")

    betas = (opts.beta1, 0.999)
    opt_G = torch.optim.Adam(itertools.chain(model.G_X.parameters(), model.G_Y.parameters()), opts.lr, betas=betas)
    opt_D = torch.optim.Adam(itertools.chain(model.D_X.parameters(), model.D_Y.parameters()), opts.lr, betas=betas)
    opt_C = torch.optim.Adam(model.C.parameters(), opts.c_lr) if model.C is not None else None
    gen = torch.Generator().manual_seed(opts.seed)
    gate = Gate(opts.gate_threshold, opts.gate_decay)
    C = model.C

    step = 0
    for epoch in range(1, opts.epochs + 1):
        for m in (model.G_X, model.G_Y, model.D_X, model.D_Y):
            m.train()
        perm = torch.randperm(len(X), generator=gen)
        sums: dict[str, float] = {}
        n_steps = 0
        for i in range(0, len(X), opts.batch):
            ix = perm[i:i + opts.batch]
            if len(ix) < 2 and len(X) > 1:
                continue
            iy = torch.randint(len(Y), (len(ix),), generator=gen)
            x, y = X[ix], Y[iy]
            bx = {t: v[ix] for t, v in lx.items()}
            by = {t: v[iy] for t, v in ly.items()}

            # constraint classifier on its task loss
            task = torch.zeros(())
            if C is not None:
                C.train()
                task_x, _ = constraint_losses(C, x, bx, x, constraint_set)
                task_y, _ = constraint_losses(C, y, by, y, constraint_set)
                task = (task_x + task_y) / 2
                opt_C.zero_grad()
                (opts.lambda_task * task).backward()
                opt_C.step()
                task = task.detach()
            g = gate.update(float(task), step) if C is not None else 0

            # generators
            fake_y = model.G_X(x)
            fake_x = model.G_Y(y)
            rec_x = model.G_Y(fake_y)
            rec_y = model.G_X(fake_x)
            d_fy, d_fx = model.D_Y(fake_y), model.D_X(fake_x)
            adv_gy, _ = lsgan_losses(torch.ones_like(d_fy), d_fy)
            adv_gx, _ = lsgan_losses(torch.ones_like(d_fx), d_fx)
            adv_G = adv_gy + adv_gx
            cyc = cycle_loss(x, rec_x, y, rec_y)
            semantic = torch.zeros(())
            if C is not None:
                C.eval()
                for p in C.parameters():
                    p.requires_grad_(False)
                _, sem_x = constraint_losses(C, x, bx, fake_y, constraint_set)
                _, sem_y = constraint_losses(C, y, by, fake_x, constraint_set)
                for p in C.parameters():
                    p.requires_grad_(True)
                semantic = (sem_x + sem_y) / 2
            total_G = adv_G + opts.lambda_cycle * cyc + opts.lambda_task * task + opts.lambda_sem * semantic * g
            opt_G.zero_grad()
            total_G.backward()
            opt_G.step()

            # discriminators
            _, d_y = lsgan_losses(model.D_Y(y), model.D_Y(fake_y.detach()))
            _, d_x = lsgan_losses(model.D_X(x), model.D_X(fake_x.detach()))
            total_D = d_x + d_y
            opt_D.zero_grad()
            total_D.backward()
            opt_D.step()

            val = lambda t: float(t.detach()) if torch.is_tensor(t) else float(t)  # noqa: E731
            losses = GanBatchLosses(val(adv_G), val(total_D), val(cyc), val(task), val(semantic),
                                    val(total_G), val(total_D), g, gate.ema if gate.ema is not None else 0.0)
            losses.check()
            for k, v in asdict(losses).items():
                sums[k] = sums.get(k, 0.0) + v
            n_steps += 1
            step += 1
        row = {"epoch": epoch, **{k: v / max(n_steps, 1) for k, v in sums.items()}, "gate": g,
               "steps": n_steps}
        model.history.append(row)
        if log is not None:
            log(row)

    model.gate_opened_at = gate.opened_at
    for m in model.networks().values():
        m.eval()
    return model


@torch.no_grad()
def disguise_batch(model: DisguiserModel, images, batch: int = 64) -> list[EEGImage]:
    """G_X applied to real images; labels and original subject carried through."""
    images = list(images)
    for im in images:
        if im.provenance != "real":
            raise WrongProvenance(f"can only disguise real images, got {im.provenance} ({im.name})")
    if not images:
        return []
    model.G_X.eval()
    x = to_signed(to_tensor(images))
    out = torch.cat([model.G_X(x[i:i + batch]) for i in range(0, len(x), batch)])
    pix = to_unit(out).clamp(0.0, 1.0).numpy()
    return [EEGImage(p, im.subject_id, im.alcoholism, im.stimulus, "disguised", name=im.name)
            for p, im in zip(pix, images)]


def disguise(model: DisguiserModel, image: EEGImage) -> EEGImage:
    return disguise_batch(model, [image])[0]


def training_curves(model: DisguiserModel) -> dict[str, np.ndarray]:
    keys = ("adv_G", "adv_D", "cycle", "task", "semantic", "total_G", "total_D")
    return {k: np.array([h[k] for h in model.history]) for k in keys}
