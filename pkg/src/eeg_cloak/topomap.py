"""Topographic EEG images: electrode projection, grid interpolation, RGB assembly.

Band powers are log-compressed, mapped to [0, 1] with a normalizer fit on the
training split, and interpolated over the Delaunay triangulation of the
projected electrode sites (nearest site outside the hull). Theta, alpha and
beta become the R, G and B channels.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

from .errors import (
    DegenerateRange,
    DegenerateSites,
    EmptyTrainingSet,
    ImageFormatError,
    NonUnitVector,
)

DEFAULT_SIZE = 32
PROVENANCES = ("real", "dummy", "disguised")
DUMMY_PREFIX = "dummy:"


@dataclass(frozen=True)
class ElectrodeTable:
    names: tuple[str, ...]
    coords: np.ndarray = field(compare=False, hash=False)

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.shape != (len(self.names), 3):
            raise ValueError("coords must be (n, 3)")
        if len(set(self.names)) != len(self.names):
            raise ValueError("electrode names must be unique")
        if np.any(np.abs(np.linalg.norm(coords, axis=1) - 1.0) > 1e-6):
            raise NonUnitVector("electrode coordinates must lie on the unit sphere")
        object.__setattr__(self, "coords", coords)

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def projected(self) -> np.ndarray:
        return np.array([project_azimuthal(c) for c in self.coords])

    def image_sites(self) -> np.ndarray:
        """Projected sites rotated so the nose points up and the left hemisphere is on the left."""
        p = self.projected()
        return np.column_stack([-p[:, 1], p[:, 0]])

    @classmethod
    def from_csv(cls, path) -> "ElectrodeTable":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(
            names=tuple(r["name"] for r in rows),
            coords=np.array([[float(r["x"]), float(r["y"]), float(r["z"])] for r in rows]),
        )


@lru_cache(maxsize=None)
def default_electrode_table() -> ElectrodeTable:
    """Bundled extended 10-20 positions keyed by the corpus sensor names.

    Axes: x toward the nose, y toward the left ear, z toward the vertex.
    X, Y (ocular) and nd (nose) sit on the equator in front.
    """
    with resources.as_file(resources.files("eeg_cloak") / "assets" / "electrodes.csv") as p:
        return ElectrodeTable.from_csv(p)


def project_azimuthal(coord) -> np.ndarray:
    """Azimuthal equidistant projection centred on the vertex (0, 0, 1).

    The distance from the origin equals the great-circle distance from the
    vertex, arccos(z).
    """
    x, y, z = (float(v) for v in coord)
    if abs(np.sqrt(x * x + y * y + z * z) - 1.0) > 1e-6:
        raise NonUnitVector(f"{coord} is not a unit vector")
    r = np.arccos(np.clip(z, -1.0, 1.0))
    phi = np.arctan2(y, x)
    return np.array([r * np.cos(phi), r * np.sin(phi)])


def grid_bounds(sites, pad: float = 0.05) -> tuple[float, float, float, float]:
    """Square around the sites' bounding box, padded by ``pad`` of its side."""
    sites = np.asarray(sites, dtype=np.float64)
    lo, hi = sites.min(axis=0), sites.max(axis=0)
    centre = (lo + hi) / 2
    half = max(hi - lo) / 2 * (1 + pad)
    return centre[0] - half, centre[0] + half, centre[1] - half, centre[1] + half


def grid_points(bounds, h: int, w: int) -> np.ndarray:
    """Pixel coordinates, row-major; row 0 is the top (largest second coordinate)."""
    x0, x1, y0, y1 = bounds
    xs = np.linspace(x0, x1, w)
    ys = np.linspace(y1, y0, h)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


class GridInterpolator:
    """Piecewise-linear interpolation over the Delaunay triangulation of fixed sites.

    The interpolation is a fixed linear map with non-negative weights, so it
    is computed once per site set and applied to any number of value vectors.
    """

    def __init__(self, sites, h: int = DEFAULT_SIZE, w: int = DEFAULT_SIZE, bounds=None):
        sites = np.asarray(sites, dtype=np.float64)
        if sites.ndim != 2 or sites.shape[1] != 2 or len(sites) < 3:
            raise DegenerateSites("need at least 3 two-dimensional sites")
        if len(np.unique(sites, axis=0)) != len(sites):
            raise DegenerateSites("duplicate site coordinates")
        centred = sites - sites.mean(axis=0)
        sv = np.linalg.svd(centred, compute_uv=False)
        if sv[1] <= 1e-12 * max(sv[0], 1.0):
            raise DegenerateSites("sites are collinear")
        self.sites = sites
        self.h, self.w = h, w
        self.bounds = grid_bounds(sites) if bounds is None else tuple(bounds)
        self.tri = Delaunay(sites)
        self.pixels = grid_points(self.bounds, h, w)
        self.weights = self.weights_at(self.pixels)

    def weights_at(self, points) -> np.ndarray:
        """(m, n_sites) interpolation weights for arbitrary query points."""
        points = np.asarray(points, dtype=np.float64)
        n = len(self.sites)
        out = np.zeros((len(points), n))
        simplex = self.tri.find_simplex(points)
        inside = simplex >= 0
        if np.any(inside):
            s = simplex[inside]
            T = self.tri.transform[s]
            b = np.einsum("ijk,ik->ij", T[:, :2], points[inside] - T[:, 2])
            bary = np.column_stack([b, 1 - b.sum(axis=1)])
            bary = np.clip(bary, 0.0, None)
            bary /= bary.sum(axis=1, keepdims=True)
            rows = np.flatnonzero(inside)
            verts = self.tri.simplices[s]
            for j in range(3):
                np.add.at(out, (rows, verts[:, j]), bary[:, j])
        outside = np.flatnonzero(~inside)
        if len(outside):
            d2 = ((points[outside, None, :] - self.sites[None]) ** 2).sum(axis=-1)
            out[outside, d2.argmin(axis=1)] = 1.0
        return out

    def evaluate(self, values, points) -> np.ndarray:
        return self.weights_at(points) @ np.asarray(values, dtype=np.float64)

    def grid(self, values) -> np.ndarray:
        """Interpolate site values (n,) or (n, c) onto the grid: (h, w) or (c, h, w)."""
        values = np.asarray(values, dtype=np.float64)
        flat = self.weights @ values
        if values.ndim == 1:
            return flat.reshape(self.h, self.w)
        return flat.T.reshape(values.shape[1], self.h, self.w)


def interpolate_grid(points, values, h: int = DEFAULT_SIZE, w: int = DEFAULT_SIZE, bounds=None) -> np.ndarray:
    return GridInterpolator(points, h, w, bounds).grid(values)


@lru_cache(maxsize=8)
def _table_interpolator(table: ElectrodeTable, h: int, w: int) -> GridInterpolator:
    return GridInterpolator(table.image_sites(), h, w)


@dataclass
class Normalizer:
    """Per-band affine map of log(1 + power) onto [0, 1]."""

    lo: np.ndarray
    hi: np.ndarray
    fit_split: str = "train"
    percentiles: tuple[float, float] = (1.0, 99.0)

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)
        if np.any(~(self.lo < self.hi)):
            raise DegenerateRange(f"normalizer needs lo < hi per band, got lo={self.lo}, hi={self.hi}")

    def transform(self, powers) -> np.ndarray:
        """Unclipped affine image of log(1 + power)."""
        return (np.log1p(np.asarray(powers, dtype=np.float64)) - self.lo) / (self.hi - self.lo)

    def __call__(self, powers) -> np.ndarray:
        return np.clip(self.transform(powers), 0.0, 1.0)

    def to_dict(self) -> dict:
        return {
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
            "fit_split": self.fit_split,
            "percentiles": list(self.percentiles),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(d["lo"], d["hi"], d.get("fit_split", "train"), tuple(d.get("percentiles", (1.0, 99.0))))

    def save(self, path, extra: dict | None = None) -> None:
        d = self.to_dict()
        if extra:
            d.update(extra)
        Path(path).write_text(json.dumps(d, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "Normalizer":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_normalizer(train_features, percentiles=(1.0, 99.0), fit_split: str = "train") -> Normalizer:
    """Percentiles of log(1 + power) over every (trial, electrode) pair, per band.

    The percentiles are rounded outward to order statistics (lower for lo,
    higher for hi), so at least (hi - lo) percent of the fit data maps into
    [0, 1] without clipping whatever the sample count.
    """
    if len(train_features) == 0:
        raise EmptyTrainingSet("cannot fit a normalizer on zero trials")
    stacked = np.concatenate([np.asarray(getattr(f, "powers", f)) for f in train_features], axis=0)
    logp = np.log1p(stacked)
    lo = np.percentile(logp, percentiles[0], axis=0, method="lower")
    hi = np.percentile(logp, percentiles[1], axis=0, method="higher")
    return Normalizer(lo, hi, fit_split, tuple(percentiles))


@dataclass(eq=False)
class EEGImage:
    """3 x H x W image in [0, 1] (R=theta, G=alpha, B=beta) with labels."""

    pixels: np.ndarray
    subject_id: str
    alcoholism: int
    stimulus: int
    provenance: str = "real"
    name: str = ""

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim != 3 or self.pixels.shape[0] != 3:
            raise ValueError(f"pixels must be (3, H, W), got {self.pixels.shape}")
        if not (np.all(self.pixels >= 0) and np.all(self.pixels <= 1)):
            raise ValueError("pixels must lie in [0, 1]")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if (self.provenance == "dummy") != self.subject_id.startswith(DUMMY_PREFIX):
            raise ValueError("dummy images, and only dummy images, carry a dummy group id")

    @property
    def shape(self):
        return self.pixels.shape

    def __eq__(self, other):
        if not isinstance(other, EEGImage):
            return NotImplemented
        return (
            self.subject_id == other.subject_id
            and self.alcoholism == other.alcoholism
            and self.stimulus == other.stimulus
            and self.provenance == other.provenance
            and np.array_equal(self.pixels, other.pixels)
        )


def assemble_images(features, table: ElectrodeTable, norm: Normalizer, h=DEFAULT_SIZE, w=DEFAULT_SIZE,
                    provenance: str = "real") -> list[EEGImage]:
    interp = _table_interpolator(table, h, w)
    out = []
    for f in features:
        if f.powers.shape != (len(table), 3):
            raise ValueError(f"features have shape {f.powers.shape}, table has {len(table)} electrodes")
        grid = np.clip(interp.grid(norm(f.powers)), 0.0, 1.0)
        out.append(EEGImage(grid, f.subject_id, int(f.alcoholism), int(f.stimulus), provenance,
                            name=getattr(f, "trial_id", "")))
    return out


def assemble_image(features, table: ElectrodeTable, norm: Normalizer, h=DEFAULT_SIZE, w=DEFAULT_SIZE,
                   provenance: str = "real") -> EEGImage:
    """log(1+p) -> normalizer -> clip -> interpolate, per band; stacked as RGB."""
    return assemble_images([features], table, norm, h, w, provenance)[0]


# EEGIMG binary format, little-endian throughout
_MAGIC = b"EIMG"
_VERSION = 1
_HEAD = struct.Struct("<4sIHHBBBB")
_LEN = struct.Struct("<H")


def encode_image(img: EEGImage) -> bytes:
    c, h, w = img.pixels.shape
    sid = img.subject_id.encode("utf-8")
    return b"".join([
        _HEAD.pack(_MAGIC, _VERSION, h, w, c, PROVENANCES.index(img.provenance), img.alcoholism, img.stimulus),
        _LEN.pack(len(sid)),
        sid,
        np.ascontiguousarray(img.pixels, dtype="<f4").tobytes(),
    ])


def decode_image(data: bytes, name: str = "") -> EEGImage:
    if len(data) < _HEAD.size + _LEN.size:
        raise ImageFormatError("truncated EEGIMG header")
    magic, version, h, w, c, prov, alc, stim = _HEAD.unpack_from(data, 0)
    if magic != _MAGIC:
        raise ImageFormatError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise ImageFormatError(f"unsupported EEGIMG version {version}")
    if c != 3 or prov >= len(PROVENANCES):
        raise ImageFormatError("bad channel count or provenance code")
    off = _HEAD.size
    (n,) = _LEN.unpack_from(data, off)
    off += _LEN.size
    sid = data[off:off + n].decode("utf-8")
    off += n
    body = data[off:]
    if len(body) != 4 * c * h * w:
        raise ImageFormatError(f"expected {4 * c * h * w} pixel bytes, got {len(body)}")
    pixels = np.frombuffer(body, dtype="<f4").reshape(c, h, w).astype(np.float32)
    return EEGImage(pixels, sid, alc, stim, PROVENANCES[prov], name=name)


def image_filename(name: str) -> str:
    return name.replace("/", "__") + ".eimg"


def save_images(images, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(images):
        (d / image_filename(img.name or f"img{i:06d}")).write_bytes(encode_image(img))


def load_images(directory) -> list[EEGImage]:
    d = Path(directory)
    return [decode_image(p.read_bytes(), name=p.name[:-5].replace("__", "/"))
            for p in sorted(d.glob("*.eimg"))]


def export_png(img: EEGImage, path, scale: int = 1) -> None:
    """8-bit RGB PNG for viewing; not a storage format."""
    from PIL import Image

    rgb = np.round(np.transpose(img.pixels, (1, 2, 0)) * 255).astype(np.uint8)
    im = Image.fromarray(rgb, mode="RGB")
    if scale > 1:
        im = im.resize((im.width * scale, im.height * scale), Image.NEAREST)
    im.save(path)
