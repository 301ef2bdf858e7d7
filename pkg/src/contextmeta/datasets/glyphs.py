"""Glyph datasets: Omniglot-style directory trees and procedurally drawn glyphs.

In both, the task label is the character and the context label is the
alphabet (for procedural glyphs, the stroke-style family).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Tuple

import numpy as np

from contextmeta.errors import DataError, InputError
from contextmeta.samples import SampleSet

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".gif", ".pgm")


@dataclass
class GlyphDataset:
    """Square grayscale images in [0, 1] (ink is 1) with character and alphabet labels."""

    samples: SampleSet
    context_names: List[str]
    class_names: List[str]

    def __post_init__(self):
        X = self.samples.X
        if X.ndim != 3 or X.shape[1] != X.shape[2]:
            raise DataError(f"glyph images must be square, got shape {X.shape[1:]}")
        if len(self.samples) and (self.samples.contexts.max() >= len(self.context_names)):
            raise DataError("context id without a name")

    @property
    def n_contexts(self) -> int:
        return len(self.context_names)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def side(self) -> int:
        return int(self.samples.X.shape[1])

    def __len__(self):
        return len(self.samples)

    def context_ids(self):
        return self.samples.context_ids()


def _sorted_dirs(path: Path):
    return sorted(p for p in path.iterdir() if p.is_dir() and not p.name.startswith("."))


def _read_image(path: Path, side: int) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            im = im.convert("L")
            if im.size != (side, side):
                im = im.resize((side, side), Image.BOX)
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except (OSError, UnidentifiedImageError) as exc:
        raise DataError(f"unreadable image ({exc})", str(path)) from exc
    return 1.0 - arr


def load_glyph_tree(root, side: int = 28, invert: bool = True) -> GlyphDataset:
    """Read ``root/<alphabet>/<character>/<image>`` into a :class:`GlyphDataset`.

    Alphabet ids and global character ids follow sorted directory order.
    Images are area-averaged down to ``side`` pixels. Omniglot draws black ink
    on white, so values are inverted to make ink 1 unless ``invert=False``.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError("glyph root is not a directory", str(root))
    images, ys, cs = [], [], []
    context_names, class_names = [], []
    for a_dir in _sorted_dirs(root):
        chars = _sorted_dirs(a_dir)
        if not chars:
            continue
        ctx = len(context_names)
        context_names.append(a_dir.name)
        for c_dir in chars:
            files = sorted(p for p in c_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
            if not files:
                continue
            cls = len(class_names)
            class_names.append(f"{a_dir.name}/{c_dir.name}")
            for f in files:
                img = _read_image(f, side)
                images.append(img if invert else 1.0 - img)
                ys.append(cls)
                cs.append(ctx)
    if not images:
        raise DataError("no images found under glyph root", str(root))
    samples = SampleSet(np.stack(images).astype(np.float32), np.asarray(ys, dtype=np.int64),
                        np.asarray(cs, dtype=np.int64))
    return GlyphDataset(samples, context_names, class_names)


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a procedural dataset; generation is a pure function of this."""

    kind: str = "proc-glyphs"
    n_contexts: int = 4
    n_classes_per_context: int = 20
    samples_per_class: int = 20
    noise: float = 0.05
    side: int = 16
    x_range: Tuple[float, float] = (-5.0, 5.0)
    nuisance_dim: int = 4
    offset_scale: float = 2.0
    distortion: float = 1.0
    seed: int = 0

    def to_dict(self):
        d = asdict(self)
        d["x_range"] = list(self.x_range)
        return d


@dataclass(frozen=True)
class StrokeStyle:
    thickness: float
    slant: float
    rounding: int
    ink: float
    stretch: float


def context_styles(n: int, rng) -> List[StrokeStyle]:
    """Spread ``n`` stroke styles across the parameter ranges so every pair differs."""
    thick = rng.permutation(np.linspace(0.09, 0.18, n))
    slant = rng.permutation(np.linspace(-0.55, 0.55, n))
    rounding = rng.permutation(np.arange(n) % 4)
    ink = rng.permutation(np.linspace(0.45, 1.0, n))
    stretch = rng.permutation(np.linspace(0.7, 1.3, n))
    return [StrokeStyle(float(t), float(s), int(r), float(i), float(w))
            for t, s, r, i, w in zip(thick, slant, rounding, ink, stretch)]


def _chaikin(points: np.ndarray, iterations: int) -> np.ndarray:
    for _ in range(iterations):
        p, q = points[:-1], points[1:]
        cut = np.empty((2 * len(p), 2))
        cut[0::2] = 0.75 * p + 0.25 * q
        cut[1::2] = 0.25 * p + 0.75 * q
        points = np.vstack([points[:1], cut, points[-1:]])
    return points


def _segment_distance(pixels: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance of each pixel centre (P,2) to the nearest of segments a[i]-b[i] (S,2)."""
    ab = b - a
    denom = np.maximum((ab * ab).sum(axis=1), 1e-12)
    ap = pixels[:, None, :] - a[None]
    t = np.clip((ap * ab[None]).sum(axis=2) / denom[None], 0.0, 1.0)
    nearest = a[None] + t[..., None] * ab[None]
    return np.sqrt(((pixels[:, None, :] - nearest) ** 2).sum(axis=2)).min(axis=1)


def render_strokes(strokes, style: StrokeStyle, side: int) -> np.ndarray:
    """Rasterise polylines in [-1, 1]^2 with the given stroke style."""
    coords = (np.arange(side) + 0.5) / side * 2 - 1
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    pixels = np.stack([xx.ravel(), yy.ravel()], axis=1)
    pix = 2.0 / side
    dist = np.full(len(pixels), np.inf)
    for pts in strokes:
        pts = _chaikin(np.asarray(pts, dtype=np.float64), style.rounding)
        pts = pts * np.array([style.stretch, 1.0])
        pts[:, 0] = pts[:, 0] + style.slant * pts[:, 1]
        dist = np.minimum(dist, _segment_distance(pixels, pts[:-1], pts[1:]))
    img = np.clip((style.thickness - dist) / pix + 0.5, 0.0, 1.0) * style.ink
    return img.reshape(side, side)


def _random_glyph(rng) -> List[np.ndarray]:
    n_strokes = rng.integers(1, 3)
    strokes = []
    for _ in range(n_strokes):
        n_pts = rng.integers(3, 6)
        strokes.append(rng.uniform(-0.65, 0.65, size=(n_pts, 2)))
    return strokes


def _distort(template, rng, amount: float):
    """Per-sample handwriting variation: rotation, scale, shift and point jitter."""
    angle = rng.normal(0, 0.3 * amount)
    scale = 1.0 + rng.normal(0, 0.12 * amount)
    rot = scale * np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    shift = rng.normal(0, 0.1 * amount, size=2)
    return [p @ rot.T + shift + rng.normal(0, 0.08 * amount, size=p.shape) for p in template]


def gen_proc_glyphs(spec: SyntheticSpec) -> GlyphDataset:
    """Procedural alphabets: every class of a context shares that context's stroke style.

    Samples of a class are its template polyline, distorted per sample
    (scaled by ``spec.distortion``), rendered in the context style, plus pixel noise.
    """
    if spec.n_contexts < 2:
        raise InputError("procedural glyphs need n_contexts >= 2")
    if spec.n_classes_per_context < 1 or spec.samples_per_class < 1:
        raise InputError("spec needs at least one class per context and one sample per class")
    rng = np.random.default_rng(spec.seed)
    styles = context_styles(spec.n_contexts, rng)
    side = spec.side
    n = spec.n_contexts * spec.n_classes_per_context * spec.samples_per_class
    X = np.empty((n, side, side), dtype=np.float32)
    y = np.empty(n, dtype=np.int64)
    ctx = np.empty(n, dtype=np.int64)
    class_names = []
    i = 0
    for c, style in enumerate(styles):
        for j in range(spec.n_classes_per_context):
            cls = len(class_names)
            class_names.append(f"ctx{c}/glyph{j}")
            template = _random_glyph(rng)
            for _ in range(spec.samples_per_class):
                strokes = _distort(template, rng, spec.distortion)
                img = render_strokes(strokes, style, side)
                if spec.noise > 0:
                    img = img + rng.normal(0, spec.noise, size=img.shape)
                X[i] = np.clip(img, 0.0, 1.0)
                y[i] = cls
                ctx[i] = c
                i += 1
    names = [f"style{c}" for c in range(spec.n_contexts)]
    return GlyphDataset(SampleSet(X, y, ctx), names, class_names)
