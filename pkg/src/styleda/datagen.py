"""Seeded synthetic two-domain recognition data.

An identity is a fixed arrangement of three soft-edged primitives (a disk, a
bar and a ring) on a 32×32 canvas; each rendered image jitters position,
scale and angle like a pose change.  A domain is a range of style transforms
(contrast, brightness, low-frequency texture, blur).  ``gap`` slides the
target ranges away from the source ones: at 0 they coincide, and above
roughly 0.3 they no longer overlap in brightness.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .tensor import Rng

SIZE = 32
PRIMITIVES = ("disk", "bar", "ring")
MIN_IDENTITY_MARGIN = 2.0  # pixels, on at least one primitive coordinate

SOURCE_GAIN = (0.9, 1.1)
SOURCE_BRIGHTNESS = (0.0, 0.1)
SOURCE_TEXTURE = (0.0, 0.02)
GAIN_SHIFT = 0.3
BRIGHTNESS_SHIFT = 0.35
TEXTURE_RANGE = (0.04, 0.08)


@dataclass
class IdentitySpec:
    id: str
    # one row per primitive: cx, cy, size, angle, intensity
    primitives: list
    jitter: float = 1.5

    def coords(self):
        return np.array([p[:3] for p in self.primitives]).ravel()


@dataclass
class StyleSpec:
    gain: float = 1.0
    brightness: float = 0.0
    texture: float = 0.0
    texture_freq: tuple = (1.0, 0.0)
    texture_phase: float = 0.0
    blur: int = 0
    domain: str = "source"


@dataclass(frozen=True)
class StyleRanges:
    gain: tuple
    brightness: tuple
    texture: tuple
    blur_prob: float
    domain: str


def style_ranges(domain, gap):
    if not 0.0 <= gap <= 1.0:
        raise ValueError("gap must lie in [0, 1]")
    if domain == "source":
        return StyleRanges(SOURCE_GAIN, SOURCE_BRIGHTNESS, SOURCE_TEXTURE, 0.0, "source")
    lerp = lambda a, b: (1.0 - gap) * a + gap * b  # noqa: E731
    return StyleRanges(
        gain=(SOURCE_GAIN[0] - GAIN_SHIFT * gap, SOURCE_GAIN[1] - GAIN_SHIFT * gap),
        brightness=(SOURCE_BRIGHTNESS[0] + BRIGHTNESS_SHIFT * gap, SOURCE_BRIGHTNESS[1] + BRIGHTNESS_SHIFT * gap),
        texture=(lerp(SOURCE_TEXTURE[0], TEXTURE_RANGE[0]), lerp(SOURCE_TEXTURE[1], TEXTURE_RANGE[1])),
        blur_prob=gap,
        domain="target",
    )


def brightness_margin(gap):
    """Distance between the source and target brightness ranges (0 if overlapping)."""
    s, t = style_ranges("source", gap).brightness, style_ranges("target", gap).brightness
    return max(0.0, t[0] - s[1])


def sample_style(ranges, rng):
    return StyleSpec(
        gain=float(rng.uniform(*ranges.gain)),
        brightness=float(rng.uniform(*ranges.brightness)),
        texture=float(rng.uniform(*ranges.texture)),
        texture_freq=(float(rng.uniform(0.5, 2.0)), float(rng.uniform(-1.0, 1.0))),
        texture_phase=float(rng.uniform(0.0, 2.0 * np.pi)),
        blur=int(rng.random() < ranges.blur_prob),
        domain=ranges.domain,
    )


def sample_identities(n, rng, prefix, existing=()):
    specs = []
    taken = [s.coords() for s in existing]
    i = 0
    while len(specs) < n:
        r = rng.child(prefix, i)
        i += 1
        prims = [
            [float(r.uniform(7, 25)), float(r.uniform(7, 25)), float(r.uniform(3.0, 6.0)),
             float(r.uniform(0, np.pi)), float(r.uniform(0.35, 0.6))]
            for _ in PRIMITIVES
        ]
        cand = IdentitySpec(f"{prefix}{len(specs):03d}", prims)
        c = cand.coords()
        if all(np.max(np.abs(c - t)) >= MIN_IDENTITY_MARGIN for t in taken):
            specs.append(cand)
            taken.append(c)
    return specs


_yy, _xx = np.mgrid[0:SIZE, 0:SIZE].astype(np.float64) + 0.5


def _soft(signed_dist):
    # inside where signed_dist < 0, ~1px transition
    return 1.0 / (1.0 + np.exp(np.clip(2.5 * signed_dist, -50, 50)))


def _primitive_mask(kind, cx, cy, size, angle):
    dx, dy = _xx - cx, _yy - cy
    if kind == "disk":
        return _soft(np.hypot(dx, dy) - size)
    if kind == "ring":
        return _soft(np.abs(np.hypot(dx, dy) - size) - 1.0)
    # bar: segment of half-length ``size`` and half-width 1
    c, s = np.cos(angle), np.sin(angle)
    along = dx * c + dy * s
    across = -dx * s + dy * c
    return _soft(np.maximum(np.abs(along) - size, np.abs(across) - 1.0))


def content_raster(identity, pose=(0.0, 0.0, 1.0, 0.0)):
    """Background 0.1 with primitives composited by per-pixel max."""
    tx, ty, scale, rot = pose
    img = np.full((SIZE, SIZE), 0.1)
    for kind, (cx, cy, size, angle, inten) in zip(PRIMITIVES, identity.primitives):
        m = _primitive_mask(kind, cx + tx, cy + ty, size * scale, angle + rot)
        img = np.maximum(img, 0.1 + (inten - 0.1) * m)
    return img


def box_blur(img, radius):
    """Normalized box filter with wrap-around borders (mean preserving)."""
    if radius <= 0:
        return img
    out = np.zeros_like(img)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            out += np.roll(img, (dy, dx), axis=(0, 1))
    return out / (2 * radius + 1) ** 2


def apply_style(img, style):
    x = style.gain * img
    x = x + style.brightness
    if style.texture:
        fx, fy = style.texture_freq
        x = x + style.texture * np.sin(2.0 * np.pi * (fx * _xx + fy * _yy) / SIZE + style.texture_phase)
    x = box_blur(x, style.blur)
    return np.clip(x, 0.0, 1.0)


def sample_pose(identity, rng):
    j = identity.jitter
    return (
        float(rng.uniform(-j, j)),
        float(rng.uniform(-j, j)),
        float(rng.uniform(0.92, 1.08)),
        float(rng.uniform(-0.15, 0.15)),
    )


def render(identity, style, rng=None):
    """One 1×32×32 image: jittered content (if ``rng``), then the style."""
    pose = sample_pose(identity, rng) if rng is not None else (0.0, 0.0, 1.0, 0.0)
    img = apply_style(content_raster(identity, pose), style)
    return img[None].astype(np.float32)


@dataclass
class Protocols:
    """Template definitions and evaluation protocols over the target eval images."""

    templates: dict  # template id -> {"subject": str, "media": [[image index, ...], ...]}
    pairs: list  # (template a, template b, label)
    folds: list  # fold index per pair
    gallery: list  # (template id, subject id)
    known_probes: list
    unknown_probes: list


@dataclass
class Dataset:
    seed: int
    gap: float
    source_ids: list
    target_ids: list
    source_images: np.ndarray
    source_labels: np.ndarray
    source_styles: list
    target_images: np.ndarray
    target_subjects: np.ndarray  # index into target_ids; evaluation only
    target_styles: list
    protocols: Protocols

    def manifest(self):
        return {
            "seed": self.seed,
            "gap": self.gap,
            "image_shape": [1, SIZE, SIZE],
            "source_identities": [asdict(s) for s in self.source_ids],
            "target_identities": [asdict(s) for s in self.target_ids],
            "style_ranges": {
                "source": asdict(style_ranges("source", self.gap)),
                "target": asdict(style_ranges("target", self.gap)),
            },
            "source_styles": [asdict(s) for s in self.source_styles],
            "target_styles": [asdict(s) for s in self.target_styles],
        }


def build_protocols(target_ids, subjects, rng, templates_per_subject=5, folds=10, known_fraction=2 / 3):
    templates = {}
    by_subject = {}
    for s, ident in enumerate(target_ids):
        idx = np.flatnonzero(subjects == s)
        chunks = np.array_split(idx, templates_per_subject)
        for t, chunk in enumerate(chunks):
            if len(chunk) == 0:
                continue
            tid = f"{ident.id}_t{t}"
            media = [chunk[:1].tolist()] + ([chunk[1:].tolist()] if len(chunk) > 1 else [])
            templates[tid] = {"subject": ident.id, "media": media}
            by_subject.setdefault(ident.id, []).append(tid)
    ids = list(templates)
    pairs = [
        (a, b, int(templates[a]["subject"] == templates[b]["subject"]))
        for i, a in enumerate(ids)
        for b in ids[i + 1 :]
    ]
    perm = rng.child("folds").permutation(len(pairs))
    fold_of = [0] * len(pairs)
    for rank, p in enumerate(perm):
        fold_of[int(p)] = rank % folds
    n_known = int(round(known_fraction * len(target_ids)))
    known = [t.id for t in target_ids[:n_known]]
    unknown = [t.id for t in target_ids[n_known:]]
    gallery = [(by_subject[s][0], s) for s in known]
    known_probes = [(t, s) for s in known for t in by_subject[s][1:]]
    unknown_probes = [(t, s) for s in unknown for t in by_subject[s]]
    return Protocols(templates, pairs, fold_of, gallery, known_probes, unknown_probes)


def _render_set(identities, per_identity, ranges, rng, tag):
    images, labels, styles = [], [], []
    for k, ident in enumerate(identities):
        for j in range(per_identity):
            r = rng.child(tag, k, j)
            st = sample_style(ranges, r.child("style"))
            images.append(render(ident, st, r.child("pose")))
            labels.append(k)
            styles.append(st)
    return np.stack(images), np.array(labels, dtype=np.int64), styles


def generate(seed, n_source=50, n_target=30, source_per_id=40, target_per_id=30, gap=1.0,
             templates_per_subject=5, folds=10):
    if min(n_source, n_target, source_per_id, target_per_id) <= 0:
        raise ValueError("all counts must be positive")
    if n_target < 2:
        raise ValueError("need at least two target identities for the protocols")
    rng = Rng(seed)
    src_ids = sample_identities(n_source, rng.child("ids"), "S")
    tgt_ids = sample_identities(n_target, rng.child("ids"), "T", existing=src_ids)
    xs, ys, s_styles = _render_set(src_ids, source_per_id, style_ranges("source", gap), rng, "source")
    xt, yt, t_styles = _render_set(tgt_ids, target_per_id, style_ranges("target", gap), rng, "target")
    protocols = build_protocols(tgt_ids, yt, rng, templates_per_subject, folds)
    return Dataset(seed, gap, src_ids, tgt_ids, xs, ys, s_styles, xt, yt, t_styles, protocols)
