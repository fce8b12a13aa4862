"""Synthetic personalized-concept datasets: 2-D point clusters and tiny glyphs.

Each concept is a reference set of 4-6 samples. Context tokens name
deterministic transforms (the prompt analogue): translations for 2-D points,
pixel rolls and intensity scaling for glyphs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import RngStream

__all__ = [
    "ReferenceSet",
    "ConditionSpec",
    "gen_mixture2d",
    "gen_glyph",
    "apply_context",
    "context_count",
    "dump_dataset",
    "load_dataset",
    "concept_anchor",
]

_RING_BASE_RADIUS = 2.0
_RING_SPACING = 1.5
_SLOTS_PER_RING = 10
_JITTER_RADIUS = 0.1

_SHIFT_2D = 0.75

# glyph transforms: (name, parameters); ids 5-6 exist beyond the default
# five-context vocabulary for configs that want intensity contexts.
_GLYPH_CONTEXTS = [
    ("identity", None),
    ("roll", (0, 1)),
    ("roll", (0, -1)),
    ("roll", (1, 1)),
    ("roll", (1, -1)),
    ("intensity", 0.7),
    ("intensity", 1.3),
]

_MIX2D_CONTEXTS = [
    ("identity", None),
    ("translate", (_SHIFT_2D, 0.0)),
    ("translate", (0.0, _SHIFT_2D)),
    ("translate", (-_SHIFT_2D, 0.0)),
    ("translate", (0.0, -_SHIFT_2D)),
    ("scale", 1.5),
]


@dataclass
class ReferenceSet:
    """4-6 samples of a single concept, bound to its concept token."""

    samples: list[np.ndarray]
    concept_token: int
    domain: str

    def __post_init__(self):
        if not (4 <= len(self.samples) <= 6):
            raise ValueError(f"reference set must have 4-6 samples, got {len(self.samples)}")
        shapes = {s.shape for s in self.samples}
        if len(shapes) != 1:
            raise ValueError(f"reference samples must share one shape, got {shapes}")

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return self.samples[0].shape

    def stacked(self) -> np.ndarray:
        return np.stack(self.samples)

    def mean(self) -> np.ndarray:
        return self.stacked().mean(axis=0)


@dataclass(frozen=True)
class ConditionSpec:
    concept_token: int
    context_token: int


def concept_anchor(concept_id: int) -> np.ndarray:
    """Anchor point for a 2-D concept; anchors stay >= 1 apart for all ids."""
    ring, slot = divmod(concept_id, _SLOTS_PER_RING)
    radius = _RING_BASE_RADIUS + _RING_SPACING * ring
    angle = 2.0 * np.pi * slot / _SLOTS_PER_RING
    return np.array([radius * np.cos(angle), radius * np.sin(angle)])


def gen_mixture2d(seed: int, concept_id: int) -> ReferenceSet:
    """Reference points drawn uniformly inside a 0.1-radius disk at the anchor."""
    stream = RngStream(seed, f"mixture2d/{concept_id}")
    n = 4 + int(stream.integers(0, 3))
    anchor = concept_anchor(concept_id)
    samples = []
    for _ in range(n):
        r = _JITTER_RADIUS * np.sqrt(float(stream.uniform()))
        theta = float(stream.uniform(high=2.0 * np.pi))
        samples.append(anchor + r * np.array([np.cos(theta), np.sin(theta)]))
    return ReferenceSet(samples=samples, concept_token=concept_id, domain="mixture2d")


def _glyph_base(concept_id: int, size: int) -> np.ndarray:
    """Deterministic base pattern: shape family, position and extent from the id."""
    img = np.full((size, size), -1.0)
    family = concept_id % 4
    rng = RngStream(concept_id, "glyph_base")
    margin = size // 4
    cy = margin + int(rng.integers(0, size - 2 * margin))
    cx = margin + int(rng.integers(0, size - 2 * margin))
    half = 1 + int(rng.integers(0, max(1, size // 4)))
    yy, xx = np.mgrid[0:size, 0:size]
    if family == 0:  # disk
        img[(yy - cy) ** 2 + (xx - cx) ** 2 <= half**2] = 1.0
    elif family == 1:  # square ring
        box = (np.abs(yy - cy) <= half) & (np.abs(xx - cx) <= half)
        inner = (np.abs(yy - cy) < half) & (np.abs(xx - cx) < half)
        img[box & ~inner] = 1.0
    elif family == 2:  # cross
        img[yy == cy] = 1.0
        img[xx == cx] = 1.0
    else:  # diagonal stripes anchored at the center
        img[(yy + xx - cy - cx) % max(3, half + 2) == 0] = 1.0
    return img


def gen_glyph(seed: int, concept_id: int, size: int = 8) -> ReferenceSet:
    """4-6 jittered variants of one procedural glyph, flattened, values in [-1, 1]."""
    if size not in (8, 16):
        raise ValueError(f"glyph size must be 8 or 16, got {size}")
    stream = RngStream(seed, f"glyph/{concept_id}")
    base = _glyph_base(concept_id, size)
    n = 4 + int(stream.integers(0, 3))
    samples = []
    for _ in range(n):
        dy = int(stream.integers(-1, 2))
        dx = int(stream.integers(-1, 2))
        intensity = 0.8 + 0.2 * float(stream.uniform())
        img = np.roll(np.roll(base, dy, axis=0), dx, axis=1) * intensity
        samples.append(np.clip(img, -1.0, 1.0).reshape(-1))
    return ReferenceSet(samples=samples, concept_token=concept_id, domain="glyph")


def context_count(domain: str) -> int:
    """Number of context transforms defined for a domain."""
    if domain == "mixture2d":
        return len(_MIX2D_CONTEXTS)
    if domain == "glyph":
        return len(_GLYPH_CONTEXTS)
    raise ValueError(f"unknown domain {domain!r}")


def apply_context(sample: np.ndarray, context_token: int, domain: str) -> np.ndarray:
    """Deterministically transform a sample; token 0 is always the identity."""
    sample = np.asarray(sample, dtype=np.float64)
    if domain == "mixture2d":
        if not (0 <= context_token < len(_MIX2D_CONTEXTS)):
            raise ValueError(f"unknown mixture2d context token {context_token}")
        kind, arg = _MIX2D_CONTEXTS[context_token]
        if kind == "identity":
            return sample.copy()
        if kind == "translate":
            return sample + np.asarray(arg)
        return sample * arg  # scale about the origin
    if domain == "glyph":
        if not (0 <= context_token < len(_GLYPH_CONTEXTS)):
            raise ValueError(f"unknown glyph context token {context_token}")
        kind, arg = _GLYPH_CONTEXTS[context_token]
        if kind == "identity":
            return sample.copy()
        side = int(round(np.sqrt(sample.size)))
        img = sample.reshape(side, side)
        if kind == "roll":
            axis, shift = arg
            return np.roll(img, shift, axis=axis).reshape(-1)
        return np.clip(img * arg, -1.0, 1.0).reshape(-1)  # intensity, clamped
    raise ValueError(f"unknown domain {domain!r}")


def dataset_text(refs: ReferenceSet) -> str:
    """Tab-separated text table: a metadata header line, then one sample per row."""
    dim = int(np.prod(refs.sample_shape))
    lines = [f"domain={refs.domain}\tshape={dim}\tconcept_token={refs.concept_token}"]
    for s in refs.samples:
        lines.append("\t".join(repr(float(v)) for v in s.reshape(-1)))
    return "\n".join(lines) + "\n"


def dump_dataset(path, refs: ReferenceSet) -> None:
    with open(path, "w") as f:
        f.write(dataset_text(refs))


def load_dataset(path) -> ReferenceSet:
    """Read a reference set written by :func:`dump_dataset`, exactly."""
    with open(path) as f:
        header = f.readline().strip()
        meta = dict(kv.split("=", 1) for kv in header.split("\t"))
        samples = []
        for line in f:
            if line.strip():
                samples.append(np.array([float(v) for v in line.split("\t")]))
    return ReferenceSet(
        samples=samples,
        concept_token=int(meta["concept_token"]),
        domain=meta["domain"],
    )
