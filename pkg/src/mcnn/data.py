"""Hyperspectral cube I/O, patch extraction, stratified splits,
normalization, and a synthetic-cube generator for desk-scale experiments.

File formats (all little-endian):

HST cube ("HST1"): magic, u32 height, u32 width, u32 bands, u32 label flag,
then height*width*bands f32 values in (row, col, band) order, then, if the
flag is set, height*width u16 labels in (row, col) order.  Label 0 means
unlabeled; classes are 1..C.

Mapping stack ("MAP1"): magic, u32 dims[3], u32 ranks[3], i64 seed,
u32 iterations_used, u32 converged flag, f64 final_core_delta, then the
three factor matrices as f64 row-major blocks.  Factors are stored at full
precision so orthonormality survives a round-trip.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .mapping import MappingStack

TRAIN, VAL, TEST = 0, 1, 2
SPLIT_NAMES = {TRAIN: "train", VAL: "val", TEST: "test"}

_CUBE_MAGIC = b"HST1"
_MAP_MAGIC = b"MAP1"


class FormatError(RuntimeError):
    """Malformed container file; carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class DataError(RuntimeError):
    """Well-formed file with unusable contents (non-finite values, ...)."""


@dataclass
class HsiCube:
    values: np.ndarray  # (height, width, bands) float64
    labels: np.ndarray  # (height, width) int32, 0 = unlabeled
    class_names: Optional[list[str]] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int32)
        if self.values.ndim != 3:
            raise ValueError("cube values must be (height, width, bands)")
        if self.labels.shape != self.values.shape[:2]:
            raise ValueError("label grid must match spatial dims")
        if self.labels.size and self.labels.min() < 0:
            raise ValueError("labels must be >= 0")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def bands(self) -> int:
        return self.values.shape[2]

    @property
    def class_count(self) -> int:
        return int(self.labels.max())


@dataclass
class LabeledPatchSet:
    patches: np.ndarray  # (n, S, S, bands) float64
    labels: np.ndarray  # (n,) int64, 0-based class indices
    split: np.ndarray  # (n,) uint8 in {TRAIN, VAL, TEST}
    patch_size: int
    seed: int = 0
    centers: np.ndarray = field(default=None)  # (n, 2) source pixel coords
    split_warnings: list[str] = field(default_factory=list)

    def indices(self, tag: int) -> np.ndarray:
        return np.flatnonzero(self.split == tag)

    def subset_patches(self, tag: int) -> np.ndarray:
        return self.patches[self.indices(tag)]


def save_cube(cube: HsiCube, path) -> None:
    """Write a cube in the HST container format (f32 values, u16 labels).

    The label grid is always written (flag = 1); the flag exists so that
    label-less cubes from other producers can still be read.
    """
    payload = [
        _CUBE_MAGIC,
        struct.pack("<4I", cube.height, cube.width, cube.bands, 1),
        np.ascontiguousarray(cube.values, dtype="<f4").tobytes(),
        np.ascontiguousarray(cube.labels, dtype="<u2").tobytes(),
    ]
    with open(path, "wb") as fh:
        for part in payload:
            fh.write(part)


def load_cube(path) -> HsiCube:
    """Read and validate an HST cube file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != _CUBE_MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}, expected {_CUBE_MAGIC!r}", 0)
    if len(raw) < 20:
        raise FormatError("truncated header", len(raw))
    height, width, bands, flag = struct.unpack_from("<4I", raw, 4)
    if min(height, width, bands) < 1:
        raise FormatError(f"non-positive dims ({height}, {width}, {bands})", 4)
    if flag not in (0, 1):
        raise FormatError(f"label flag must be 0 or 1, got {flag}", 16)
    n_values = height * width * bands
    offset = 20
    end_values = offset + 4 * n_values
    if len(raw) < end_values:
        raise FormatError("truncated value block", len(raw))
    values = np.frombuffer(raw, dtype="<f4", count=n_values, offset=offset)
    values = values.astype(np.float64).reshape(height, width, bands)
    if not np.isfinite(values).all():
        raise DataError("cube contains non-finite values")
    if flag:
        end_labels = end_values + 2 * height * width
        if len(raw) < end_labels:
            raise FormatError("truncated label block", len(raw))
        labels = np.frombuffer(
            raw, dtype="<u2", count=height * width, offset=end_values
        ).astype(np.int32).reshape(height, width)
    else:
        labels = np.zeros((height, width), dtype=np.int32)
    return HsiCube(values=values, labels=labels)


def mapping_to_bytes(stack: MappingStack) -> bytes:
    """Encode a mapping stack as a MAP1 block."""
    parts = [
        _MAP_MAGIC,
        struct.pack(
            "<3I3IqIId",
            *stack.input_dims,
            *stack.ranks,
            int(stack.seed),
            int(stack.iterations_used),
            1 if stack.converged else 0,
            float(stack.final_core_delta),
        ),
    ]
    for u in (stack.u1, stack.u2, stack.u3):
        parts.append(np.ascontiguousarray(u, dtype="<f8").tobytes())
    return b"".join(parts)


def mapping_from_bytes(raw: bytes) -> MappingStack:
    if len(raw) < 4 or raw[:4] != _MAP_MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}, expected {_MAP_MAGIC!r}", 0)
    header_fmt = "<3I3IqIId"
    header_size = struct.calcsize(header_fmt)
    if len(raw) < 4 + header_size:
        raise FormatError("truncated header", len(raw))
    fields = struct.unpack_from(header_fmt, raw, 4)
    dims = tuple(int(d) for d in fields[0:3])
    ranks = tuple(int(r) for r in fields[3:6])
    seed, iterations, converged_flag = fields[6], fields[7], fields[8]
    delta = fields[9]
    offset = 4 + header_size
    factors = []
    for d, r in zip(dims, ranks):
        end = offset + 8 * d * r
        if len(raw) < end:
            raise FormatError("truncated factor block", len(raw))
        u = np.frombuffer(raw, dtype="<f8", count=d * r, offset=offset)
        factors.append(u.reshape(d, r).copy())
        offset = end
    return MappingStack(
        u1=factors[0],
        u2=factors[1],
        u3=factors[2],
        input_dims=dims,
        ranks=ranks,
        seed=int(seed),
        iterations_used=int(iterations),
        final_core_delta=float(delta),
        converged=bool(converged_flag),
    )


def save_mapping(stack: MappingStack, path) -> None:
    """Write a fitted mapping stack in the MAP1 container format."""
    with open(path, "wb") as fh:
        fh.write(mapping_to_bytes(stack))


def load_mapping(path) -> MappingStack:
    with open(path, "rb") as fh:
        raw = fh.read()
    return mapping_from_bytes(raw)


def mirror_pad(values: np.ndarray, half: int) -> np.ndarray:
    """Reflect the spatial borders (edge pixel not duplicated)."""
    return np.pad(values, ((half, half), (half, half), (0, 0)), mode="reflect")


def extract_patches(cube: HsiCube, patch_size: int, mirror_border: bool = True) -> LabeledPatchSet:
    """One patch per labeled pixel, centered on it, label from the center.

    With mirroring the cube borders are reflected so every labeled pixel
    yields a patch; otherwise pixels whose window leaves the cube are
    skipped.  Patch labels are 0-based (cube label minus one).
    """
    patch_size = int(patch_size)
    if patch_size % 2 == 0:
        raise ValueError("patch_size must be odd (patch centered on a pixel)")
    half = patch_size // 2
    rows, cols = np.nonzero(cube.labels)
    if not mirror_border:
        keep = (
            (rows >= half)
            & (rows < cube.height - half)
            & (cols >= half)
            & (cols < cube.width - half)
        )
        rows, cols = rows[keep], cols[keep]
    source = mirror_pad(cube.values, half) if mirror_border else cube.values
    shift = half if mirror_border else 0
    n = rows.size
    patches = np.empty((n, patch_size, patch_size, cube.bands))
    for k in range(n):
        r = rows[k] + shift
        c = cols[k] + shift
        patches[k] = source[r - half : r + half + 1, c - half : c + half + 1, :]
    labels = cube.labels[rows, cols].astype(np.int64) - 1
    return LabeledPatchSet(
        patches=patches,
        labels=labels,
        split=np.full(n, TEST, dtype=np.uint8),
        patch_size=patch_size,
        centers=np.stack([rows, cols], axis=1),
    )


def split_labels(
    labels: np.ndarray,
    fractions: tuple[float, float, float],
    seed: int,
    stratified: bool = True,
) -> tuple[np.ndarray, list[str]]:
    """Assign TRAIN/VAL/TEST tags; returns (tags, warnings).

    Counts per split follow the fractions to within one sample per class
    (rounded cut points on a seeded shuffle).  With stratification each
    class is partitioned independently.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    tags = np.full(labels.shape[0], TEST, dtype=np.uint8)
    notes: list[str] = []

    def assign(indices: np.ndarray) -> None:
        n = indices.size
        shuffled = indices[rng.permutation(n)]
        cuts = np.floor(np.cumsum(fractions) * n + 0.5).astype(int)
        tags[shuffled[: cuts[0]]] = TRAIN
        tags[shuffled[cuts[0] : cuts[1]]] = VAL
        tags[shuffled[cuts[1] :]] = TEST

    if stratified:
        for cls in np.unique(labels):
            idx = np.flatnonzero(labels == cls)
            if idx.size < 3:
                notes.append(
                    f"class {cls} has only {idx.size} sample(s); "
                    "it may miss a split"
                )
                warnings.warn(notes[-1])
            assign(idx)
    else:
        assign(np.arange(labels.shape[0]))
    return tags, notes


def split(
    patch_set: LabeledPatchSet,
    fractions: tuple[float, float, float],
    seed: int,
    stratified: bool = True,
) -> LabeledPatchSet:
    """Tag every patch with exactly one of train/val/test."""
    tags, notes = split_labels(patch_set.labels, fractions, seed, stratified)
    patch_set.split = tags
    patch_set.seed = int(seed)
    patch_set.split_warnings = notes
    return patch_set


@dataclass
class NormStats:
    mode: str  # "standardize" | "minmax"
    means: Optional[np.ndarray] = None  # per band
    stds: Optional[np.ndarray] = None
    minimum: Optional[float] = None
    maximum: Optional[float] = None

    def to_dict(self) -> dict:
        d = {"mode": self.mode}
        if self.means is not None:
            d["means"] = [float(x) for x in self.means]
            d["stds"] = [float(x) for x in self.stds]
        if self.minimum is not None:
            d["minimum"] = float(self.minimum)
            d["maximum"] = float(self.maximum)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(
            mode=d["mode"],
            means=np.asarray(d["means"]) if "means" in d else None,
            stds=np.asarray(d["stds"]) if "stds" in d else None,
            minimum=d.get("minimum"),
            maximum=d.get("maximum"),
        )


def compute_norm_stats(
    cube: HsiCube, mode: str = "standardize", pixel_mask: Optional[np.ndarray] = None
) -> NormStats:
    """Per-band mean/std (or global min/max) from the masked pixels.

    `pixel_mask` selects the pixels the statistics come from (training
    pixels); all pixels are used when it is None.  Zero-variance bands are
    flagged and later mapped to zero.
    """
    if mode not in ("standardize", "minmax"):
        raise ValueError(f"unknown normalization mode {mode!r}")
    pixels = cube.values.reshape(-1, cube.bands)
    if pixel_mask is not None:
        mask = np.asarray(pixel_mask, dtype=bool)
        if mask.shape != (cube.height, cube.width):
            raise ValueError("pixel_mask must match cube spatial dims")
        pixels = cube.values[mask]
    if pixels.shape[0] == 0:
        raise ValueError("no pixels selected for normalization statistics")
    if mode == "minmax":
        return NormStats(
            mode=mode, minimum=float(pixels.min()), maximum=float(pixels.max())
        )
    means = pixels.mean(axis=0)
    stds = pixels.std(axis=0)
    # A constant band leaves rounding residue in its std; clamp it to an
    # exact zero so such bands are consistently mapped to 0.
    degenerate = stds <= 1e-12 * np.maximum(np.abs(means), 1.0)
    stds = np.where(degenerate, 0.0, stds)
    if degenerate.any():
        warnings.warn(
            f"bands {np.flatnonzero(degenerate).tolist()} have zero variance; "
            "mapped to 0"
        )
    return NormStats(mode=mode, means=means, stds=stds)


def apply_norm(cube: HsiCube, stats: NormStats) -> HsiCube:
    """Return a new cube normalized with previously computed statistics."""
    if stats.mode == "minmax":
        span = stats.maximum - stats.minimum
        span = span if span > 0 else 1.0
        values = (cube.values - stats.minimum) / span
    else:
        safe = np.where(stats.stds > 0, stats.stds, 1.0)
        values = (cube.values - stats.means) / safe
        values = np.where(stats.stds > 0, values, 0.0)
    return HsiCube(values=values, labels=cube.labels.copy(), class_names=cube.class_names)


def normalize(
    cube: HsiCube, mode: str = "standardize", pixel_mask: Optional[np.ndarray] = None
) -> tuple[HsiCube, NormStats]:
    """Compute statistics and apply them; returns (cube, stats)."""
    stats = compute_norm_stats(cube, mode, pixel_mask)
    return apply_norm(cube, stats), stats


@dataclass
class SynthSpec:
    classes: int = 4
    height: int = 40
    width: int = 40
    bands: int = 32
    blob_size: int = 10  # spatial tile edge, one class per tile
    signature_distance: float = 3.0  # minimum pairwise distance of signatures
    signature_alignment: float = 0.9  # class-structure fraction on the shared ray
    baseline_scale: float = 6.0  # common spectral offset along the shared profile
    noise_sigma: float = 1.0

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("need at least 2 classes")
        if min(self.height, self.width, self.bands, self.blob_size) < 1:
            raise ValueError("dims and blob_size must be positive")
        if not 0.0 <= self.signature_alignment <= 1.0:
            raise ValueError("signature_alignment must lie in [0, 1]")


def _class_signatures(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Class spectra on a shared spectral profile, like real radiance data:
    a large common baseline along one random direction, class levels spread
    along that same direction, plus a small per-class off-ray component.
    The result is rescaled so the minimum pairwise distance equals
    `spec.signature_distance` exactly."""
    d = rng.standard_normal(spec.bands)
    d /= np.linalg.norm(d)
    levels = np.arange(spec.classes, dtype=np.float64)
    levels -= levels.mean()
    jitter = rng.standard_normal((spec.classes, spec.bands))
    jitter -= np.outer(jitter @ d, d)  # keep the off-ray part orthogonal
    norms = np.linalg.norm(jitter, axis=1, keepdims=True)
    jitter /= np.where(norms > 0, norms, 1.0)
    structure = (
        spec.signature_alignment * np.outer(levels, d)
        + (1.0 - spec.signature_alignment) * jitter
    )
    dmin = min(
        float(np.linalg.norm(structure[i] - structure[j]))
        for i in range(spec.classes)
        for j in range(i + 1, spec.classes)
    )
    structure *= spec.signature_distance / dmin
    return spec.baseline_scale * d + structure


def synth_cube(spec: SynthSpec, seed: int) -> HsiCube:
    """Deterministic cube of rectangular class blobs.

    Each pixel is its class signature plus seeded Gaussian noise; every
    pixel is labeled.
    """
    sig_seed, layout_seed, noise_seed = np.random.SeedSequence(int(seed)).spawn(3)
    sig_rng = np.random.default_rng(sig_seed)
    layout_rng = np.random.default_rng(layout_seed)
    noise_rng = np.random.default_rng(noise_seed)

    signatures = _class_signatures(spec, sig_rng)

    tiles_r = -(-spec.height // spec.blob_size)
    tiles_c = -(-spec.width // spec.blob_size)
    n_tiles = tiles_r * tiles_c
    # Every class appears at least once; remaining tiles drawn uniformly.
    tile_classes = np.concatenate(
        [
            layout_rng.permutation(spec.classes),
            layout_rng.integers(0, spec.classes, size=max(n_tiles - spec.classes, 0)),
        ]
    )[:n_tiles].reshape(tiles_r, tiles_c)
    class_grid = np.repeat(
        np.repeat(tile_classes, spec.blob_size, axis=0), spec.blob_size, axis=1
    )[: spec.height, : spec.width]

    values = signatures[class_grid] + spec.noise_sigma * noise_rng.standard_normal(
        (spec.height, spec.width, spec.bands)
    )
    labels = (class_grid + 1).astype(np.int32)
    names = [f"class_{i + 1}" for i in range(spec.classes)]
    return HsiCube(values=values, labels=labels, class_names=names)
