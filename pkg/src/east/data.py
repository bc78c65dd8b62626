"""Synthetic multi-label clips with teacher embeddings, splits, and the EAST container."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptySplit, FormatError, InvalidConfig, VersionMismatch

CONTAINER_MAGIC = b"EAST"
CONTAINER_VERSION = 1
LIMIT_FRACTIONS = (0.25, 0.5, 0.75, 1.0)


@dataclass
class LabeledClip:
    clip_id: int
    frames: np.ndarray
    targets: np.ndarray
    mask: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, LabeledClip):
            return NotImplemented
        return (self.clip_id == other.clip_id
                and self.frames.shape == other.frames.shape
                and np.array_equal(self.frames, other.frames)
                and np.array_equal(self.targets, other.targets)
                and np.array_equal(self.mask, other.mask))


@dataclass(frozen=True)
class SynthConfig:
    n_clips: int = 2800
    n_classes: int = 10
    latent_dim: int = 8
    frames: int = 8
    channels: int = 32
    teacher_dim: int = 16
    teacher_frames: int = 2
    teacher_noise: float = 0.0
    frame_noise: float = 0.3
    nuisance_dim: int = 0
    nuisance_scale: float = 0.0
    observe_prob: float = 0.9
    seed: int = 0

    def __post_init__(self):
        ints = ("n_clips", "n_classes", "latent_dim", "frames", "channels", "teacher_dim", "teacher_frames")
        for name in ints:
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1")
        if self.nuisance_dim < 0:
            raise InvalidConfig("nuisance_dim must be >= 0")
        if self.teacher_noise < 0 or self.frame_noise < 0 or self.nuisance_scale < 0:
            raise InvalidConfig("noise levels must be non-negative")
        if not 0.0 < self.observe_prob <= 1.0:
            raise InvalidConfig("observe_prob must lie in (0, 1]")

    @classmethod
    def benchmark(cls, **overrides) -> "SynthConfig":
        """Data-limited preset: a strong label-irrelevant nuisance the teacher does not carry."""
        params = dict(latent_dim=16, channels=64, teacher_dim=16, nuisance_dim=32, nuisance_scale=3.0)
        params.update(overrides)
        return cls(**params)


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.7
    val: float = 0.15
    test: float = 0.15
    limit_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train, self.val, self.test)
        if any(f < 0 for f in fracs) or abs(sum(fracs) - 1.0) > 1e-9:
            raise InvalidConfig(f"split fractions must be non-negative and sum to 1, got {fracs}")
        if not 0.0 < self.limit_fraction <= 1.0:
            raise InvalidConfig("limit_fraction must lie in (0, 1]")


def _orthonormal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Random rows x cols matrix with orthonormal rows (or columns when rows > cols)."""
    q, r = np.linalg.qr(rng.standard_normal((max(rows, cols), min(rows, cols))))
    q = q * np.sign(np.diag(r))
    return q.T if rows <= cols else q


def _f32(a: np.ndarray) -> np.ndarray:
    # stored as float32 on disk; keep memory and file copies identical
    return a.astype(np.float32).astype(np.float64)


def generate(config: SynthConfig):
    """Draw clips and teacher embeddings from a shared Gaussian latent.

    Returns ``(clips, teacher)`` where ``teacher[i]`` belongs to ``clips[i]``.
    Labels threshold the latent along fixed random directions; inputs are a
    noisy random linear view of it; the teacher is an isometric view plus
    ``teacher_noise`` (0 gives a perfect teacher).
    """
    c = config
    rng = np.random.default_rng(c.seed)
    directions = rng.standard_normal((c.n_classes, c.latent_dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    mixing = rng.standard_normal((c.channels, c.latent_dim)) / math.sqrt(c.latent_dim)
    teacher_map = _orthonormal(rng, c.teacher_dim, c.latent_dim)

    latent = rng.standard_normal((c.n_clips, c.latent_dim))
    targets = (latent @ directions.T > 0).astype(np.uint8)
    frame_noise = rng.standard_normal((c.n_clips, c.frames, c.channels))
    frames = _f32((latent @ mixing.T)[:, None, :] + c.frame_noise * frame_noise)
    teacher_noise = rng.standard_normal((c.n_clips, c.teacher_frames, c.teacher_dim))
    teacher = _f32((latent @ teacher_map.T)[:, None, :] + c.teacher_noise * teacher_noise)
    mask = (rng.random((c.n_clips, c.n_classes)) < c.observe_prob).astype(np.uint8)
    if c.nuisance_dim:
        # label-irrelevant per-clip factor seen by the input but not by the teacher
        nuisance_mixing = rng.standard_normal((c.channels, c.nuisance_dim)) / math.sqrt(c.nuisance_dim)
        nuisance = rng.standard_normal((c.n_clips, c.nuisance_dim))
        frames = _f32(frames + c.nuisance_scale * (nuisance @ nuisance_mixing.T)[:, None, :])

    clips = [LabeledClip(i, frames[i], targets[i], mask[i]) for i in range(c.n_clips)]
    return clips, [teacher[i] for i in range(c.n_clips)]


def split(clips: Sequence, spec: SplitSpec):
    """Seeded shuffle into train/val/test, then keep a prefix of train.

    Prefixes make the limited training sets nested for a fixed seed.
    """
    n = len(clips)
    order = np.random.default_rng(spec.seed).permutation(n)
    n_train = math.floor(spec.train * n + 1e-9)
    n_val = math.floor(spec.val * n + 1e-9)
    n_limited = math.floor(spec.limit_fraction * n_train + 1e-9)
    parts = (order[:n_limited], order[n_train:n_train + n_val], order[n_train + n_val:])
    for name, idx in zip(("train", "val", "test"), parts):
        if len(idx) == 0:
            raise EmptySplit(f"{name} split would be empty for {n} clips")
    return tuple([clips[i] for i in idx] for idx in parts)


# -- container ------------------------------------------------------------

def container_bytes(clips: Sequence[LabeledClip], teacher: Sequence[np.ndarray]) -> bytes:
    if len(clips) != len(teacher):
        raise InvalidConfig("clips and teacher embeddings differ in count")
    if not clips:
        k = c_in = c_t = 0
    else:
        k = len(clips[0].targets)
        c_in = clips[0].frames.shape[1]
        c_t = np.asarray(teacher[0]).shape[1]
    out = [CONTAINER_MAGIC, struct.pack("<IIIII", CONTAINER_VERSION, len(clips), k, c_in, c_t)]
    for clip, emb in zip(clips, teacher):
        emb = np.asarray(emb)
        if clip.frames.shape[1] != c_in or len(clip.targets) != k or emb.shape[1] != c_t:
            raise InvalidConfig(f"clip {clip.clip_id} does not match the dataset shape")
        out.append(struct.pack("<II", clip.clip_id, clip.frames.shape[0]))
        out.append(np.ascontiguousarray(clip.frames, dtype="<f4").tobytes())
        out.append(np.asarray(clip.targets, dtype=np.uint8).tobytes())
        out.append(np.asarray(clip.mask, dtype=np.uint8).tobytes())
        out.append(struct.pack("<I", emb.shape[0]))
        out.append(np.ascontiguousarray(emb, dtype="<f4").tobytes())
    return b"".join(out)


def write_container(path, clips, teacher) -> None:
    Path(path).write_bytes(container_bytes(clips, teacher))


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated {what}: need {n} bytes, {len(self.data) - self.pos} left", self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def floats(self, rows: int, cols: int, what: str) -> np.ndarray:
        start = self.pos
        arr = np.frombuffer(self.take(4 * rows * cols, what), dtype="<f4").reshape(rows, cols)
        if not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.isfinite(arr.ravel()))[0])
            raise FormatError(f"non-finite value in {what}", start + 4 * bad)
        return arr.astype(np.float64)

    def flags(self, k: int, what: str) -> np.ndarray:
        start = self.pos
        arr = np.frombuffer(self.take(k, what), dtype=np.uint8).copy()
        if np.any(arr > 1):
            raise FormatError(f"{what} byte is not 0 or 1", start + int(np.flatnonzero(arr > 1)[0]))
        return arr


def container_from_bytes(data: bytes):
    """Parse an EAST container into ``(clips, teacher)``."""
    cur = _Cursor(data)
    if cur.take(4, "magic") != CONTAINER_MAGIC:
        raise FormatError("bad magic, expected b'EAST'", 0)
    version = cur.u32("version")
    if version != CONTAINER_VERSION:
        raise VersionMismatch(f"unsupported container version {version}", 4)
    n_clips, k, c_in, c_t = (cur.u32(f) for f in ("n_clips", "K", "C_in", "C_t"))
    clips, teacher = [], []
    seen = set()
    for _ in range(n_clips):
        id_pos = cur.pos
        clip_id = cur.u32("clip_id")
        if clip_id in seen:
            raise FormatError(f"duplicate clip_id {clip_id}", id_pos)
        seen.add(clip_id)
        t = cur.u32("frame count")
        frames = cur.floats(t, c_in, "frames")
        targets = cur.flags(k, "targets")
        mask = cur.flags(k, "mask")
        t_t = cur.u32("teacher frame count")
        teacher.append(cur.floats(t_t, c_t, "teacher frames"))
        clips.append(LabeledClip(clip_id, frames, targets, mask))
    if cur.pos != len(data):
        raise FormatError(f"{len(data) - cur.pos} trailing bytes", cur.pos)
    return clips, teacher


def read_container(path):
    return container_from_bytes(Path(path).read_bytes())
