"""Stage-tapped student networks, the logistic-regression teacher, checkpoints."""
from __future__ import annotations

import io
import math
import struct
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Tensor, mean_pool_time, no_grad
from .errors import DimensionMismatch, EmptyDataset, FormatError, VersionMismatch
from .losses import LabelBatch, masked_bce

CHECKPOINT_MAGIC = b"EASM"
CHECKPOINT_VERSION = 1
KIND_STUDENT = 0
KIND_TEACHER_LR = 1


@dataclass(frozen=True)
class StageSpec:
    in_channels: int
    out_channels: int
    temporal_pool: int = 1

    def out_frames(self, frames: int) -> int:
        return math.ceil(frames / self.temporal_pool)


class StudentNet:
    """Framewise linear + ReLU + temporal mean-pool stages, then a linear head.

    Every stage output is returned as a tap for feature regularization. The
    head reads the time average of the last tap.
    """

    def __init__(self, stages: Sequence[StageSpec], n_classes: int, seed: int | np.random.Generator = 0):
        self.stages = list(stages)
        for a, b in zip(self.stages, self.stages[1:]):
            if a.out_channels != b.in_channels:
                raise DimensionMismatch(f"stage widths do not chain: {a} -> {b}")
        if not self.stages:
            raise DimensionMismatch("a student needs at least one stage")
        self.n_classes = n_classes
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for s in self.stages:
            w, b = _fan_in_init(rng, s.in_channels, s.out_channels)
            self.weights.append(w)
            self.biases.append(b)
        self.head_w, self.head_b = _fan_in_init(rng, self.stages[-1].out_channels, n_classes)

    @classmethod
    def from_widths(cls, in_channels: int, widths: Sequence[int], pools: Sequence[int], n_classes: int,
                    seed=0) -> "StudentNet":
        chans = [in_channels, *widths]
        stages = [StageSpec(chans[i], chans[i + 1], p) for i, p in enumerate(pools)]
        return cls(stages, n_classes, seed)

    @property
    def in_channels(self) -> int:
        return self.stages[0].in_channels

    def parameters(self) -> list[Tensor]:
        """All trainable tensors in declaration order."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params += [w, b]
        return params + [self.head_w, self.head_b]

    def forward(self, x):
        """Return ``(logits, taps)`` for one ``T x C_in`` clip or an ``n x T x C_in`` batch."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.shape[-1] != self.in_channels:
            raise DimensionMismatch(f"input has {x.shape[-1]} channels, net expects {self.in_channels}")
        single = x.ndim == 2
        if single:
            x = x.reshape(1, *x.shape)
        taps = []
        h = x
        for spec, w, b in zip(self.stages, self.weights, self.biases):
            h = mean_pool_time((h @ w + b).relu(), spec.temporal_pool)
            taps.append(h)
        logits = h.mean(axis=1) @ self.head_w + self.head_b
        if single:
            return logits.reshape(-1), [t.reshape(*t.shape[1:]) for t in taps]
        return logits, taps

    def predict_logits(self, x) -> np.ndarray:
        with no_grad():
            return self.forward(x)[0].data

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.parameters()])

    def set_flat(self, flat: np.ndarray) -> None:
        pos = 0
        for p in self.parameters():
            size = p.data.size
            p.data = np.array(flat[pos:pos + size], dtype=np.float64).reshape(p.shape)
            pos += size


def student_forward(net: StudentNet, x):
    return net.forward(x)


def _fan_in_init(rng: np.random.Generator, fan_in: int, fan_out: int):
    bound = math.sqrt(1.0 / fan_in)
    w = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)
    b = Tensor(rng.uniform(-bound, bound, size=fan_out), requires_grad=True)
    return w, b


def param_count(net: StudentNet | Sequence[StageSpec], include_head: bool = False) -> int:
    """Scalar parameters of the backbone stages, plus the head if requested.

    Also accepts a bare list of stages, which has no head.
    """
    if not isinstance(net, StudentNet):
        if include_head:
            raise ValueError("a stage list has no classification head")
        return stage_param_count(net)
    total = stage_param_count(net.stages)
    if include_head:
        total += net.head_w.data.size + net.head_b.data.size
    return total


def stage_param_count(stages: Sequence[StageSpec]) -> int:
    return sum(s.in_channels * s.out_channels + s.out_channels for s in stages)


def throughput_bench(net: StudentNet, input_shape=(1000, 128), seconds: float = 1.0, seed: int = 0) -> float:
    """Forward passes per second on one synthetic ``T x C`` input."""
    if seconds <= 0:
        raise ValueError("seconds must be positive")
    x = np.random.default_rng(seed).standard_normal(input_shape)
    net.predict_logits(x)
    count = 0
    start = time.perf_counter()
    elapsed = 0.0
    while elapsed < seconds:
        net.predict_logits(x)
        count += 1
        elapsed = time.perf_counter() - start
    return count / elapsed


class TeacherLR:
    """Logistic regression on time-averaged embeddings."""

    def __init__(self, weights, bias):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise DimensionMismatch("teacher weights must be C_t x K with a K bias")

    def predict_logits(self, embedding) -> np.ndarray:
        """Logits for one ``T_t x C_t`` sequence or an ``n x T_t x C_t`` stack."""
        e = np.asarray(embedding, dtype=np.float64)
        if e.shape[-1] != self.weights.shape[0]:
            raise DimensionMismatch(f"embedding has {e.shape[-1]} channels, teacher expects {self.weights.shape[0]}")
        return e.mean(axis=-2) @ self.weights + self.bias


def teacher_predict_logits(t: TeacherLR, e) -> np.ndarray:
    return t.predict_logits(e)


def teacher_fit(embeddings, labels: LabelBatch, epochs: int = 500, lr: float = 0.1, seed: int = 0) -> TeacherLR:
    """Full-batch gradient descent on masked BCE, starting from zeros.

    ``embeddings`` is a list of ``T_t x C_t`` arrays (lengths may differ) or
    an ``n x T_t x C_t`` array. ``seed`` is accepted for interface symmetry;
    zero initialization makes the fit deterministic regardless.
    """
    if len(embeddings) == 0:
        raise EmptyDataset("cannot fit a teacher on zero clips")
    feats = np.stack([np.asarray(e, dtype=np.float64).mean(axis=0) for e in embeddings])
    if feats.shape[0] != labels.targets.shape[0]:
        raise DimensionMismatch("embeddings and labels differ in count")
    k = labels.targets.shape[1]
    w = Tensor(np.zeros((feats.shape[1], k)), requires_grad=True)
    b = Tensor(np.zeros(k), requires_grad=True)
    x = Tensor(feats)
    for _ in range(epochs):
        w.grad = b.grad = None
        loss = masked_bce(x @ w + b, labels)
        loss.backward()
        w.data = w.data - lr * w.grad
        b.data = b.data - lr * b.grad
    return TeacherLR(w.data.copy(), b.data.copy())


# -- checkpoints ----------------------------------------------------------
# Layout (little-endian): magic "EASM", version u32, kind u32, descriptor,
# then every parameter as f64 in declaration order.
#   student descriptor: C_in u32, n_stages u32, (in u32, out u32, pool u32) * n_stages, K u32
#   teacher descriptor: C_t u32, K u32

def checkpoint_bytes(model) -> bytes:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    if isinstance(model, StudentNet):
        buf.write(struct.pack("<III", CHECKPOINT_VERSION, KIND_STUDENT, model.in_channels))
        buf.write(struct.pack("<I", len(model.stages)))
        for s in model.stages:
            buf.write(struct.pack("<III", s.in_channels, s.out_channels, s.temporal_pool))
        buf.write(struct.pack("<I", model.n_classes))
        params = [p.data for p in model.parameters()]
    elif isinstance(model, TeacherLR):
        buf.write(struct.pack("<IIII", CHECKPOINT_VERSION, KIND_TEACHER_LR, *model.weights.shape))
        params = [model.weights, model.bias]
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    for p in params:
        buf.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return buf.getvalue()


def save_checkpoint(model, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated while reading {what}", self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def f64(self, count: int, what: str) -> np.ndarray:
        return np.frombuffer(self.take(8 * count, what), dtype="<f8").astype(np.float64)


def checkpoint_from_bytes(data: bytes):
    r = _Reader(data)
    if r.take(4, "magic") != CHECKPOINT_MAGIC:
        raise FormatError("not an EASM checkpoint", 0)
    version = r.u32("version")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"unsupported checkpoint version {version}", 4)
    kind = r.u32("kind")
    if kind == KIND_STUDENT:
        c_in = r.u32("input channels")
        n_stages = r.u32("stage count")
        stages = [StageSpec(r.u32("stage in"), r.u32("stage out"), r.u32("stage pool")) for _ in range(n_stages)]
        if not stages or stages[0].in_channels != c_in:
            raise FormatError("stage descriptor disagrees with input channels", r.pos)
        k = r.u32("class count")
        total = stage_param_count(stages) + stages[-1].out_channels * k + k
        flat = r.f64(total, "parameters")
        if k == 0 or any(s.in_channels == 0 or s.out_channels == 0 or s.temporal_pool == 0 for s in stages):
            raise FormatError("zero-sized dimension in descriptor", 12)
        net = StudentNet(stages, k, seed=0)
        net.set_flat(flat)
        model = net
    elif kind == KIND_TEACHER_LR:
        c_t, k = r.u32("teacher channels"), r.u32("class count")
        w = r.f64(c_t * k, "teacher weights").reshape(c_t, k)
        model = TeacherLR(w, r.f64(k, "teacher bias"))
    else:
        raise FormatError(f"unknown model kind {kind}", 8)
    if r.pos != len(data):
        raise FormatError("trailing bytes after parameters", r.pos)
    return model


def load_checkpoint(path):
    return checkpoint_from_bytes(Path(path).read_bytes())
