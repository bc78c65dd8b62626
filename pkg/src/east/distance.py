"""Feature alignment and dimension-independent distance measures.

Batched tensors are laid out ``(n, T, C)``: batch, frames, channels.
Both measures compare the pairwise geometry of the student rows with that
of the teacher rows frame by frame, then average over frames.
"""
from __future__ import annotations

import enum
import warnings
from typing import Sequence

import numpy as np

from .autodiff import Tensor, as_tensor
from .errors import (BatchTooSmall, DegenerateBatch, DimensionMismatch, EmptySequence,
                     RaggedBatch, ZeroVector)

ZERO_NORM = 1e-12
DEGENERATE_V2 = 1e-14
# smoothing of the distance derivative at coincident rows
DIST_EPS = 1e-12


class MeasureKind(enum.Enum):
    COS_DIFF = "cos-diff"
    DISTANCE_CORRELATION = "dcor"


def align_indices(t_short: int, t_long: int) -> np.ndarray:
    """Nearest-neighbour frame indices stretching ``t_short`` frames to ``t_long``."""
    return (np.arange(t_long) * t_short) // t_long


def align_time(student, teacher):
    """Repeat frames of the shorter sequence so both have max(T_s, T_t) frames.

    Works on single clips (``T x C``) or batches (``n x T x C``); the time
    axis is the second to last one. Student inputs may be tensors.
    """
    ts, tt = student.shape[-2], teacher.shape[-2]
    if ts == 0 or tt == 0:
        raise EmptySequence("cannot align an empty frame sequence")
    if ts < tt:
        idx = align_indices(ts, tt)
        if isinstance(student, Tensor):
            student = student.take(idx, axis=student.ndim - 2)
        else:
            student = np.take(student, idx, axis=-2)
    elif tt < ts:
        teacher = np.take(np.asarray(teacher), align_indices(tt, ts), axis=-2)
    return student, teacher


def cosine_distance(u, w) -> float:
    u = np.asarray(u, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    nu, nw = np.linalg.norm(u), np.linalg.norm(w)
    if nu < ZERO_NORM or nw < ZERO_NORM:
        raise ZeroVector("cosine distance of a zero vector is undefined")
    return float(1.0 - (u @ w) / (nu * nw))


def _check_batch(student_shape, teacher_shape):
    if student_shape[0] != teacher_shape[0] or student_shape[1] != teacher_shape[1]:
        raise DimensionMismatch(
            f"student {student_shape} and teacher {teacher_shape} are not aligned")
    if student_shape[0] < 2:
        raise BatchTooSmall("distance measures need at least two samples")


def _cosine_distance_matrix(x: Tensor, skip_zero: bool = False):
    """(T, n, C) -> ((T, n, n) pairwise cosine distances, (T, n) mask of usable rows).

    With ``skip_zero`` rows of (near) zero norm are flagged unusable instead
    of raising; their entries are finite but meaningless and must be masked.
    """
    sq = (x * x).sum(axis=-1, keepdims=True)
    valid = sq.data[..., 0] >= ZERO_NORM ** 2
    if not skip_zero and not valid.all():
        raise ZeroVector("a frame vector has zero norm")
    # unusable rows get +1 under the root so the norm and its derivative stay finite
    norms = (sq + (~valid[..., None]).astype(np.float64)).sqrt()
    unit = x / norms
    return 1.0 - unit @ unit.swapaxes(-1, -2), valid


def cos_diff_loss(student, teacher, skip_zero: bool = False) -> Tensor:
    """Mean |d_cos(l_i, l_j) - d_cos(v_i, v_j)| over pairs i<j, averaged over frames.

    ``student`` is an ``(n, T, C_s)`` tensor, ``teacher`` an ``(n, T, C_t)``
    array already aligned in time. A zero student frame raises
    :class:`ZeroVector`, unless ``skip_zero`` is set: then pairs touching it
    are left out, and frames without any usable pair are dropped.
    """
    student = as_tensor(student)
    teacher = np.asarray(teacher, dtype=np.float64)
    _check_batch(student.shape, teacher.shape)
    n = student.shape[0]
    ds, valid = _cosine_distance_matrix(student.swapaxes(0, 1), skip_zero)
    dt = _cosine_distance_matrix(Tensor(np.swapaxes(teacher, 0, 1)))[0].data
    if valid.all():
        upper = np.triu(np.ones((n, n)), k=1)
        per_frame = ((ds - dt).abs() * upper).sum(axis=(-1, -2)) * (2.0 / (n * (n - 1)))
        return per_frame.mean()
    pairs = np.triu(valid[:, :, None] & valid[:, None, :], k=1).astype(np.float64)
    counts = pairs.sum(axis=(-1, -2))
    used = counts > 0
    if not used.any():
        raise ZeroVector("every frame has fewer than two non-zero student vectors")
    weights = np.where(used, 1.0 / np.maximum(counts, 1.0), 0.0) / used.sum()
    return ((ds - dt).abs() * (pairs * weights[:, None, None])).sum()


def _pairwise_distance(x: Tensor) -> Tensor:
    """(..., n, C) -> (..., n, n) Euclidean distances.

    The forward value is the exact norm (zero diagonal). The backward pass
    divides by sqrt(d^2 + DIST_EPS) so coincident rows give a finite gradient.
    """
    diff = x.data[..., :, None, :] - x.data[..., None, :, :]
    sq = np.einsum("...ijc,...ijc->...ij", diff, diff)
    dist = np.sqrt(sq)

    def backward(g):
        w = (g + np.swapaxes(g, -1, -2)) / np.sqrt(sq + DIST_EPS)
        return (np.einsum("...ij,...ijc->...ic", w, diff),)

    return Tensor.from_op(dist, (x,), backward)


def pairwise_euclidean(x) -> Tensor:
    """n x C rows -> symmetric n x n matrix of 2-norm distances."""
    x = as_tensor(x)
    if x.shape[-2] < 2:
        raise BatchTooSmall("pairwise distances need at least two rows")
    return _pairwise_distance(x)


def double_center(a) -> Tensor:
    """A_ij = a_ij - row mean_i - column mean_j + grand mean, on the last two axes."""
    a = as_tensor(a)
    if a.shape[-1] != a.shape[-2]:
        raise DimensionMismatch(f"double centering needs a square matrix, got {a.shape}")
    return (a - a.mean(axis=-1, keepdims=True) - a.mean(axis=-2, keepdims=True)
            + a.mean(axis=(-1, -2), keepdims=True))


def dcov_sq(A, B) -> Tensor:
    """V^2_n = (1/n^2) sum_ij A_ij B_ij over the last two axes."""
    A, B = as_tensor(A), as_tensor(B)
    if A.shape != B.shape:
        raise DimensionMismatch(f"{A.shape} vs {B.shape}")
    return (A * B).mean(axis=(-1, -2))


def dcor_loss(student, teacher) -> Tensor:
    """1 - R^2_n(l, v) per frame, averaged over frames.

    Shapes as in :func:`cos_diff_loss`. Raises :class:`DegenerateBatch`
    when every row of some frame coincides on either side.
    """
    student = as_tensor(student)
    teacher = np.asarray(teacher, dtype=np.float64)
    _check_batch(student.shape, teacher.shape)
    A = double_center(_pairwise_distance(student.swapaxes(0, 1)))
    B = double_center(_pairwise_distance(Tensor(np.swapaxes(teacher, 0, 1)))).data
    v_ll = dcov_sq(A, A)
    v_vv = (B * B).mean(axis=(-1, -2))
    if np.any(v_ll.data < DEGENERATE_V2) or np.any(v_vv < DEGENERATE_V2):
        raise DegenerateBatch("all samples of a frame coincide; distance correlation undefined")
    v_lv = dcov_sq(A, B)
    r2 = v_lv / (v_ll * v_vv).sqrt()
    return (1.0 - r2).mean()


def _stack_batch(maps, name: str):
    if isinstance(maps, (Tensor, np.ndarray)):
        return maps
    shapes = {tuple(np.shape(m.data if isinstance(m, Tensor) else m)) for m in maps}
    if len(shapes) != 1:
        raise RaggedBatch(f"{name} clips have differing shapes {sorted(shapes)}")
    if any(isinstance(m, Tensor) for m in maps):
        from .autodiff import stack
        return stack(list(maps), axis=0)
    return np.stack([np.asarray(m, dtype=np.float64) for m in maps])


def regularization_loss(measure: MeasureKind, student_maps, teacher_seqs, skip_zero: bool = False) -> Tensor:
    """Align a batch of student feature maps to teacher embeddings and measure their distance.

    ``student_maps`` is an ``(n, T_s, C_s)`` tensor or a list of per-clip
    ``T_s x C_s`` maps; ``teacher_seqs`` likewise. Gradient flows only into
    the student side. ``skip_zero`` is passed to :func:`cos_diff_loss`.
    """
    student = _stack_batch(student_maps, "student")
    teacher = _stack_batch(teacher_seqs, "teacher")
    if isinstance(teacher, Tensor):
        teacher = teacher.data
    if student.shape[0] != teacher.shape[0]:
        raise DimensionMismatch("student and teacher batch sizes differ")
    if student.shape[0] < 2:
        raise BatchTooSmall("regularization needs at least two clips per batch")
    student, teacher = align_time(as_tensor(student), teacher)
    if measure is MeasureKind.COS_DIFF:
        return cos_diff_loss(student, teacher, skip_zero)
    if measure is MeasureKind.DISTANCE_CORRELATION:
        if student.shape[0] < 3:
            warnings.warn("distance correlation is identically 0 for two samples; use batches of 3 or more",
                          stacklevel=2)
        return dcor_loss(student, teacher)
    raise ValueError(f"unknown measure {measure!r}")
