"""Quick oracle and invariant checks behind ``east selftest``."""
from __future__ import annotations

import math
import time
from typing import Callable

import numpy as np
from scipy.stats import ortho_group

from .autodiff import Tensor, finite_diff_gradient
from .config import SystemConfig, Variant
from .data import SplitSpec, SynthConfig, container_bytes, container_from_bytes, generate, split
from .distance import cos_diff_loss, dcor_loss
from .errors import FormatError
from .losses import LabelBatch, kd_loss, masked_bce
from .metrics import average_precision, roc_auc
from .oracles import average_precision_naive, dcor_loss_naive_frames, roc_auc_naive
from .trainer import train_system


def check_dcor_golden() -> str:
    value = dcor_loss(Tensor([[[0.0]], [[1.0]], [[3.0]]]), [[[0.0]], [[1.0]], [[2.0]]]).item()
    err = abs(value - (1 - math.sqrt(15) / 4))
    assert err < 1e-9, f"golden value off by {err:.2e}"
    return f"|err| {err:.1e}"


def check_dcor_oracle(cases: int = 40) -> str:
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(cases):
        n, c = int(rng.integers(3, 17)), int(rng.integers(1, 9))
        s, t = rng.standard_normal((n, 1, c)), rng.standard_normal((n, 1, int(rng.integers(1, 9))))
        fast = dcor_loss(Tensor(s), t).item()
        slow = dcor_loss_naive_frames(s.tolist(), t.tolist())
        worst = max(worst, abs(fast - slow) / max(abs(slow), 1e-300))
    assert worst < 1e-12, f"relative error {worst:.2e}"
    return f"max rel err {worst:.1e}"


def check_invariances(cases: int = 10) -> str:
    rng = np.random.default_rng(1)
    worst_d = worst_c = 0.0
    for _ in range(cases):
        n, c = int(rng.integers(3, 12)), int(rng.integers(2, 8))
        s = rng.standard_normal((n, 2, c))
        q = ortho_group.rvs(c, random_state=rng)
        moved = s @ q * rng.uniform(0.1, 10) + rng.standard_normal(c)
        worst_d = max(worst_d, dcor_loss(Tensor(s), moved).item())
        scaled = s * rng.uniform(0.1, 10, (n, 1, 1))
        worst_c = max(worst_c, cos_diff_loss(Tensor(s), scaled).item())
    assert worst_d < 1e-7 and worst_c < 1e-12, f"dcor {worst_d:.2e}, cos-diff {worst_c:.2e}"
    return f"dcor {worst_d:.1e}, cos-diff {worst_c:.1e}"


def check_gradients(cases: int = 5) -> str:
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(cases):
        s = rng.standard_normal((5, 2, 3)) * 2
        t = rng.standard_normal((5, 2, 4))
        z = rng.standard_normal((5, 3))
        y = rng.integers(0, 2, (5, 3))
        fns = [(lambda v: dcor_loss(v, t), s), (lambda v: cos_diff_loss(v, t), s),
               (lambda v: masked_bce(v, LabelBatch(y, np.ones_like(y))), z),
               (lambda v: kd_loss(v, z[::-1], 2.0, np.ones_like(y)), z)]
        for fn, x in fns:
            tx = Tensor(x, requires_grad=True)
            fn(tx).backward()
            numeric = finite_diff_gradient(lambda v: fn(Tensor(v)).item(), x)
            worst = max(worst, np.linalg.norm(tx.grad - numeric) / np.linalg.norm(numeric))
    assert worst < 1e-4, f"relative error {worst:.2e}"
    return f"max rel err {worst:.1e}"


def check_metrics(cases: int = 30) -> str:
    rng = np.random.default_rng(3)
    for _ in range(cases):
        n = int(rng.integers(2, 100))
        scores = np.round(rng.random(n), 2)
        labels = rng.integers(0, 2, n)
        labels[0], labels[-1] = 1, 0
        assert abs(average_precision(scores, labels) - average_precision_naive(scores, labels)) < 1e-12
        assert abs(roc_auc(scores, labels) - roc_auc_naive(scores, labels)) < 1e-12
    assert average_precision([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0]) == 5 / 6
    assert roc_auc([0.3, 0.3], [1, 0]) == 0.5
    return f"{cases} random instances"


def check_container() -> str:
    clips, teacher = generate(SynthConfig(n_clips=6, channels=3, frames=4, seed=4))
    data = container_bytes(clips, teacher)
    back, back_t = container_from_bytes(data)
    assert back == clips and all(a.tobytes() == b.tobytes() for a, b in zip(back_t, teacher))
    try:
        container_from_bytes(data[:-3])
    except FormatError as exc:
        assert exc.offset is not None
    else:
        raise AssertionError("truncated container was accepted")
    return f"{len(data)} bytes"


def check_zero_weight_equivalence() -> str:
    clips, teacher = generate(SynthConfig(n_clips=80, n_classes=4, channels=6, frames=4, seed=5))
    train, val, _ = split(clips, SplitSpec(seed=0))
    common = dict(epochs=3, stage_widths=(6, 6), stage_pools=(2, 1))
    base = train_system(SystemConfig(Variant.BASELINE, **common), train, val)
    east = train_system(SystemConfig(Variant.EAST_FINAL, lambda_=0.0, **common), train, val, teacher)
    assert base.checkpoint == east.checkpoint and base.history == east.history
    return "bit-identical"


CHECKS: list[tuple[str, Callable[[], str]]] = [
    ("dcor golden value", check_dcor_golden),
    ("dcor vs loop oracle", check_dcor_oracle),
    ("invariances", check_invariances),
    ("gradients vs finite differences", check_gradients),
    ("metrics vs oracles", check_metrics),
    ("container round trip", check_container),
    ("lambda=0 equals baseline", check_zero_weight_equivalence),
]


def run_all(emit: Callable[[str], None] = print) -> bool:
    ok = True
    for name, fn in CHECKS:
        start = time.perf_counter()
        try:
            detail = fn()
            status = "PASS"
        except Exception as exc:  # any crash is a failed check, keep going
            detail, status, ok = f"{type(exc).__name__}: {exc}", "FAIL", False
        emit(f"{status}\t{name}\t{detail}\t{time.perf_counter() - start:.2f}s")
    return ok
