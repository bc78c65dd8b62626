"""Deterministic mini-batch training for all seven systems, lambda search, limited-data runs."""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import expit

from .config import SystemConfig, Variant
from .data import SplitSpec, split
from .distance import regularization_loss
from .errors import DegenerateBatch, EmptyDataset, MissingComponent, ZeroVector
from .losses import LabelBatch, kd_loss, masked_bce, system_loss
from .metrics import MetricsReport, evaluate
from .models import StudentNet, TeacherLR, checkpoint_bytes, teacher_fit

log = logging.getLogger(__name__)

DEFAULT_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
LIMITED_SYSTEMS = (Variant.BASELINE, Variant.KD, Variant.EAST_COS_DIFF, Variant.EAST_FINAL)


@dataclass
class ClipArrays:
    """A split stacked into dense arrays; ``teacher`` is None without embeddings."""
    ids: np.ndarray
    frames: np.ndarray
    targets: np.ndarray
    mask: np.ndarray
    teacher: np.ndarray | None = None

    def __len__(self):
        return len(self.ids)


def stack_clips(clips: Sequence, teacher_seqs=None) -> ClipArrays:
    """``teacher_seqs`` is indexed by clip_id (a dict, or a list aligned with generated ids)."""
    if not clips:
        raise EmptyDataset("no clips to stack")
    teacher = None
    if teacher_seqs is not None:
        teacher = np.stack([np.asarray(teacher_seqs[c.clip_id], dtype=np.float64) for c in clips])
    return ClipArrays(
        ids=np.array([c.clip_id for c in clips]),
        frames=np.stack([c.frames for c in clips]).astype(np.float64),
        targets=np.stack([c.targets for c in clips]).astype(np.float64),
        mask=np.stack([c.mask for c in clips]).astype(np.float64),
        teacher=teacher,
    )


@dataclass
class TrainResult:
    model: object
    history: list = field(default_factory=list)
    best_epoch: int = 0
    val: MetricsReport | None = None
    test: MetricsReport | None = None

    @property
    def checkpoint(self) -> bytes:
        return checkpoint_bytes(self.model)


def _rngs(seed: int):
    init, shuffle = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init), np.random.default_rng(shuffle)


def init_student(config: SystemConfig, in_channels: int, n_classes: int) -> StudentNet:
    """The network ``train_system`` starts from for this config."""
    init_rng, _ = _rngs(config.seed)
    return StudentNet.from_widths(in_channels, config.stage_widths, config.stage_pools, n_classes, init_rng)


def _as_arrays(part, teacher_seqs=None):
    if part is None or isinstance(part, ClipArrays):
        return part
    return stack_clips(part, teacher_seqs)


def _report(scores: np.ndarray, arrays: ClipArrays) -> MetricsReport:
    return evaluate(scores, arrays.targets, arrays.mask)


def _fit_teacher(config: SystemConfig, arrays: ClipArrays) -> TeacherLR:
    if arrays.teacher is None:
        raise MissingComponent("the logistic-regression teacher needs embeddings")
    return teacher_fit(arrays.teacher, LabelBatch(arrays.targets, arrays.mask),
                       epochs=config.teacher_epochs, lr=config.teacher_lr, seed=config.seed)


def _train_teacher_lr(config, train: ClipArrays, val: ClipArrays, test: ClipArrays | None) -> TrainResult:
    teacher = _fit_teacher(config, train)
    train_loss = masked_bce(teacher.predict_logits(train.teacher), LabelBatch(train.targets, train.mask)).item()
    val_report = _report(expit(teacher.predict_logits(val.teacher)), val)
    test_report = _report(expit(teacher.predict_logits(test.teacher)), test) if test is not None else None
    history = [{"epoch": config.teacher_epochs, "train_loss": train_loss, "val_mAP": val_report.mAP}]
    return TrainResult(teacher, history, config.teacher_epochs, val_report, test_report)


def train_system(config: SystemConfig, train, val, teacher_seqs=None, teacher_model: TeacherLR | None = None,
                 test=None, callback: Callable[[dict], None] | None = None) -> TrainResult:
    """Train one system and restore the epoch with the best validation mAP.

    ``train``/``val``/``test`` are lists of clips or :class:`ClipArrays`.
    ``callback`` is called after every optimizer step with a dict holding
    ``epoch``, ``batch``, ``loss`` and the individual loss terms.
    """
    v = config.variant
    if v.uses_teacher_model and teacher_model is None:
        raise MissingComponent(f"{v.value} needs a fitted logistic-regression teacher")
    needs_embeddings = v is not Variant.BASELINE
    train = _as_arrays(train, teacher_seqs if needs_embeddings else None)
    if needs_embeddings and train.teacher is None:
        raise MissingComponent(f"{v.value} needs teacher embeddings")
    evals = teacher_seqs if v is Variant.TEACHER_LR else None
    val, test = _as_arrays(val, evals), _as_arrays(test, evals)
    if v is Variant.TEACHER_LR:
        return _train_teacher_lr(config, train, val, test)

    net = init_student(config, train.frames.shape[2], train.targets.shape[1])
    _, shuffle_rng = _rngs(config.seed)
    params = net.parameters()
    velocity = [np.zeros_like(p.data) for p in params]
    soft_logits = teacher_model.predict_logits(train.teacher) if v.uses_teacher_model else None

    history = []
    best_map, best_epoch, best_flat, waited = -np.inf, 0, net.get_flat(), 0
    n = len(train)
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        losses = []
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            if len(idx) < 2 or train.mask[idx].sum() == 0:
                continue
            for p in params:
                p.grad = None
            logits, taps = net.forward(train.frames[idx])
            terms = {"pred": masked_bce(logits, LabelBatch(train.targets[idx], train.mask[idx]))}
            if soft_logits is not None:
                terms["kd"] = kd_loss(logits, soft_logits[idx], config.temperature, train.mask[idx])
            reg = None
            if v.uses_embeddings:
                stage_taps = taps if v is Variant.EAST_ALL else taps[-1:]
                try:
                    with warnings.catch_warnings():
                        # a two-clip tail batch gives a constant zero term; nothing to warn about here
                        warnings.filterwarnings("ignore", message="distance correlation is identically 0")
                        reg = [regularization_loss(config.measure, tap, train.teacher[idx], skip_zero=True)
                               for tap in stage_taps]
                except (DegenerateBatch, ZeroVector) as exc:
                    raise DegenerateBatch(f"{exc} [epoch {epoch}, batch {b}]", epoch=epoch, batch=b) from exc
            loss = system_loss(config, terms["pred"], terms.get("kd"), reg)
            loss.backward()
            for p, vel in zip(params, velocity):
                vel *= config.momentum
                vel += p.grad
                p.data = p.data - config.lr * vel
            losses.append(loss.item())
            if callback is not None:
                record = {"epoch": epoch, "batch": b, "loss": loss.item()}
                record.update({k: t.item() for k, t in terms.items()})
                if reg is not None:
                    record["reg"] = [r.item() for r in reg]
                callback(record)

        val_map = _report(expit(net.predict_logits(val.frames)), val).mAP
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)) if losses else float("nan"),
                        "val_mAP": val_map})
        log.debug("%s epoch %d loss %.5f val mAP %.4f", v.value, epoch, history[-1]["train_loss"], val_map)
        if val_map > best_map:
            best_map, best_epoch, best_flat, waited = val_map, epoch, net.get_flat(), 0
        else:
            waited += 1
            if waited >= config.patience:
                break

    net.set_flat(best_flat)
    val_report = _report(expit(net.predict_logits(val.frames)), val)
    test_report = _report(expit(net.predict_logits(test.frames)), test) if test is not None else None
    return TrainResult(net, history, best_epoch, val_report, test_report)


def _run_job(job):
    fn, args, kwargs = job
    return fn(*args, **kwargs)


def _map_jobs(jobs, workers: int):
    if workers <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))


def _sweep_point(config, train, val, teacher_seqs, teacher_model, test):
    result = train_system(config, train, val, teacher_seqs, teacher_model, test)
    row = {"lambda": config.lambda_, "best_epoch": result.best_epoch, "val_mAP": result.val.mAP}
    if result.test is not None:
        row["test_mAP"] = result.test.mAP
    return row


def sweep_lambda(base_config: SystemConfig, grid: Sequence[float], train, val, teacher_seqs=None,
                 teacher_model=None, test=None, workers: int = 1):
    """Train once per distinct lambda; return the best by val mAP (ties -> smaller lambda) and all rows."""
    values = sorted(set(float(x) for x in grid))
    if not values:
        raise ValueError("lambda grid is empty")
    train = _as_arrays(train, teacher_seqs if base_config.variant is not Variant.BASELINE else None)
    val, test = _as_arrays(val), _as_arrays(test)
    jobs = [(_sweep_point, (replace(base_config, lambda_=lam), train, val, None, teacher_model, test), {})
            for lam in values]
    rows = _map_jobs(jobs, workers)
    best = max(rows, key=lambda r: (r["val_mAP"], -r["lambda"]))
    return best["lambda"], rows


def _limited_point(config, fraction, train, val, test):
    teacher_model = _fit_teacher(config, train) if config.variant.uses_teacher_model else None
    result = train_system(config, train, val, None, teacher_model, test)
    return {"system": config.variant.value, "fraction": fraction, "seed": config.seed, "mAP": result.test.mAP}


def limited_data_experiment(config: SystemConfig, clips, teacher_seqs, fractions: Sequence[float],
                            seeds: Sequence[int], split_spec: SplitSpec | None = None,
                            systems: Sequence[Variant] = LIMITED_SYSTEMS, workers: int = 1,
                            lambdas: Mapping[Variant, float] | None = None):
    """Test mAP for each (fraction, seed, system) on nested training subsets.

    The seed drives both the split and training. The KD teacher is fitted on
    the limited training subset, so no system sees extra labels. ``lambdas``
    overrides ``config.lambda_`` per system.
    """
    lambdas = {Variant(k): float(v) for k, v in (lambdas or {}).items()}
    split_spec = split_spec or SplitSpec()
    jobs = []
    for fraction in fractions:
        for seed in seeds:
            tr, va, te = split(clips, replace(split_spec, seed=seed, limit_fraction=fraction))
            tr, va, te = stack_clips(tr, teacher_seqs), stack_clips(va), stack_clips(te)
            for system in systems:
                cfg = replace(config, variant=system, seed=seed, lambda_=lambdas.get(system, config.lambda_))
                jobs.append((_limited_point, (cfg, fraction, tr, va, te), {}))
    return _map_jobs(jobs, workers)


def format_tsv(rows: Sequence[Mapping], columns: Sequence[str]) -> str:
    """Tab-separated table, floats with 4 decimals, fixed column order."""
    def cell(x):
        if isinstance(x, float):
            return f"{x:.4f}"
        return str(x)

    lines = ["\t".join(columns)]
    lines += ["\t".join(cell(r[c]) for c in columns) for r in rows]
    return "\n".join(lines) + "\n"
