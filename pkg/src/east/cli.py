"""``east`` command line: data generation, training, lambda sweeps, limited-data runs, reports."""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import SystemConfig, Variant
from .data import LIMIT_FRACTIONS, SplitSpec, SynthConfig, generate, read_container, split, write_container
from .distance import MeasureKind
from .errors import ConfigError, EastError, InvalidConfig, MissingComponent
from .models import StudentNet, TeacherLR, load_checkpoint, param_count, throughput_bench
from .trainer import (DEFAULT_GRID, LIMITED_SYSTEMS, _fit_teacher, format_tsv, limited_data_experiment,
                      stack_clips, sweep_lambda, train_system)


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _system_values(text: str) -> dict[str, float]:
    out = {}
    for item in text.split(","):
        if not item.strip():
            continue
        name, sep, value = item.partition("=")
        if not sep or name.strip() not in {v.value for v in Variant}:
            raise argparse.ArgumentTypeError(f"expected system=value pairs, got {item!r}")
        out[name.strip()] = float(value)
    return out


def _workers() -> int:
    raw = os.environ.get("EAST_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise InvalidConfig(f"EAST_THREADS must be an integer, got {raw!r}")


class Manifest:
    """Run record written next to a command's outputs."""

    def __init__(self, command: str, argv: list[str], seed: int):
        self.data = {"command": command, "argv": argv, "seed": seed, "version": __version__,
                     "started": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
                     "config": {}, "artifacts": []}
        self._t0 = time.perf_counter()

    def artifact(self, path) -> Path:
        self.data["artifacts"].append(str(path))
        return Path(path)

    def write(self, path) -> None:
        self.data["wall_clock_s"] = round(time.perf_counter() - self._t0, 3)
        Path(path).write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")


# -- shared flag groups ---------------------------------------------------

def _add_training_flags(p: argparse.ArgumentParser, system_default: str | None = None, lambda_default: float = 0.0):
    p.add_argument("--data", required=True, help="EAST container produced by gen-data")
    choices = [v.value for v in Variant]
    if system_default is None:
        p.add_argument("--system", required=True, choices=choices)
    else:
        p.add_argument("--system", default=system_default, choices=choices)
    p.add_argument("--lambda", dest="lambda_", type=float, default=lambda_default)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--temperature", type=float, default=2.0)
    p.add_argument("--measure", choices=[m.value for m in MeasureKind], default="dcor")
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--widths", type=_ints, default=[32, 32])
    p.add_argument("--pools", type=_ints, default=[2, 2])
    p.add_argument("--teacher-epochs", type=int, default=500)
    p.add_argument("--split", type=_floats, default=[0.7, 0.15, 0.15], help="train,val,test fractions")
    p.add_argument("--embedding-tag", default="synthetic")
    p.add_argument("--out-dir", default=".")


def _config(args, **overrides) -> SystemConfig:
    params = dict(variant=args.system, lambda_=args.lambda_, alpha=args.alpha, temperature=args.temperature,
                  measure=args.measure, epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                  patience=args.patience, seed=args.seed, stage_widths=tuple(args.widths),
                  stage_pools=tuple(args.pools), teacher_epochs=args.teacher_epochs)
    params.update(overrides)
    return SystemConfig(**params)


def _split_spec(args, limit: float = 1.0) -> SplitSpec:
    if len(args.split) != 3:
        raise InvalidConfig("--split needs three fractions: train,val,test")
    return SplitSpec(*args.split, limit_fraction=limit, seed=args.seed)


def _load(args):
    clips, teacher = read_container(args.data)
    return clips, {c.clip_id: e for c, e in zip(clips, teacher)}


def _teacher(arg: str | None, config: SystemConfig, train, teacher_seqs) -> TeacherLR | None:
    if arg is None:
        return None
    if arg == "fit":
        return _fit_teacher(config, stack_clips(train, teacher_seqs))
    model = load_checkpoint(arg)
    if not isinstance(model, TeacherLR):
        raise InvalidConfig(f"{arg} holds a student checkpoint, not a teacher")
    return model


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands -------------------------------------------------------------

def cmd_gen_data(args, manifest: Manifest) -> int:
    overrides = {k: v for k, v in dict(
        n_clips=args.clips, n_classes=args.classes, latent_dim=args.latent_dim, frames=args.frames,
        channels=args.channels, teacher_dim=args.teacher_dim, teacher_frames=args.teacher_frames,
        teacher_noise=args.teacher_noise, frame_noise=args.frame_noise, nuisance_dim=args.nuisance_dim,
        nuisance_scale=args.nuisance_scale, observe_prob=args.observe_prob, seed=args.seed,
    ).items() if v is not None}
    cfg = SynthConfig.benchmark(**overrides) if args.preset == "benchmark" else SynthConfig(**overrides)
    clips, teacher = generate(cfg)
    out = Path(args.output)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    write_container(manifest.artifact(out), clips, teacher)
    manifest.data["config"] = dict(cfg.__dict__)
    manifest.write(out.with_name(out.name + ".manifest.json"))
    targets = np.stack([c.targets for c in clips])
    mask = np.stack([c.mask for c in clips])
    print(f"wrote {out}: {len(clips)} clips, {cfg.n_classes} classes, input {cfg.frames}x{cfg.channels}, "
          f"teacher {cfg.teacher_frames}x{cfg.teacher_dim}, prevalence {targets.mean():.3f}, "
          f"observed {mask.mean():.3f}")
    return 0


def cmd_train(args, manifest: Manifest) -> int:
    config = _config(args)
    clips, teacher_seqs = _load(args)
    train, val, test = split(clips, _split_spec(args, args.limit))
    if config.variant.uses_teacher_model and args.teacher is None:
        raise MissingComponent(f"--system {config.variant.value} needs --teacher PATH or --teacher fit")
    teacher_model = _teacher(args.teacher, config, train, teacher_seqs)
    out = _out_dir(args)
    history_file = out / "history.jsonl"
    result = train_system(config, train, val, teacher_seqs, teacher_model, test)

    (out / "checkpoint.easm").write_bytes(result.checkpoint)
    manifest.artifact(out / "checkpoint.easm")
    history_file.write_text("".join(json.dumps(h, sort_keys=True) + "\n" for h in result.history))
    manifest.artifact(history_file)
    row = {"system": config.variant.value, "embedding": args.embedding_tag, "mAP": result.test.mAP,
           "F1": result.test.macro_f1, "AUC": result.test.roc_auc}
    table = format_tsv([row], ["system", "embedding", "mAP", "F1", "AUC"])
    (out / "metrics.tsv").write_text(table)
    manifest.artifact(out / "metrics.tsv")
    manifest.data["config"] = {**config.to_dict(), "best_epoch": result.best_epoch, "data": args.data,
                               "split": args.split, "limit": args.limit, "teacher": args.teacher}
    manifest.write(out / "manifest.json")
    sys.stdout.write(table)
    return 0


def cmd_sweep(args, manifest: Manifest) -> int:
    config = _config(args)
    clips, teacher_seqs = _load(args)
    train, val, test = split(clips, _split_spec(args))
    teacher_model = _teacher(args.teacher, config, train, teacher_seqs)
    best, rows = sweep_lambda(config, args.grid, train, val, teacher_seqs, teacher_model, test, workers=_workers())
    out = _out_dir(args)
    table = format_tsv(rows, ["lambda", "best_epoch", "val_mAP", "test_mAP"])
    (out / "sweep.tsv").write_text(table)
    manifest.artifact(out / "sweep.tsv")
    manifest.data["config"] = {**config.to_dict(), "grid": args.grid, "best_lambda": best, "data": args.data}
    manifest.write(out / "manifest.json")
    sys.stdout.write(table)
    print(f"best_lambda\t{best:.4f}")
    return 0


def cmd_limited(args, manifest: Manifest) -> int:
    config = _config(args, variant=Variant.BASELINE)
    clips, teacher_seqs = _load(args)
    seeds = list(range(args.seeds))
    if not seeds:
        raise InvalidConfig("--seeds must be >= 1")
    rows = limited_data_experiment(config, clips, teacher_seqs, args.fractions, seeds, _split_spec(args),
                                   LIMITED_SYSTEMS, workers=_workers(), lambdas=args.lambdas)
    out = _out_dir(args)
    table = format_tsv(rows, ["system", "fraction", "seed", "mAP"])
    (out / "limited.tsv").write_text(table)
    manifest.artifact(out / "limited.tsv")
    config_dict = config.to_dict()
    config_dict.pop("variant")
    manifest.data["config"] = {**config_dict, "fractions": args.fractions, "seeds": seeds, "data": args.data,
                               "lambdas": args.lambdas}
    manifest.write(out / "manifest.json")
    sys.stdout.write(table)
    return 0


def cmd_complexity(args, manifest: Manifest) -> int:
    if len(args.widths) != len(args.pools):
        raise InvalidConfig("--widths and --pools must have the same length")
    net = StudentNet.from_widths(args.channels, args.widths, args.pools, args.classes, seed=args.seed)
    params = param_count(net)
    rate = throughput_bench(net, (args.frames, args.channels), seconds=args.seconds, seed=args.seed)
    name = "student-" + "x".join(str(w) for w in args.widths)
    table = format_tsv([{"model": name, "Parameters (M)": f"{params / 1e6:.2f}", "Iteration / s": rate}],
                       ["model", "Parameters (M)", "Iteration / s"])
    out = _out_dir(args)
    (out / "complexity.tsv").write_text(table)
    manifest.artifact(out / "complexity.tsv")
    manifest.data["config"] = {"channels": args.channels, "frames": args.frames, "widths": args.widths,
                               "pools": args.pools, "classes": args.classes, "parameters": params}
    manifest.write(out / "manifest.json")
    sys.stdout.write(table)
    return 0


def cmd_selftest(args, manifest: Manifest) -> int:
    from .selftest import run_all
    ok = run_all()
    out = _out_dir(args)
    manifest.data["config"] = {"passed": ok}
    manifest.write(out / "manifest.json")
    print("selftest passed" if ok else "selftest FAILED")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="east", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset container")
    g.add_argument("-o", "--output", required=True)
    g.add_argument("--preset", choices=["plain", "benchmark"], default="plain")
    for flag, kind in [("--clips", int), ("--classes", int), ("--latent-dim", int), ("--frames", int),
                       ("--channels", int), ("--teacher-dim", int), ("--teacher-frames", int),
                       ("--teacher-noise", float), ("--frame-noise", float), ("--nuisance-dim", int),
                       ("--nuisance-scale", float), ("--observe-prob", float)]:
        g.add_argument(flag, type=kind, default=None)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one system and report test metrics")
    _add_training_flags(t)
    t.add_argument("--teacher", help="teacher checkpoint path, or 'fit' to fit one on the training split")
    t.add_argument("--limit", type=float, default=1.0, help="fraction of the training split to use")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="search lambda on validation mAP")
    _add_training_flags(s, system_default="east-final")
    s.add_argument("--grid", type=_floats, default=list(DEFAULT_GRID))
    s.add_argument("--teacher", help="teacher checkpoint path, or 'fit'")
    s.set_defaults(func=cmd_sweep)

    lim = sub.add_parser("limited", help="test mAP on nested fractions of the training split",
                         description="Runs baseline, kd, east-cos-diff and east-final; --system is ignored.")
    _add_training_flags(lim, system_default="baseline", lambda_default=0.5)
    lim.add_argument("--lambdas", type=_system_values, default={"east-cos-diff": 0.1},
                     help="per-system overrides of --lambda, e.g. east-final=0.7,east-cos-diff=0.1")
    lim.add_argument("--fractions", type=_floats, default=list(LIMIT_FRACTIONS))
    lim.add_argument("--seeds", type=int, default=5, help="run seeds 0..N-1")
    lim.set_defaults(func=cmd_limited)

    c = sub.add_parser("complexity", help="parameter count and forward throughput")
    c.add_argument("--channels", type=int, default=128)
    c.add_argument("--frames", type=int, default=1000)
    c.add_argument("--widths", type=_ints, default=[256, 256])
    c.add_argument("--pools", type=_ints, default=[2, 2])
    c.add_argument("--classes", type=int, default=10)
    c.add_argument("--seconds", type=float, default=1.0)
    c.add_argument("--out-dir", default=".")
    c.set_defaults(func=cmd_complexity)

    st = sub.add_parser("selftest", help="run the oracle and invariant checks")
    st.add_argument("--out-dir", default=".")
    st.set_defaults(func=cmd_selftest)

    for p in (g, t, s, lim, c, st):
        p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    manifest = Manifest(args.command, argv, args.seed)
    try:
        return args.func(args, manifest)
    except ConfigError as exc:
        print(f"east: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (EastError, OSError) as exc:
        print(f"east: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
