"""Command-line entry point: ``gaitkd <verb> [--config F] [--seed N] [--out DIR] [--threads N]``.

Exit codes: 0 ok, 1 unexpected, 2 configuration or input, 3 file I/O,
4 numeric, 5 training divergence, 6 gradient audit failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import glob
import json
import os
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .config import RunConfig, config_hash, default_config, dump_config, load_config
from .errors import CheckpointError, GaitKDError
from .eval_metrics import GapRecord, gap_closed
from .gradcheck import run_audit
from .objective import ABLATION_VARIANTS, ablation_variant
from .toybench.checkpoint import load_checkpoint, save_checkpoint
from .toybench.data import generate_dataset
from .toybench.experiment import build_teachers, pooled_se, run_experiment, seed_plan
from .toybench.train import distill, evaluate_model

EXIT_GRADCHECK = 6
OUT_ENV = "GAITKD_OUT"


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


class Run:
    """Resolved config, seed and output directory shared by all verbs."""

    def __init__(self, args):
        self.cfg: RunConfig = load_config(args.config) if args.config else default_config()
        self.seed = self.cfg.seeds[0] if args.seed is None else args.seed
        out = args.out or os.environ.get(OUT_ENV) or self.cfg.out
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.plan = seed_plan(self.cfg, self.seed)
        self._data = None

    @property
    def data(self):
        if self._data is None:
            self._data = generate_dataset(self.plan.synth)
        return self._data

    def path(self, name):
        return self.out / name

    def write(self, name, text):
        self.path(name).write_text(text, encoding="utf-8")

    def manifest(self, verb, **extra):
        record = {"verb": verb, "seed": self.seed, "config_sha256": config_hash(self.cfg),
                  "data_sha256": self.plan.synth.digest(), **extra}
        self.write(f"manifest_{verb}.json", json.dumps(record, indent=2, sort_keys=True) + "\n")
        self.write("config.yaml", dump_config(self.cfg))


def _history_csv(history):
    if not history:
        return ""
    keys = list(history[0])
    lines = [",".join(keys)]
    lines += [",".join(repr(float(h[k])) if k != "step" else str(h[k]) for k in keys) for h in history]
    return "\n".join(lines) + "\n"


def _save_student(run, name, res, report):
    save_checkpoint(res.model, run.path(f"{name}.ckpt"), extra={"seed": run.seed, "config": config_hash(run.cfg)})
    run.write(f"{name}_history.csv", _history_csv(res.history))
    run.write(f"{name}_eval.txt", report.to_kv())
    run.write(f"{name}_eval_detail.csv", report.detail_csv())


def _teacher_paths(run, given):
    paths = list(given or sorted(glob.glob(str(run.path("teacher*.ckpt")))))
    if not paths:
        raise CheckpointError(f"no teacher checkpoints given and none found in {run.out}")
    return paths


def _load_teachers(run, paths):
    data_cfg = run.plan.synth
    return [load_checkpoint(p, in_dim=data_cfg.part_input_dim, num_classes=data_cfg.num_ids) for p in paths]


def cmd_gen(run, args):
    data = run.data
    with open(run.path("data.csv"), "w", encoding="utf-8") as fh:
        data.to_csv(fh)
    run.manifest("gen", samples=len(data))
    print(f"wrote {len(data)} samples to {run.path('data.csv')}")


def cmd_train_teacher(run, args):
    teachers = build_teachers(run.cfg, run.data, run.plan, log=_log if args.verbose else None)
    rows = []
    for k, model in enumerate(teachers):
        path = run.path(f"teacher{k}.ckpt")
        save_checkpoint(model, path, extra={"seed": run.seed, "config": config_hash(run.cfg), "index": k})
        rep = evaluate_model(model, run.data)
        run.write(f"teacher{k}_eval.txt", rep.to_kv())
        rows.append(f"teacher{k} rank1={rep.rank1:.2f} map={rep.map:.2f}")
    run.manifest("train-teacher", teachers=len(teachers))
    print("\n".join(rows))


def cmd_train_baseline(run, args):
    hp = ablation_variant(run.cfg.objective, "baseline")
    res = distill(run.cfg.student, [], run.data, hp, run.plan.student_train)
    rep = evaluate_model(res.model, run.data)
    _save_student(run, "baseline", res, rep)
    run.manifest("train-baseline")
    print(rep.to_kv(), end="")


def cmd_distill(run, args):
    paths = _teacher_paths(run, args.teachers)
    teachers = _load_teachers(run, paths)
    objective = run.cfg.objective
    if args.aggregation:
        objective = dataclasses.replace(
            objective, multi_teacher=dataclasses.replace(objective.multi_teacher, aggregation=args.aggregation))
    hp = ablation_variant(objective, args.variant)
    res = distill(run.cfg.student, teachers, run.data, hp, run.plan.student_train)
    rep = evaluate_model(res.model, run.data)
    _save_student(run, "student", res, rep)

    baseline_ckpt = run.path("baseline.ckpt")
    if baseline_ckpt.exists():
        R_b = evaluate_model(load_checkpoint(baseline_ckpt), run.data).rank1
    else:
        base = distill(run.cfg.student, [], run.data, ablation_variant(objective, "baseline"), run.plan.student_train)
        R_b = evaluate_model(base.model, run.data).rank1
    R_t = max(evaluate_model(t, run.data).rank1 for t in teachers)
    record = {"teacher_rank1": R_t, "baseline_rank1": R_b, "student_rank1": rep.rank1,
              "aggregation": hp.multi_teacher.aggregation, "variant": args.variant}
    try:
        record["gap_closed"] = gap_closed(GapRecord(R_t, R_b, rep.rank1))
    except ZeroDivisionError:
        record["gap_closed"] = None
    run.write("distill_record.json", json.dumps(record, indent=2, sort_keys=True) + "\n")
    run.manifest("distill", teachers=[str(p) for p in paths], variant=args.variant)
    gc_txt = "n/a" if record["gap_closed"] is None else f"{record['gap_closed']:.1f}"
    print(f"teacher={R_t:.2f} baseline={R_b:.2f} student={rep.rank1:.2f} gap_closed={gc_txt}")


def cmd_eval(run, args):
    # student-only: nothing but the given checkpoint is read
    model = load_checkpoint(args.checkpoint, in_dim=run.plan.synth.part_input_dim,
                            num_classes=run.plan.synth.num_ids)
    rep = evaluate_model(model, run.data)
    stem = Path(args.checkpoint).stem
    run.write(f"{stem}_eval.txt", rep.to_kv())
    run.write(f"{stem}_eval_detail.csv", rep.detail_csv())
    print(rep.to_kv(), end="")


def cmd_gradcheck(run, args):
    rows = run_audit(points=args.points, seed=run.seed)
    lines = [f"{'loss':<16}{'points':>7}{'fail':>6}{'max_err':>12}{'tol':>9}{'sec':>7}"]
    for r in rows:
        lines.append(f"{r.name:<16}{r.points:>7}{r.failures:>6}{r.max_rel_err:>12.2e}{r.tol:>9.0e}{r.seconds:>7.1f}")
    text = "\n".join(lines) + "\n"
    run.write("gradcheck.txt", text)
    print(text, end="")
    return 0 if all(r.passed for r in rows) else EXIT_GRADCHECK


def cmd_ablate(run, args):
    variants = args.variants or list(ABLATION_VARIANTS)
    seeds = args.seeds or run.cfg.seeds
    t0 = time.perf_counter()
    res = run_experiment(run.cfg, variants, seeds=seeds, log=_log if args.verbose else None)
    with open(run.path("ablation.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["variant", "rank1_mean", "rank1_sd", "rank1_se", "map_mean", "minp_mean"]
                        + [f"seed{s}" for s in res.seeds])
        for name, m, sd, se, mp, mi in res.table():
            writer.writerow([name, m, sd, se, mp, mi] + list(res.rank1(name).values))
    base = res.rank1("baseline").values if "baseline" in variants else None
    lines = [res.format_table()]
    if base is not None:
        for name in variants:
            if name != "baseline":
                diff = res.rank1(name).mean - np.mean(base)
                lines.append(f"{name} - baseline: {diff:+.2f} (pooled se {pooled_se(res.rank1(name).values, base):.2f})")
    lines.append(f"elapsed {time.perf_counter() - t0:.1f}s over seeds {list(res.seeds)}")
    text = "\n".join(lines) + "\n"
    run.write("ablation.txt", text)
    run.manifest("ablate", variants=list(variants), seeds=list(res.seeds))
    print(text, end="")


def cmd_dump_embeddings(run, args):
    model = load_checkpoint(args.checkpoint, in_dim=run.plan.synth.part_input_dim,
                            num_classes=run.plan.synth.num_ids)
    target = run.path(args.file)
    with open(target, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        D, P = model.cfg.emb_dim, model.cfg.num_parts
        writer.writerow(["split", "label", "view"] + [f"e{d}_p{p}" for p in range(P) for d in range(D)])
        for name in ("gallery", "probe"):
            split = getattr(run.data, name)
            emb = model.predict(split.x).emb  # (N, D, P)
            flat = np.moveaxis(emb, 2, 1).reshape(len(split), -1)
            for lab, view, row in zip(split.labels, split.views, flat):
                writer.writerow([name, int(lab), int(view)] + [repr(float(v)) for v in row])
    print(f"wrote embeddings to {target}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (defaults built in)")
    common.add_argument("--seed", type=int, help="experiment seed (default: first seed in config)")
    common.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or config 'out')")
    common.add_argument("--threads", type=int, help="cap BLAS threads")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="gaitkd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)
    sub.add_parser("gen", parents=[common], help="generate the synthetic dataset as CSV")
    sub.add_parser("train-teacher", parents=[common], help="train and save the configured teachers")
    sub.add_parser("train-baseline", parents=[common], help="train the student without distillation")
    p = sub.add_parser("distill", parents=[common], help="distill a student from teacher checkpoints")
    p.add_argument("--teachers", nargs="+", help="teacher checkpoints (default: OUT/teacher*.ckpt)")
    p.add_argument("--variant", default="full", choices=sorted(ABLATION_VARIANTS))
    p.add_argument("--aggregation", choices=["gaitkd", "mean_teacher"])
    p = sub.add_parser("eval", parents=[common], help="evaluate a student checkpoint on gallery/probe")
    p.add_argument("checkpoint")
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference audit of every loss")
    p.add_argument("--points", type=int, default=100)
    p = sub.add_parser("ablate", parents=[common], help="run objective variants over seeds")
    p.add_argument("--variants", nargs="+", choices=sorted(ABLATION_VARIANTS))
    p.add_argument("--seeds", nargs="+", type=int)
    p = sub.add_parser("dump-embeddings", parents=[common], help="write gallery/probe embeddings as CSV")
    p.add_argument("checkpoint")
    p.add_argument("--file", default="embeddings.csv")
    return parser


COMMANDS = {
    "gen": cmd_gen,
    "train-teacher": cmd_train_teacher,
    "train-baseline": cmd_train_baseline,
    "distill": cmd_distill,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
    "dump-embeddings": cmd_dump_embeddings,
}


def _thread_limit(n):
    if n is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with _thread_limit(args.threads):
            run = Run(args)
            code = COMMANDS[args.verb](run, args)
        return code or 0
    except GaitKDError as exc:
        _log(f"error: {exc}")
        return exc.exit_code
    except OSError as exc:
        _log(f"error: {exc}")
        return CheckpointError.exit_code
    except ValueError as exc:
        _log(f"error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
