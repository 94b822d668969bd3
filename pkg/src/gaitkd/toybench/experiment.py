"""Seeded multi-variant experiments: teachers, baseline and distilled students per seed."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from ..eval_metrics import GapRecord, gap_closed
from ..objective import ABLATION_VARIANTS, ablation_variant
from .data import Dataset, SynthConfig, generate_dataset
from .model import ToyModel
from .train import TrainConfig, distill, evaluate_model, train

__all__ = ["SeedPlan", "seed_plan", "build_teachers", "SeedResult", "run_seed", "VariantStats",
           "ExperimentResult", "run_experiment", "pooled_se"]

TEACHER_SEED_STRIDE = 1000


@dataclass(frozen=True)
class SeedPlan:
    synth: SynthConfig
    teacher_train: tuple
    student_train: TrainConfig


def seed_plan(cfg, seed: int) -> SeedPlan:
    """Derive every per-run seed from one experiment seed.

    Data, teacher k and the student each get their own offset so that
    changing the teacher list never perturbs the student's batches.
    """
    synth = dataclasses.replace(cfg.synth, seed=cfg.synth.seed + seed)
    teachers = tuple(
        dataclasses.replace(cfg.teacher_train, seed=cfg.teacher_train.seed + TEACHER_SEED_STRIDE * (k + 1) + seed)
        for k in range(len(cfg.teachers)))
    student = dataclasses.replace(cfg.train, seed=cfg.train.seed + seed)
    return SeedPlan(synth, teachers, student)


def build_teachers(cfg, data: Dataset, plan: SeedPlan, log=None):
    hp = ablation_variant(cfg.objective, "baseline")
    models = []
    for mcfg, tcfg in zip(cfg.teachers, plan.teacher_train):
        init = ToyModel(mcfg, data.config.part_input_dim, data.config.num_ids, seed=tcfg.seed)
        models.append(train(init, data, hp, tcfg, log=log).model)
    return models


@dataclass
class SeedResult:
    seed: int
    teacher_reports: list
    reports: dict
    histories: dict = field(repr=False, default_factory=dict)
    teachers: list = field(repr=False, default_factory=list)

    @property
    def teacher_rank1(self):
        return max(r.rank1 for r in self.teacher_reports)


def run_seed(cfg, seed: int, variants, teachers=None, log=None) -> SeedResult:
    plan = seed_plan(cfg, seed)
    data = generate_dataset(plan.synth)
    if teachers is None:
        teachers = build_teachers(cfg, data, plan)
    reports, histories = {}, {}
    for name in variants:
        res = distill(cfg.student, teachers, data, ablation_variant(cfg.objective, name), plan.student_train)
        reports[name] = evaluate_model(res.model, data)
        histories[name] = res.history
        if log:
            log(f"seed {seed} {name}: rank1 {reports[name].rank1:.2f}")
    return SeedResult(seed, [evaluate_model(t, data) for t in teachers], reports, histories, list(teachers))


def pooled_se(a, b):
    """Standard error of the difference of two independent sample means."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        return math.nan
    return math.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))


@dataclass(frozen=True)
class VariantStats:
    name: str
    values: tuple

    @property
    def mean(self):
        return float(np.mean(self.values))

    @property
    def sd(self):
        return float(np.std(self.values, ddof=1)) if len(self.values) > 1 else 0.0

    @property
    def se(self):
        return self.sd / math.sqrt(len(self.values))


@dataclass
class ExperimentResult:
    seeds: tuple
    per_seed: list

    def rank1(self, name):
        if name == "teacher":
            return VariantStats(name, tuple(r.teacher_rank1 for r in self.per_seed))
        return VariantStats(name, tuple(r.reports[name].rank1 for r in self.per_seed))

    def metric(self, name, key):
        return VariantStats(name, tuple(getattr(r.reports[name], key) for r in self.per_seed))

    def variants(self):
        return list(self.per_seed[0].reports) if self.per_seed else []

    def gap_closed(self, distilled="full", baseline="baseline"):
        t, b, s = self.rank1("teacher").mean, self.rank1(baseline).mean, self.rank1(distilled).mean
        return gap_closed(GapRecord(t, b, s))

    def table(self):
        """Rows of (variant, mean rank1, sd, se, mean mAP, mean mINP) with the teacher first."""
        rows = []
        t = self.rank1("teacher")
        rows.append(("teacher", t.mean, t.sd, t.se, math.nan, math.nan))
        for name in self.variants():
            r = self.rank1(name)
            rows.append((name, r.mean, r.sd, r.se, self.metric(name, "map").mean, self.metric(name, "minp").mean))
        return rows

    def format_table(self):
        lines = [f"{'variant':<20}{'rank1':>8}{'sd':>7}{'se':>7}{'mAP':>8}{'mINP':>8}"]
        for name, m, sd, se, mp, mi in self.table():
            lines.append(f"{name:<20}{m:8.2f}{sd:7.2f}{se:7.2f}{mp:8.2f}{mi:8.2f}")
        return "\n".join(lines)


def run_experiment(cfg, variants=("baseline", "full"), seeds=None, log=None, teachers=None) -> ExperimentResult:
    """Run ``variants`` over ``seeds``.  ``teachers`` maps seed -> trained teachers to skip retraining."""
    unknown = [v for v in variants if v not in ABLATION_VARIANTS]
    if unknown:
        # ablation_variant raises the descriptive error
        ablation_variant(cfg.objective, unknown[0])
    seeds = tuple(cfg.seeds if seeds is None else seeds)
    teachers = teachers or {}
    return ExperimentResult(seeds, [run_seed(cfg, s, variants, teachers=teachers.get(s), log=log) for s in seeds])
