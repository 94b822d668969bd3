"""PK-sampled first-order training of toy models, with optional frozen teachers."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .. import gradcore as gc
from ..errors import CheckpointError, ConfigError, TrainingError
from ..eval_metrics import EvalReport, build_index, evaluate
from ..multi_teacher import TeacherBank, TeacherOutput
from ..objective import HyperParams, StudentOutputs, total_loss
from .data import Dataset
from .model import ModelConfig, ToyModel


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 400
    ids_per_batch: int = 8
    samples_per_id: int = 4
    lr: float = 0.01
    optimizer: str = "adam"
    momentum: float = 0.9
    weight_decay: float = 0.0
    seed: int = 0
    eval_every: int = 0
    augment_sigma: float = 0.0  # Gaussian jitter on raw training samples, redrawn every step

    def __post_init__(self):
        if self.steps < 0 or self.eval_every < 0:
            raise ConfigError("steps and eval_every must be >= 0")
        if self.augment_sigma < 0:
            raise ConfigError("augment_sigma must be >= 0")
        if self.ids_per_batch < 2 or self.samples_per_id < 2:
            raise ConfigError("PK sampling needs >= 2 identities and >= 2 samples per identity")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr and weight_decay must be >= 0")
        if self.optimizer not in ("sgd", "sgd_momentum", "adam"):
            raise ConfigError(f"optimizer must be sgd, sgd_momentum or adam, got {self.optimizer!r}")


class Optimizer:
    def __init__(self, params, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        cfg = self.cfg
        self.t += 1
        for k in sorted(params):
            g = grads[k] + cfg.weight_decay * params[k]
            if cfg.optimizer == "sgd":
                update = g
            elif cfg.optimizer == "sgd_momentum":
                self.m[k] = cfg.momentum * self.m[k] + g
                update = self.m[k]
            else:
                b1, b2, eps = 0.9, 0.999, 1e-8
                self.m[k] = b1 * self.m[k] + (1 - b1) * g
                self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
                m_hat = self.m[k] / (1 - b1 ** self.t)
                v_hat = self.v[k] / (1 - b2 ** self.t)
                update = m_hat / (np.sqrt(v_hat) + eps)
            params[k] = params[k] - cfg.lr * update


def pk_batches(labels, cfg: TrainConfig, rng):
    """Yield index arrays of ``ids_per_batch`` identities x ``samples_per_id`` samples."""
    labels = np.asarray(labels)
    ids = np.unique(labels)
    members = {c: np.flatnonzero(labels == c) for c in ids}
    if min(len(m) for m in members.values()) < 2:
        raise ConfigError("every training identity needs >= 2 samples")
    n_ids = min(cfg.ids_per_batch, len(ids))
    while True:
        chosen = rng.choice(ids, size=n_ids, replace=False)
        batch = []
        for c in chosen:
            pool = members[c]
            k = min(cfg.samples_per_id, len(pool))
            batch.append(rng.choice(pool, size=k, replace=False))
        yield np.concatenate(batch)


@dataclass
class TrainResult:
    model: ToyModel
    history: list = field(default_factory=list)
    evals: list = field(default_factory=list)


def evaluate_model(model: ToyModel, data: Dataset) -> EvalReport:
    """Student-only retrieval evaluation on the probe/gallery splits."""
    gallery, probe = data.gallery, data.probe
    g = model.predict(gallery.x).emb
    p = model.predict(probe.x).emb
    return evaluate(build_index(g, gallery.labels, p, probe.labels))


def teacher_outputs(teachers, x):
    """Forward-only teacher evaluation; returns plain arrays."""
    outs = []
    for t in teachers:
        o = t.predict(x)
        outs.append(TeacherOutput(o.logits, o.emb, tuple(o.layers)))
    return outs


def train(model: ToyModel, data: Dataset, hp: HyperParams, tcfg: TrainConfig, teachers=(),
          log=None) -> TrainResult:
    """Optimise ``model`` in place-free fashion and return a trained copy plus history.

    Without augmentation the teachers are run once over the training split.
    With ``augment_sigma > 0`` every batch is a fresh jitter of the raw
    samples and the teachers see exactly what the student sees.  Teacher
    parameters are never touched.
    """
    model = model.copy()
    train_split = data.train
    train_raw = data.samples[data.split == 0]
    teachers = list(teachers) if hp.uses_teachers else []
    if hp.uses_teachers and not teachers:
        raise ConfigError("distillation weights are non-zero but no teacher was supplied")
    augment = tcfg.augment_sigma > 0
    cached = teacher_outputs(teachers, train_split.x) if (teachers and not augment) else []

    rng = np.random.default_rng(tcfg.seed)
    noise_rng = np.random.default_rng([tcfg.seed, 1])
    batches = pk_batches(train_split.labels, tcfg, rng)
    opt = Optimizer(model.params, tcfg)
    result = TrainResult(model)
    for step in range(1, tcfg.steps + 1):
        idx = next(batches)
        tape = gc.Tape()
        leaves = {k: tape.leaf(v, k) for k, v in model.params.items()}
        if augment:
            raw = train_raw[idx] + tcfg.augment_sigma * noise_rng.standard_normal(train_raw[idx].shape)
            x = np.einsum("pkf,nf->npk", data.projections, raw)
        else:
            x = train_split.x[idx]
        out = model.forward(x, leaves)
        bank = None
        if cached:
            bank = TeacherBank([TeacherOutput(o.logits[idx], o.emb[idx], tuple(h[idx] for h in o.layers))
                                for o in cached])
        elif teachers:
            bank = TeacherBank(teacher_outputs(teachers, x))
        br = total_loss(out, train_split.labels[idx], bank, hp)
        if not np.isfinite(br.total):
            raise TrainingError(f"non-finite loss at step {step}", step=step)
        tape.backward(br.loss)
        grads = {k: leaves[k].grad for k in model.params}
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise TrainingError(f"non-finite gradient at step {step}", step=step)
        opt.step(model.params, grads)
        record = {"step": step, **br.as_dict()}
        result.history.append(record)
        if tcfg.eval_every and step % tcfg.eval_every == 0:
            rep = evaluate_model(model, data)
            result.evals.append({"step": step, **rep.summary()})
            if log:
                log(f"step {step}: loss {br.total:.4f} rank1 {rep.rank1:.2f}")
    return result


def distill(student_cfg: ModelConfig, teachers, data: Dataset, hp: HyperParams, tcfg: TrainConfig,
            init_seed=None) -> TrainResult:
    """Train a fresh student of ``student_cfg`` against frozen ``teachers``."""
    split = data.train
    num_classes = data.config.num_ids
    for k, t in enumerate(teachers):
        if t.num_classes != num_classes:
            raise CheckpointError(f"teacher {k} predicts {t.num_classes} classes, data has {num_classes}")
    student = ToyModel(student_cfg, split.x.shape[2], num_classes,
                       seed=tcfg.seed if init_seed is None else init_seed)
    frozen = [copy.deepcopy(t) for t in teachers]
    return train(student, data, hp, tcfg, frozen)
