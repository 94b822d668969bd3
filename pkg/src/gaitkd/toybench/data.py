"""Synthetic identity data with view nuisance and part-wise input projections.

Each identity has a Gaussian prototype.  A sample is the prototype pushed
through one of ``view_count`` fixed random orthogonal maps (shared by all
identities) plus isotropic noise.  Part ``p`` of a model sees the fixed
random projection ``R_p x`` of the sample, so a model with fewer parts
simply reads the first few projections.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import ortho_group

from ..errors import ConfigError


@dataclass(frozen=True)
class SynthConfig:
    num_ids: int = 60
    samples_per_id: int = 12
    seq_feature_dim: int = 24
    num_parts: int = 8
    part_input_dim: int = 12
    view_count: int = 4
    noise_sigma: float = 0.5
    gallery_per_id: int = 2
    probe_per_id: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.num_ids < 2:
            raise ConfigError("num_ids must be >= 2")
        if self.samples_per_id < 2:
            raise ConfigError("samples_per_id must be >= 2")
        if min(self.seq_feature_dim, self.num_parts, self.part_input_dim, self.view_count) < 1:
            raise ConfigError("dimensions, part count and view count must be >= 1")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.gallery_per_id < 0 or self.probe_per_id < 0:
            raise ConfigError("gallery_per_id and probe_per_id must be >= 0")
        if self.samples_per_id - self.gallery_per_id - self.probe_per_id < 2:
            raise ConfigError("each identity needs at least 2 training samples after the gallery/probe split")
        if (self.gallery_per_id == 0) != (self.probe_per_id == 0):
            raise ConfigError("gallery_per_id and probe_per_id must both be zero or both positive")

    def digest(self):
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class Split:
    x: np.ndarray       # (N, num_parts, part_input_dim)
    labels: np.ndarray  # (N,)
    views: np.ndarray   # (N,)

    def __len__(self):
        return len(self.labels)


@dataclass
class Dataset:
    config: SynthConfig
    samples: np.ndarray  # (N, seq_feature_dim), raw vectors before part projection
    labels: np.ndarray
    views: np.ndarray
    split: np.ndarray    # 0 train, 1 gallery, 2 probe
    projections: np.ndarray  # (num_parts, part_input_dim, seq_feature_dim)

    def __len__(self):
        return len(self.labels)

    def part_inputs(self, idx=None):
        x = self.samples if idx is None else self.samples[idx]
        return np.einsum("pkf,nf->npk", self.projections, x)

    def subset(self, which):
        code = {"train": 0, "gallery": 1, "probe": 2}[which]
        idx = np.flatnonzero(self.split == code)
        return Split(self.part_inputs(idx), self.labels[idx], self.views[idx])

    @property
    def train(self):
        return self.subset("train")

    @property
    def gallery(self):
        return self.subset("gallery")

    @property
    def probe(self):
        return self.subset("probe")

    def to_csv(self, handle):
        writer = csv.writer(handle, lineterminator="\n")
        F = self.samples.shape[1]
        writer.writerow(["index", "label", "view", "split"] + [f"x{j}" for j in range(F)])
        names = ("train", "gallery", "probe")
        for i in range(len(self)):
            writer.writerow([i, int(self.labels[i]), int(self.views[i]), names[self.split[i]]]
                            + [repr(float(v)) for v in self.samples[i]])


def generate_dataset(cfg: SynthConfig) -> Dataset:
    rng = np.random.default_rng(cfg.seed)
    F = cfg.seq_feature_dim
    prototypes = rng.standard_normal((cfg.num_ids, F))
    if F == 1:
        views = np.sign(rng.standard_normal((cfg.view_count, 1, 1))) + 0.0
    else:
        views = np.stack([ortho_group.rvs(F, random_state=rng) for _ in range(cfg.view_count)])
    projections = rng.standard_normal((cfg.num_parts, cfg.part_input_dim, F)) / np.sqrt(F)

    labels = np.repeat(np.arange(cfg.num_ids), cfg.samples_per_id)
    views_idx = np.tile(np.arange(cfg.samples_per_id) % cfg.view_count, cfg.num_ids)
    clean = np.einsum("nij,nj->ni", views[views_idx], prototypes[labels])
    samples = clean + cfg.noise_sigma * rng.standard_normal(clean.shape)

    split = np.zeros(len(labels), dtype=np.int64)
    for c in range(cfg.num_ids):
        members = np.flatnonzero(labels == c)
        order = rng.permutation(members)
        split[order[:cfg.gallery_per_id]] = 1
        split[order[cfg.gallery_per_id:cfg.gallery_per_id + cfg.probe_per_id]] = 2
    return Dataset(cfg, samples, labels, views_idx, split, projections)
