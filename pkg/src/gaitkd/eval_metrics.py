"""Gallery/probe retrieval metrics and the teacher-gap analysis.

Part embeddings are l2-normalised per part, concatenated, and compared
with Euclidean distance.  Rankings are stable: equal distances keep gallery
order.  mINP follows the re-identification convention
INP = (#relevant) / (rank of the last relevant item).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DegenerateGapError, NumericError, ShapeError

__all__ = ["RetrievalIndex", "EvalReport", "GapRecord", "flatten_embeddings", "build_index",
           "ranked_matches", "rank_k", "mean_ap", "mean_inp", "evaluate", "gap_closed"]


def flatten_embeddings(emb):
    """(N, D, P) part embeddings -> (N, D*P), each part unit-normalised first."""
    e = np.asarray(emb, dtype=float)
    if e.ndim == 2:
        return e
    if e.ndim != 3:
        raise ShapeError(f"embeddings must be (N, D, P) or (N, F), got {e.shape}")
    norm = np.linalg.norm(e, axis=1, keepdims=True)
    if np.any(norm <= 1e-12):
        raise NumericError("cannot normalise a zero part embedding")
    return np.moveaxis(e / norm, 2, 1).reshape(e.shape[0], -1)


@dataclass
class RetrievalIndex:
    gallery: np.ndarray
    gallery_labels: np.ndarray
    probe: np.ndarray
    probe_labels: np.ndarray

    def __post_init__(self):
        self.gallery = np.asarray(self.gallery, dtype=float)
        self.probe = np.asarray(self.probe, dtype=float)
        self.gallery_labels = np.asarray(self.gallery_labels)
        self.probe_labels = np.asarray(self.probe_labels)
        if len(self.gallery) == 0 or len(self.probe) == 0:
            raise ShapeError("gallery and probe must be non-empty")
        if self.gallery.ndim != 2 or self.probe.ndim != 2 or self.gallery.shape[1] != self.probe.shape[1]:
            raise ShapeError(f"gallery {self.gallery.shape} and probe {self.probe.shape} must be (N, F) with equal F")
        if len(self.gallery_labels) != len(self.gallery) or len(self.probe_labels) != len(self.probe):
            raise ShapeError("label counts do not match embedding counts")
        if not (np.all(np.isfinite(self.gallery)) and np.all(np.isfinite(self.probe))):
            raise NumericError("non-finite embeddings in retrieval index")
        missing = set(self.probe_labels.tolist()) - set(self.gallery_labels.tolist())
        if missing:
            raise ShapeError(f"probe labels absent from the gallery: {sorted(missing)}")


def build_index(gallery_emb, gallery_labels, probe_emb, probe_labels):
    return RetrievalIndex(flatten_embeddings(gallery_emb), gallery_labels,
                          flatten_embeddings(probe_emb), probe_labels)


def ranked_matches(index: RetrievalIndex):
    """Boolean (N_p, N_g) matrix: does the r-th ranked gallery item share the probe's label."""
    dist = cdist(index.probe, index.gallery)
    order = np.argsort(dist, axis=1, kind="stable")
    return index.gallery_labels[order] == index.probe_labels[:, None]


def _per_query(matches):
    hits = np.cumsum(matches, axis=1)
    ranks = np.arange(1, matches.shape[1] + 1)
    n_rel = matches.sum(axis=1)
    ap = np.sum(np.where(matches, hits / ranks, 0.0), axis=1) / n_rel
    last = matches.shape[1] - np.argmax(matches[:, ::-1], axis=1)
    inp = n_rel / last
    first = np.argmax(matches, axis=1) + 1
    return first, ap, inp


def rank_k(index: RetrievalIndex, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    matches = ranked_matches(index)
    return 100.0 * float(np.mean(matches[:, :k].any(axis=1)))


def mean_ap(index: RetrievalIndex) -> float:
    _, ap, _ = _per_query(ranked_matches(index))
    return 100.0 * float(np.mean(ap))


def mean_inp(index: RetrievalIndex) -> float:
    _, _, inp = _per_query(ranked_matches(index))
    return 100.0 * float(np.mean(inp))


@dataclass
class EvalReport:
    rank1: float
    rank5: float
    map: float
    minp: float
    detail: list = field(default_factory=list, repr=False)

    def summary(self):
        return {"rank1": self.rank1, "rank5": self.rank5, "map": self.map, "minp": self.minp}

    def to_kv(self):
        return "".join(f"{k}={v:.6f}\n" for k, v in self.summary().items())

    def detail_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["probe", "label", "first_hit_rank", "ap", "inp"])
        writer.writerows(self.detail)
        return buf.getvalue()


def evaluate(index: RetrievalIndex) -> EvalReport:
    matches = ranked_matches(index)
    first, ap, inp = _per_query(matches)
    detail = [[i, int(index.probe_labels[i]), int(first[i]), float(ap[i]), float(inp[i])]
              for i in range(len(first))]
    return EvalReport(
        rank1=100.0 * float(np.mean(first <= 1)),
        rank5=100.0 * float(np.mean(first <= 5)),
        map=100.0 * float(np.mean(ap)),
        minp=100.0 * float(np.mean(inp)),
        detail=detail,
    )


@dataclass(frozen=True)
class GapRecord:
    R_t: float
    R_b: float
    R_s: float

    def __post_init__(self):
        for name in ("R_t", "R_b", "R_s"):
            v = getattr(self, name)
            if not 0.0 <= v <= 100.0:
                raise ValueError(f"{name} must be a percentage in [0, 100], got {v}")


def gap_closed(rec: GapRecord) -> float:
    """Share of the teacher-baseline Rank-1 gap recovered by distillation, in percent."""
    if rec.R_t == rec.R_b:
        raise DegenerateGapError("teacher and baseline Rank-1 are equal; the gap is undefined")
    return (rec.R_s - rec.R_b) / (rec.R_t - rec.R_b) * 100.0
