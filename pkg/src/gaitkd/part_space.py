"""Part-structured model outputs and the parameter-free shared part space.

Every tensor uses the (batch, channel, part) axis order.  Alignment keeps
the lowest-indexed parts of both models, so a teacher with 8 parts and a
student with 4 are compared on parts 1..4.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ClassCountError, NumericError, ShapeError
from .gradcore import Var, value_of

__all__ = ["PartLogits", "PartEmbeddings", "AlignedPair", "align_parts", "part_slice",
           "crop_parts", "crop_channels", "check_part_tensor"]


def check_part_tensor(data, *, min_channels=1, what="tensor"):
    arr = value_of(data)
    if arr.ndim != 3:
        raise ShapeError(f"{what} must be 3-D (batch, channel, part), got shape {arr.shape}")
    b, k, p = arr.shape
    if b < 1 or k < min_channels or p < 1:
        raise ShapeError(f"{what} has invalid shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{what} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class PartLogits:
    """Classification scores, shape (B, C, P).  ``data`` may be a numpy array or a Var."""

    data: object

    def __post_init__(self):
        check_part_tensor(self.data, min_channels=2, what="PartLogits")

    @property
    def shape(self):
        return value_of(self.data).shape

    @property
    def num_parts(self):
        return self.shape[2]

    @property
    def num_classes(self):
        return self.shape[1]


@dataclass(frozen=True)
class PartEmbeddings:
    """Retrieval features, shape (B, D, P)."""

    data: object

    def __post_init__(self):
        check_part_tensor(self.data, what="PartEmbeddings")

    @property
    def shape(self):
        return value_of(self.data).shape

    @property
    def num_parts(self):
        return self.shape[2]

    @property
    def dim(self):
        return self.shape[1]


@dataclass(frozen=True)
class AlignedPair:
    student_logits: PartLogits
    teacher_logits: PartLogits
    student_emb: PartEmbeddings
    teacher_emb: PartEmbeddings
    P: int


def crop_parts(data, P):
    if isinstance(data, Var):
        return data if data.shape[2] == P else data[:, :, :P]
    arr = np.asarray(data)
    return arr if arr.shape[2] == P else arr[:, :, :P]


def crop_channels(data, D):
    if isinstance(data, Var):
        return data if data.shape[1] == D else data[:, :D, :]
    arr = np.asarray(data)
    return arr if arr.shape[1] == D else arr[:, :D, :]


def align_parts(student, teacher, dim_align="crop_min") -> AlignedPair:
    """Restrict a (logits, embeddings) student/teacher pair to their common parts.

    With ``dim_align="crop_min"`` embeddings of unequal width are also cut to
    the smaller width; ``"strict"`` rejects such pairs instead.
    """
    s_logits, s_emb = student
    t_logits, t_emb = teacher
    s_logits = s_logits if isinstance(s_logits, PartLogits) else PartLogits(s_logits)
    t_logits = t_logits if isinstance(t_logits, PartLogits) else PartLogits(t_logits)
    s_emb = s_emb if isinstance(s_emb, PartEmbeddings) else PartEmbeddings(s_emb)
    t_emb = t_emb if isinstance(t_emb, PartEmbeddings) else PartEmbeddings(t_emb)

    batch = {s_logits.shape[0], t_logits.shape[0], s_emb.shape[0], t_emb.shape[0]}
    if len(batch) != 1:
        raise ShapeError(f"batch dimensions disagree: {sorted(batch)}")
    if s_logits.num_classes != t_logits.num_classes:
        raise ClassCountError(
            f"class counts differ: student {s_logits.num_classes}, teacher {t_logits.num_classes}")
    if s_logits.num_parts != s_emb.num_parts or t_logits.num_parts != t_emb.num_parts:
        raise ShapeError("logits and embeddings of one model disagree on part count")

    P = min(s_logits.num_parts, t_logits.num_parts)
    s_e, t_e = s_emb.data, t_emb.data
    if s_emb.dim != t_emb.dim:
        if dim_align != "crop_min":
            raise ShapeError(f"embedding dims differ ({s_emb.dim} vs {t_emb.dim}) and dim_align={dim_align!r}")
        D = min(s_emb.dim, t_emb.dim)
        s_e, t_e = crop_channels(s_e, D), crop_channels(t_e, D)
    return AlignedPair(
        student_logits=PartLogits(crop_parts(s_logits.data, P)),
        teacher_logits=PartLogits(crop_parts(t_logits.data, P)),
        student_emb=PartEmbeddings(crop_parts(s_e, P)),
        teacher_emb=PartEmbeddings(crop_parts(t_e, P)),
        P=P,
    )


def part_slice(tensor, p):
    """The B x K matrix of part ``p`` (1-based, as in the part index convention)."""
    data = tensor.data if isinstance(tensor, (PartLogits, PartEmbeddings)) else tensor
    P = value_of(data).shape[2]
    if not 1 <= p <= P:
        raise IndexError(f"part index {p} outside 1..{P}")
    return data[:, :, p - 1]
