"""Descriptor similarity metrics. Higher is always more similar.

Four metrics are available: cosine (full vector, scale invariant),
Euclidean (negated distance; adequate for standardized CT intensities),
mutual information (joint-histogram based, robust to intensity remapping,
the metric of choice for MR), and the default combined score, a weighted
sum of cosine and bin-count-normalized mutual information:

    combined = w_cos * cosine + w_mi * MI / ln(K)

Mutual information over descriptors a, b uses only dimensions valid in
both, bins each side by its own min/max into K bins (default 16), and with
joint probabilities p(x, y) and marginals p(x), p(y) evaluates

    sum_xy p(x, y) * ln(p(x, y) / (p(x) * p(y)))

with 0*ln(0) taken as 0. Natural log throughout; the choice of base only
rescales MI and the combined score divides it back out. Degenerate inputs
(under two jointly-valid dimensions, or a side constant on them) score 0
rather than raising, so searches never abort over air or padding.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from . import _kernels
from .sampling import Descriptor


class SimilarityKind(Enum):
    """Selectable similarity metric; values match the CLI flag spellings."""

    COSINE = "cosine"
    EUCLIDEAN = "euclidean"
    MUTUAL_INFO = "mi"
    COMBINED = "combined"

    @classmethod
    def parse(cls, name: str) -> "SimilarityKind":
        for kind in cls:
            if kind.value == name:
                return kind
        raise ValueError(
            f"unknown metric {name!r}; expected one of "
            f"{[k.value for k in cls]}"
        )

    @property
    def code(self) -> int:
        return _METRIC_CODES[self]


_METRIC_CODES = {
    SimilarityKind.COSINE: _kernels.METRIC_COSINE,
    SimilarityKind.EUCLIDEAN: _kernels.METRIC_EUCLIDEAN,
    SimilarityKind.MUTUAL_INFO: _kernels.METRIC_MUTUAL_INFO,
    SimilarityKind.COMBINED: _kernels.METRIC_COMBINED,
}


@dataclass(frozen=True)
class HistogramSpec:
    """Joint-histogram parameters for mutual information."""

    bins: int = 16

    def __post_init__(self):
        if self.bins < 2:
            raise ValueError("bins must be >= 2")


def _check_dims(a: Descriptor, b: Descriptor) -> None:
    if a.dimension != b.dimension:
        raise ValueError(
            f"descriptor dimensions differ: {a.dimension} vs {b.dimension}"
        )


def cosine_sim(a: Descriptor, b: Descriptor) -> float:
    """Cosine similarity in [-1, 1] over the full vector dimension.

    Zero-filled invalid entries participate (they carry the edge
    information); if either vector has zero norm the score is 0.
    """
    _check_dims(a, b)
    return float(_kernels.cosine_pair(a.values, b.values))


def euclidean_sim(a: Descriptor, b: Descriptor) -> float:
    """Negated Euclidean distance (<= 0) so that higher is more similar."""
    _check_dims(a, b)
    return float(_kernels.euclidean_pair(a.values, b.values))


def mutual_info(
    a: Descriptor, b: Descriptor, spec: HistogramSpec = HistogramSpec()
) -> float:
    """Mutual information (>= 0, natural log) of the joint intensity bins."""
    _check_dims(a, b)
    return float(_kernels.mi_pair(a.values, a.valid, b.values, b.valid, spec.bins))


def combined_sim(
    a: Descriptor,
    b: Descriptor,
    spec: HistogramSpec = HistogramSpec(),
    cosine_weight: float = 1.0,
    mi_weight: float = 1.0,
) -> float:
    """Cosine plus normalized mutual information; the default search score.

    MI is divided by ln(bins) so both terms live on comparable [~0, 1]
    scales; with default weights the score is bounded by 2.
    """
    _check_dims(a, b)
    return float(
        _kernels.combined_pair(
            a.values, a.valid, b.values, b.valid, spec.bins,
            float(cosine_weight), float(mi_weight),
        )
    )


def score(
    a: Descriptor,
    b: Descriptor,
    kind: SimilarityKind,
    spec: HistogramSpec = HistogramSpec(),
    cosine_weight: float = 1.0,
    mi_weight: float = 1.0,
) -> float:
    """Dispatch to the metric selected by ``kind``."""
    if kind is SimilarityKind.COSINE:
        return cosine_sim(a, b)
    if kind is SimilarityKind.EUCLIDEAN:
        return euclidean_sim(a, b)
    if kind is SimilarityKind.MUTUAL_INFO:
        return mutual_info(a, b, spec)
    return combined_sim(a, b, spec, cosine_weight, mi_weight)

