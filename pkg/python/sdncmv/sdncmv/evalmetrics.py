"""Classification and differential-network recovery metrics."""

import dataclasses
import math
from typing import FrozenSet, Iterable, List, NamedTuple

import numpy as np

from sdncmv import core
from sdncmv import errors


def misclassification_rate(predicted, truth):
    """Fraction of positions where predicted and true labels differ."""
    predicted = np.asarray(predicted).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if predicted.shape != truth.shape or predicted.size == 0:
        raise errors.DomainError(
            f'need equal nonempty label vectors, got {predicted.size} and '
            f'{truth.size}')
    return float(np.mean(predicted != truth))


@dataclasses.dataclass(frozen=True)
class SupportComparison:
    """True and estimated differential edges as flat edge indices.

    Attributes:
        truth: edges with a nonzero precision difference.
        estimated: edges declared differential.
        universe: number of candidate edges, p(p-1)/2.
    """
    truth: FrozenSet[int]
    estimated: FrozenSet[int]
    universe: int

    def __post_init__(self):
        truth = frozenset(int(k) for k in self.truth)
        estimated = frozenset(int(k) for k in self.estimated)
        for name, edges in (('truth', truth), ('estimated', estimated)):
            if edges and (min(edges) < 0 or max(edges) >= self.universe):
                raise errors.DomainError(
                    f'{name} support outside the {self.universe} edges')
        object.__setattr__(self, 'truth', truth)
        object.__setattr__(self, 'estimated', estimated)

    @classmethod
    def from_pairs(cls, truth_pairs, estimated_pairs, p):
        """Builds a comparison from 1-based (i, j) region pairs."""
        emap = core.EdgeIndexMap(p)
        return cls(frozenset(emap.index(*sorted(e[:2])) for e in truth_pairs),
                   frozenset(
                       emap.index(*sorted(e[:2])) for e in estimated_pairs),
                   len(emap))


class SupportRates(NamedTuple):
    tpr: float
    tnr: float
    tdr: float


def support_metrics(comparison):
    """True positive, true negative and true discovery rates.

    Empty denominators follow fixed conventions: TPR is 1 when the truth is
    empty, TNR is 1 when every edge is differential, and TDR is 1 when both
    supports are empty and 0 when only the estimate is.
    """
    truth, estimated = comparison.truth, comparison.estimated
    hits = len(truth & estimated)
    negatives = comparison.universe - len(truth)
    true_negatives = comparison.universe - len(truth | estimated)
    tpr = hits / len(truth) if truth else 1.0
    tnr = true_negatives / negatives if negatives else 1.0
    if estimated:
        tdr = hits / len(estimated)
    else:
        tdr = 0.0 if truth else 1.0
    return SupportRates(tpr, tnr, tdr)


def support_from_counts(counts, tau):
    """Flat indices of the edges whose count exceeds tau."""
    return frozenset(np.flatnonzero(np.asarray(counts) > tau).tolist())


class PrPoint(NamedTuple):
    tau: int
    recall: float
    precision: float


def pr_curve(theta_counts, truth, B):  # pylint: disable=invalid-name
    """Recall and precision of {count > tau} for tau = B, B-1, ..., 0.

    Thresholds with an empty estimate are skipped; the remaining points are
    in order of increasing recall.
    """
    theta_counts = np.asarray(theta_counts)
    universe = theta_counts.shape[0]
    points: List[PrPoint] = []
    for tau in range(B, -1, -1):
        estimated = support_from_counts(theta_counts, tau)
        if not estimated:
            continue
        rates = support_metrics(SupportComparison(truth, estimated, universe))
        points.append(PrPoint(tau, rates.tpr, rates.tdr))
    return points


def average_precision(points):
    """Step-wise area sum_k (r_k - r_{k-1}) p_k with r_0 = 0."""
    area = 0.0
    previous = 0.0
    for point in points:
        area += (point.recall - previous) * point.precision
        previous = point.recall
    return area


def mean_and_se(values: Iterable[float]):
    """Mean and standard error, sd / sqrt(R); the error is nan for R = 1."""
    values = np.asarray(list(values), dtype=float)
    if values.size == 0:
        raise errors.DomainError('no values to summarize')
    if values.size == 1:
        return float(values[0]), math.nan
    return float(values.mean()), float(
        values.std(ddof=1) / math.sqrt(values.size))
