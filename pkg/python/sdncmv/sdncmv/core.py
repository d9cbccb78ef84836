"""Domain types shared by every stage of the pipeline.

Regions are 1-based wherever a user sees them (edge_index, edge_pair, column
names, edge lists) and 0-based inside numpy arrays. Edge vectors follow the
column-stacked upper triangle: for p = 4 the order is
(1,2), (1,3), (2,3), (1,4), (2,4), (3,4).
"""

import dataclasses
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from sdncmv import errors


def n_edges(p):
    """Number of unordered region pairs, p(p-1)/2."""
    return p * (p - 1) // 2


def edge_index(i, j, p):
    """Maps a 1-based region pair to its 0-based flat edge index.

    Args:
        i: the smaller region, 1 <= i < j.
        j: the larger region, j <= p.
        p: number of regions.

    Returns:
        The position of (i, j) in the column-stacked upper triangle.

    Raises:
        DomainError: if the pair is out of range or i >= j.
    """
    if not 1 <= i < j <= p:
        raise errors.DomainError(
            f'edge ({i}, {j}) is not a valid pair for p={p}')
    return (j - 1) * (j - 2) // 2 + (i - 1)


def edge_pair(k, p):
    """Inverse of edge_index: returns the 1-based pair at flat index k."""
    if not 0 <= k < n_edges(p):
        raise errors.DomainError(f'edge index {k} out of range for p={p}')
    j0 = (1 + math.isqrt(1 + 8 * k)) // 2
    i0 = k - j0 * (j0 - 1) // 2
    return i0 + 1, j0 + 1


def _readonly(array, dtype=float):
    out = np.array(array, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclasses.dataclass(frozen=True)
class EdgeIndexMap:
    """The canonical ordering of the p(p-1)/2 region pairs.

    Attributes:
        p: number of regions.
        rows: 0-based smaller region of every edge, in flat order.
        cols: 0-based larger region of every edge, in flat order.
    """
    p: int
    rows: np.ndarray = dataclasses.field(init=False,
                                         repr=False,
                                         compare=False)
    cols: np.ndarray = dataclasses.field(init=False,
                                         repr=False,
                                         compare=False)

    def __post_init__(self):
        if self.p < 2:
            raise errors.DomainError(f'need at least 2 regions, got {self.p}')
        # Row-major lower triangle is the column-major upper triangle.
        lower_rows, lower_cols = np.tril_indices(self.p, -1)
        object.__setattr__(self, 'rows', _readonly(lower_cols, int))
        object.__setattr__(self, 'cols', _readonly(lower_rows, int))

    def __len__(self):
        return n_edges(self.p)

    @property
    def pairs(self) -> List[Tuple[int, int]]:
        """1-based (i, j) pairs in flat order."""
        return [(int(i) + 1, int(j) + 1) for i, j in zip(self.rows, self.cols)]

    def index(self, i, j):
        return edge_index(i, j, self.p)

    def pair(self, k):
        return edge_pair(k, self.p)

    def gather(self, matrix):
        """Returns the upper-triangle entries of a p x p matrix in flat order."""
        matrix = np.asarray(matrix)
        if matrix.shape != (self.p, self.p):
            raise errors.DomainError(
                f'expected a {self.p}x{self.p} matrix, got {matrix.shape}')
        return matrix[self.rows, self.cols]

    def scatter(self, values):
        """Builds the symmetric p x p matrix with zero diagonal from values."""
        values = np.asarray(values, dtype=float)
        if values.shape != (len(self),):
            raise errors.DomainError(
                f'expected {len(self)} edge values, got {values.shape}')
        out = np.zeros((self.p, self.p))
        out[self.rows, self.cols] = values
        out[self.cols, self.rows] = values
        return out

    def column_names(self):
        return [f'w_{i}_{j}' for i, j in self.pairs]


@dataclasses.dataclass(frozen=True, eq=False)
class SubjectMatrix:
    """One subject's p x q spatial-by-temporal observation.

    Attributes:
        id: subject identifier.
        group: 1 for case, 0 for control.
        data: p x q matrix, rows are regions and columns are time points.
    """
    id: str
    group: int
    data: np.ndarray

    def __post_init__(self):
        data = _readonly(self.data)
        if data.ndim != 2:
            raise errors.DomainError(
                f'subject {self.id}: data must be a matrix, got '
                f'{data.ndim} dimensions')
        p, q = data.shape
        if p < 2 or q < 3:
            raise errors.DomainError(
                f'subject {self.id}: need p >= 2 and q >= 3, got {p}x{q}')
        if not np.all(np.isfinite(data)):
            raise errors.DomainError(f'subject {self.id}: non-finite entries')
        if self.group not in (0, 1):
            raise errors.DomainError(
                f'subject {self.id}: group must be 0 or 1, got {self.group}')
        object.__setattr__(self, 'group', int(self.group))
        object.__setattr__(self, 'data', data)

    @property
    def p(self):
        return self.data.shape[0]

    @property
    def q(self):
        return self.data.shape[1]


@dataclasses.dataclass(frozen=True, eq=False)
class CohortDataset:
    """Subjects of both groups plus their confounder vectors.

    Attributes:
        subjects: the subject matrices, all of the same shape.
        confounders: n x M matrix; M may be zero.
    """
    subjects: Tuple[SubjectMatrix, ...]
    confounders: Optional[np.ndarray] = None

    def __post_init__(self):
        subjects = tuple(self.subjects)
        if not subjects:
            raise errors.DomainError('a cohort needs at least one subject')
        shapes = {s.data.shape for s in subjects}
        if len(shapes) != 1:
            raise errors.DomainError(
                f'subjects have differing shapes: {sorted(shapes)}')
        if self.confounders is None:
            confounders = np.zeros((len(subjects), 0))
        else:
            confounders = np.array(self.confounders, dtype=float, ndmin=2)
            if confounders.size == 0:
                confounders = np.zeros((len(subjects), 0))
        if confounders.shape[0] != len(subjects):
            raise errors.DomainError(
                f'{confounders.shape[0]} confounder rows for '
                f'{len(subjects)} subjects')
        if not np.all(np.isfinite(confounders)):
            raise errors.DomainError('non-finite confounder values')
        confounders.flags.writeable = False
        object.__setattr__(self, 'subjects', subjects)
        object.__setattr__(self, 'confounders', confounders)

    def __len__(self):
        return len(self.subjects)

    @property
    def p(self):
        return self.subjects[0].p

    @property
    def q(self):
        return self.subjects[0].q

    @property
    def m(self):
        return self.confounders.shape[1]

    @property
    def labels(self):
        return np.array([s.group for s in self.subjects], dtype=int)

    @property
    def n1(self):
        return int(np.sum(self.labels == 1))

    @property
    def n2(self):
        return int(np.sum(self.labels == 0))

    def require_both_groups(self):
        if self.n1 < 1 or self.n2 < 1:
            raise errors.DomainError(
                f'training needs both groups, got n1={self.n1} n2={self.n2}')


@dataclasses.dataclass(frozen=True, eq=False)
class PrecisionEstimate:
    """A symmetric sparse precision matrix estimate.

    Attributes:
        omega: exactly symmetric p x p matrix with positive diagonal.
        lambda_: CLIME tuning value that produced it.
        density: fraction of nonzero off-diagonal entries.
    """
    omega: np.ndarray
    lambda_: float
    density: float

    def __post_init__(self):
        omega = _readonly(self.omega)
        if omega.ndim != 2 or omega.shape[0] != omega.shape[1]:
            raise errors.DomainError(f'omega must be square, got {omega.shape}')
        if not np.array_equal(omega, omega.T):
            raise errors.DomainError('omega must be exactly symmetric')
        if np.any(np.diag(omega) <= 0):
            raise errors.NumericError(
                'precision estimate has a nonpositive diagonal entry')
        if not 0.0 <= self.density <= 1.0:
            raise errors.DomainError(f'density {self.density} outside [0, 1]')
        object.__setattr__(self, 'omega', omega)

    @property
    def p(self):
        return self.omega.shape[0]


@dataclasses.dataclass(frozen=True, eq=False)
class EdgeFeatureVector:
    """Fisher-transformed partial correlations in EdgeIndexMap order."""
    values: np.ndarray

    def __post_init__(self):
        values = _readonly(self.values)
        if values.ndim != 1:
            raise errors.DomainError('edge features must be a vector')
        if not np.all(np.isfinite(values)):
            raise errors.DomainError('edge features must be finite')
        object.__setattr__(self, 'values', values)

    def __len__(self):
        return self.values.shape[0]


@dataclasses.dataclass(frozen=True, eq=False)
class FeatureSet:
    """Design data for the classification stage.

    Attributes:
        ids: subject identifiers.
        labels: 0/1 labels, length n.
        confounders: n x M matrix.
        values: n x p(p-1)/2 matrix of edge features.
        p: number of regions the edges were built from.
    """
    ids: Tuple[str, ...]
    labels: np.ndarray
    confounders: np.ndarray
    values: np.ndarray
    p: int

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        labels = _readonly(self.labels, int).reshape(-1)
        values = _readonly(self.values)
        if self.confounders is None or np.size(self.confounders) == 0:
            confounders = np.zeros((len(ids), 0))
        else:
            confounders = np.array(self.confounders, dtype=float)
        confounders = _readonly(confounders)
        n = len(ids)
        if labels.shape != (n,) or values.ndim != 2 or values.shape[0] != n:
            raise errors.DomainError(
                f'inconsistent feature set: {n} ids, labels {labels.shape}, '
                f'values {values.shape}')
        if confounders.ndim != 2 or confounders.shape[0] != n:
            raise errors.DomainError(
                f'confounders shape {confounders.shape} does not match n={n}')
        if values.shape[1] != n_edges(self.p):
            raise errors.DomainError(
                f'{values.shape[1]} feature columns, expected '
                f'{n_edges(self.p)} for p={self.p}')
        if not np.all(np.isin(labels, (0, 1))):
            raise errors.DomainError('labels must be 0 or 1')
        object.__setattr__(self, 'ids', ids)
        object.__setattr__(self, 'labels', labels)
        object.__setattr__(self, 'confounders', confounders)
        object.__setattr__(self, 'values', values)

    def __len__(self):
        return len(self.ids)

    @property
    def d(self):
        return self.values.shape[1]

    @property
    def m(self):
        return self.confounders.shape[1]

    @property
    def n1(self):
        return int(np.sum(self.labels == 1))

    @property
    def n2(self):
        return int(np.sum(self.labels == 0))

    def subset(self, indices: Sequence[int]):
        """Rows at indices, repeats allowed (bootstrap samples)."""
        indices = np.asarray(indices, dtype=int)
        return FeatureSet(ids=tuple(self.ids[i] for i in indices),
                          labels=self.labels[indices],
                          confounders=self.confounders[indices],
                          values=self.values[indices],
                          p=self.p)
