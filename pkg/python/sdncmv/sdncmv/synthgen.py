"""Synthetic matrix-variate cohorts for the Scenario 1-4 simulation study.

A scenario couples a temporal covariance family (AR or banded) with a
spatial graph family (hub or small-world). Both groups share one spatial
graph; the control group's base precision equals the case group's with the
off-diagonal signs of a few blocks flipped, so the true differential network
is confined to those blocks. Each subject then gets its own perturbed
precision matrix and a matrix-normal sample with Kronecker covariance
Sigma_T (x) Sigma_S.

Every random draw comes from a numpy Generator seeded by a list
[master_seed, stream, counter], so outputs depend only on the config.
"""

import dataclasses
import enum
from typing import FrozenSet, List, Optional, Tuple

from absl import logging
import networkx as nx
import numpy as np
from scipy import linalg

from sdncmv import core
from sdncmv import errors

# Stream tags for derived generators.
_GRAPH_STREAM = 0
_SUBJECT_STREAM = 1

_PD_FLOOR = 1e-3


class GraphKind(enum.Enum):
    HUB = 'hub'
    SMALL_WORLD = 'small-world'


class TemporalKind(enum.Enum):
    AR = 'AR'
    BC = 'BC'


_SCENARIOS = {
    1: (TemporalKind.AR, GraphKind.HUB),
    2: (TemporalKind.AR, GraphKind.SMALL_WORLD),
    3: (TemporalKind.BC, GraphKind.HUB),
    4: (TemporalKind.BC, GraphKind.SMALL_WORLD),
}


def scenario_temporal_kind(scenario):
    return _scenario_entry(scenario)[0]


def scenario_graph_kind(scenario):
    return _scenario_entry(scenario)[1]


def _scenario_entry(scenario):
    if scenario not in _SCENARIOS:
        raise errors.DomainError(
            f'scenario must be one of {sorted(_SCENARIOS)}, got {scenario}')
    return _SCENARIOS[scenario]


@dataclasses.dataclass(frozen=True, eq=False)
class SpatialGraph:
    """Block-structured undirected graph over p regions.

    Attributes:
        p: number of nodes.
        adjacency: symmetric 0/1 matrix with zero diagonal.
        kind: hub or small-world.
        blocks: 0-based node indices of every block.
    """
    p: int
    adjacency: np.ndarray
    kind: GraphKind
    blocks: Tuple[np.ndarray, ...]

    @property
    def n_edges(self):
        return int(np.triu(self.adjacency, 1).sum())


@dataclasses.dataclass(frozen=True)
class ScenarioConfig:
    """Every constant of the simulation design, with the reference defaults."""
    scenario: int = 1
    p: int = 100
    q: int = 50
    n1: int = 30
    n2: int = 30
    n1_test: Optional[int] = None
    n2_test: Optional[int] = None
    hub_blocks: int = 5
    small_world_blocks: int = 10
    rewire_prob: float = 0.05
    ar_case: float = 0.4
    ar_control: float = 0.5
    bc_case: int = 4
    bc_control: int = 6
    fill_low: float = 1.0
    fill_high: float = 2.0
    flipped_blocks: int = 2
    pd_offset: float = 0.5
    perturb_var: float = 0.02
    seed: int = 0

    def __post_init__(self):
        _scenario_entry(self.scenario)
        counts = dict(p=self.p,
                      q=self.q,
                      n1=self.n1,
                      n2=self.n2,
                      hub_blocks=self.hub_blocks,
                      small_world_blocks=self.small_world_blocks,
                      flipped_blocks=self.flipped_blocks)
        for name, value in counts.items():
            if value < 1:
                raise errors.DomainError(f'{name} must be positive, got {value}')
        for name in ('n1_test', 'n2_test'):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise errors.DomainError(f'{name} must be >= 0, got {value}')
        if not 0.0 <= self.rewire_prob <= 1.0:
            raise errors.DomainError(
                f'rewire_prob must be in [0, 1], got {self.rewire_prob}')
        if not 0.0 < self.fill_low <= self.fill_high:
            raise errors.DomainError('fill range must satisfy 0 < low <= high')
        if self.perturb_var < 0 or self.pd_offset <= 0:
            raise errors.DomainError(
                'perturb_var must be >= 0 and pd_offset > 0')

    @property
    def test_sizes(self):
        n1_test = self.n1 if self.n1_test is None else self.n1_test
        n2_test = self.n2 if self.n2_test is None else self.n2_test
        return n1_test, n2_test

    def temporal_params(self):
        """(kind, case parameter, control parameter) for this scenario."""
        kind = scenario_temporal_kind(self.scenario)
        if kind is TemporalKind.AR:
            return kind, self.ar_case, self.ar_control
        return kind, self.bc_case, self.bc_control


@dataclasses.dataclass(frozen=True, eq=False)
class GroundTruth:
    """The true differential network Delta = Omega_X - Omega_Y.

    Attributes:
        delta_support: 0-based flat edge indices where Delta is nonzero.
        omega_x: case-group base precision.
        omega_y: control-group base precision.
    """
    delta_support: FrozenSet[int]
    omega_x: np.ndarray
    omega_y: np.ndarray

    @property
    def p(self):
        return self.omega_x.shape[0]

    def edges(self) -> List[Tuple[int, int, float]]:
        """1-based (i, j, delta) for every differential edge, in flat order."""
        delta = self.omega_x - self.omega_y
        out = []
        for k in sorted(self.delta_support):
            i, j = core.edge_pair(k, self.p)
            out.append((i, j, float(delta[i - 1, j - 1])))
        return out


def _partition(p, n_blocks, min_size, what):
    """Splits range(p) into n_blocks runs; the last run takes the remainder."""
    if n_blocks < 1 or n_blocks > p:
        raise errors.DomainError(
            f'cannot split {p} nodes into {n_blocks} {what} blocks')
    size = p // n_blocks
    if size < min_size:
        raise errors.DomainError(
            f'{what} blocks need >= {min_size} nodes, got {size} '
            f'(p={p}, blocks={n_blocks})')
    starts = [b * size for b in range(n_blocks)] + [p]
    return tuple(
        np.arange(starts[b], starts[b + 1]) for b in range(n_blocks))


def gen_hub_graph(p, n_blocks, rng):
    """Disjoint stars: each block has one hub linked to every other member.

    Args:
        p: number of nodes.
        n_blocks: number of equally sized blocks.
        rng: numpy Generator choosing the hub of every block.

    Returns:
        A SpatialGraph with sum(size - 1) edges.

    Raises:
        DomainError: if a block would have fewer than two nodes.
    """
    blocks = _partition(p, n_blocks, 2, 'hub')
    adjacency = np.zeros((p, p), dtype=int)
    for block in blocks:
        hub = block[rng.integers(len(block))]
        others = block[block != hub]
        adjacency[hub, others] = 1
        adjacency[others, hub] = 1
    return SpatialGraph(p, adjacency, GraphKind.HUB, blocks)


def gen_small_world_graph(p, n_subgraphs, rewire_prob, rng):
    """Disjoint Watts-Strogatz rings (radius 1) rewired inside their block.

    Args:
        p: number of nodes.
        n_subgraphs: number of blocks, each with at least 3 nodes.
        rewire_prob: per-edge rewiring probability.
        rng: numpy Generator seeding every block's rewiring.

    Returns:
        A SpatialGraph whose edge count equals p.
    """
    if not 0.0 <= rewire_prob <= 1.0:
        raise errors.DomainError(
            f'rewire probability must be in [0, 1], got {rewire_prob}')
    blocks = _partition(p, n_subgraphs, 3, 'small-world')
    adjacency = np.zeros((p, p), dtype=int)
    for block in blocks:
        ring = nx.watts_strogatz_graph(len(block),
                                       2,
                                       rewire_prob,
                                       seed=int(rng.integers(2**31 - 1)))
        local = nx.to_numpy_array(ring, nodelist=range(len(block)), dtype=int)
        adjacency[np.ix_(block, block)] = local
    return SpatialGraph(p, adjacency, GraphKind.SMALL_WORLD, blocks)


def _min_eig(matrix):
    return float(linalg.eigvalsh(matrix, subset_by_index=[0, 0])[0])


def gen_base_precisions(graph, rng, fill=(1.0, 2.0), flipped_blocks=2,
                        pd_offset=0.5):
    """Builds the two group base precisions and their true difference.

    Off-diagonal entries on the graph's edges get magnitudes from
    U[fill[0], fill[1]] with random signs. Omega_Y copies Omega_X with the
    off-diagonal signs of `flipped_blocks` random blocks flipped; only blocks
    holding at least one edge are eligible, so the difference is never empty.

    Both matrices are then shifted by one common multiple of the identity,
    s = max(|lambda_min(Omega_X)|, |lambda_min(Omega_Y)|) + pd_offset, so each
    has smallest eigenvalue at least pd_offset. Because the shift is shared,
    the diagonals of Omega_X and Omega_Y stay equal and their difference is
    confined to the flipped blocks' off-diagonal entries.

    Returns:
        (omega_x, omega_y, GroundTruth).

    Raises:
        DomainError: if fewer than flipped_blocks blocks hold an edge.
    """
    if len(graph.blocks) < max(flipped_blocks, 2):
        raise errors.DomainError(
            f'need at least {max(flipped_blocks, 2)} blocks to flip, graph has '
            f'{len(graph.blocks)}')
    eligible = [
        b for b, block in enumerate(graph.blocks)
        if graph.adjacency[np.ix_(block, block)].any()
    ]
    if len(eligible) < flipped_blocks:
        raise errors.DomainError(
            f'need {flipped_blocks} blocks with edges to flip, graph has '
            f'{len(eligible)}')
    p = graph.p
    rows, cols = np.nonzero(np.triu(graph.adjacency, 1))
    magnitudes = rng.uniform(fill[0], fill[1], size=rows.size)
    signs = rng.choice([-1.0, 1.0], size=rows.size)
    omega_x = np.zeros((p, p))
    omega_x[rows, cols] = magnitudes * signs
    omega_x += omega_x.T

    flipped = rng.choice(eligible, size=flipped_blocks, replace=False)
    in_flipped = np.zeros(p, dtype=bool)
    for b in flipped:
        in_flipped[graph.blocks[b]] = True
    flip_mask = np.outer(in_flipped, in_flipped)
    np.fill_diagonal(flip_mask, False)
    omega_y = np.where(flip_mask, -omega_x, omega_x)

    shift = max(abs(_min_eig(omega_x)), abs(_min_eig(omega_y))) + pd_offset
    omega_x += shift * np.eye(p)
    omega_y += shift * np.eye(p)

    emap = core.EdgeIndexMap(p)
    differs = emap.gather(omega_x) != emap.gather(omega_y)
    support = frozenset(int(k) for k in np.flatnonzero(differs))
    logging.info('base precisions: %d edges, %d differential (blocks %s)',
                 rows.size, len(support), sorted(int(b) for b in flipped))
    return omega_x, omega_y, GroundTruth(support, omega_x, omega_y)


def gen_individual_precision(base, perturb_var, rng, pd_offset=0.5):
    """Perturbs the nonzero off-diagonal entries of a base precision.

    Args:
        base: symmetric positive definite base precision.
        perturb_var: variance of the Gaussian perturbation.
        rng: numpy Generator.
        pd_offset: margin used when the perturbed matrix needs re-shifting.

    Returns:
        base + Psi, re-shifted by (|lambda_min| + pd_offset) I when its
        smallest eigenvalue drops to 1e-3 or below.
    """
    base = np.asarray(base, dtype=float)
    if perturb_var == 0:
        return base.copy()
    p = base.shape[0]
    rows, cols = np.nonzero(np.triu(base != 0, 1))
    psi = np.zeros((p, p))
    psi[rows, cols] = rng.normal(0.0, np.sqrt(perturb_var), size=rows.size)
    psi += psi.T
    out = base + psi
    lam = _min_eig(out)
    if lam <= _PD_FLOOR:
        logging.vlog(1, 'individual precision re-shifted (lambda_min=%.3g)',
                     lam)
        out += (abs(lam) + pd_offset) * np.eye(p)
    return out


def gen_temporal_cov(kind, q, param):
    """AR(param) or banded 1/(|i-j|+1) temporal covariance of size q.

    Raises:
        DomainError: for an AR parameter outside (0, 1) or a negative band.
    """
    kind = TemporalKind(kind)
    lags = np.arange(q)
    if kind is TemporalKind.AR:
        if not 0.0 < param < 1.0:
            raise errors.DomainError(f'AR parameter must be in (0, 1): {param}')
        column = np.power(float(param), lags)
    else:
        if param < 0 or int(param) != param:
            raise errors.DomainError(f'BC bandwidth must be an integer >= 0: '
                                     f'{param}')
        column = np.where(lags <= param, 1.0 / (lags + 1.0), 0.0)
    return linalg.toeplitz(column)


def sample_matrix_normal(sigma_t, sigma_s, rng, size=None):
    """Draws zero-mean matrix-normal samples with Vec covariance T (x) S.

    Args:
        sigma_t: q x q temporal covariance.
        sigma_s: p x p spatial covariance.
        rng: numpy Generator.
        size: optional number of independent draws.

    Returns:
        A p x q matrix, or a size x p x q array when size is given.

    Raises:
        NumericError: if either covariance has no Cholesky factor.
    """
    try:
        a = linalg.cholesky(sigma_s, lower=True)
        b = linalg.cholesky(sigma_t, lower=True)
    except linalg.LinAlgError as e:
        raise errors.NumericError(
            f'covariance is not positive definite: {e}') from e
    p, q = a.shape[0], b.shape[0]
    shape = (p, q) if size is None else (size, p, q)
    z = rng.standard_normal(shape)
    return a @ z @ b.T


def _spatial_covariance(precision):
    cov = linalg.inv(precision)
    return (cov + cov.T) / 2


def _subject_rng(seed, counter):
    return np.random.default_rng([seed, _SUBJECT_STREAM, counter])


def build_graph(config, rng):
    kind = scenario_graph_kind(config.scenario)
    if kind is GraphKind.HUB:
        return gen_hub_graph(config.p, config.hub_blocks, rng)
    return gen_small_world_graph(config.p, config.small_world_blocks,
                                 config.rewire_prob, rng)


def gen_scenario(config):
    """Generates train and test cohorts plus the ground truth.

    Subjects are drawn in the order train cases, train controls, test cases,
    test controls; subject k uses the generator [seed, 1, k].

    Args:
        config: a ScenarioConfig.

    Returns:
        (train CohortDataset, test CohortDataset or None, GroundTruth).
    """
    rng = np.random.default_rng([config.seed, _GRAPH_STREAM])
    graph = build_graph(config, rng)
    omega_x, omega_y, truth = gen_base_precisions(
        graph,
        rng,
        fill=(config.fill_low, config.fill_high),
        flipped_blocks=config.flipped_blocks,
        pd_offset=config.pd_offset)
    kind, case_param, control_param = config.temporal_params()
    temporal = {
        1: gen_temporal_cov(kind, config.q, case_param),
        0: gen_temporal_cov(kind, config.q, control_param),
    }
    base = {1: omega_x, 0: omega_y}
    n1_test, n2_test = config.test_sizes
    plan = [('train', 1, config.n1), ('train', 0, config.n2),
            ('test', 1, n1_test), ('test', 0, n2_test)]

    cohorts = {'train': [], 'test': []}
    counter = 0
    for split, group, count in plan:
        tag = 'case' if group == 1 else 'ctrl'
        for k in range(count):
            subject_rng = _subject_rng(config.seed, counter)
            counter += 1
            precision = gen_individual_precision(base[group],
                                                 config.perturb_var,
                                                 subject_rng,
                                                 pd_offset=config.pd_offset)
            data = sample_matrix_normal(temporal[group],
                                        _spatial_covariance(precision),
                                        subject_rng)
            cohorts[split].append(
                core.SubjectMatrix(f'{split}-{tag}-{k + 1:03d}', group, data))
    logging.info('scenario %d: %s graph with %d edges, %d train / %d test '
                 'subjects', config.scenario, graph.kind.value, graph.n_edges,
                 len(cohorts['train']), len(cohorts['test']))
    train = core.CohortDataset(cohorts['train'])
    test = core.CohortDataset(cohorts['test']) if cohorts['test'] else None
    return train, test, truth
