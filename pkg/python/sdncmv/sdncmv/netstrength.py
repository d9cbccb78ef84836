"""Individual network strengths: CLIME precision estimates to edge features.

For one subject the pipeline is

    sample_cov -> tune_lambda_dens (bisection over clime) -> partial_corr
               -> fisher_features

Each CLIME column is the linear program

    min ||b||_1  subject to  ||S b - e_i||_inf <= lambda

solved with b = u - v, u, v >= 0 (2p variables, 2p inequalities).
"""

import dataclasses
from typing import List, Optional, Tuple

from absl import logging
import joblib
import numpy as np
from scipy import optimize

from sdncmv import core
from sdncmv import errors

# Entries at or below this magnitude count as zeros for support decisions.
ZERO_TOL = 1e-8
# Fisher transform input clamp.
FISHER_CLAMP = 1 - 1e-6


@dataclasses.dataclass(frozen=True)
class ClimeSettings:
    """Tuning policy for the density-targeted CLIME fit.

    Attributes:
        target_density: desired fraction of nonzero off-diagonal entries.
        density_band: bisection stops once |density - target| <= band.
        lp_tolerance: LP feasibility slack, also the lower bisection bound.
        max_bisection_steps: cap on bisection iterations.
    """
    target_density: float = 0.5
    density_band: float = 0.05
    lp_tolerance: float = 1e-7
    max_bisection_steps: int = 30

    def __post_init__(self):
        if not 0.0 < self.target_density < 1.0:
            raise errors.DomainError(
                f'target density must be in (0, 1), got {self.target_density}')
        if self.density_band <= 0 or self.lp_tolerance <= 0:
            raise errors.DomainError('tolerances must be positive')
        if self.max_bisection_steps < 1:
            raise errors.DomainError('max_bisection_steps must be positive')


@dataclasses.dataclass(frozen=True)
class TuneResult:
    """Outcome of tune_lambda_dens.

    Attributes:
        lambda_: selected tuning value.
        estimate: the PrecisionEstimate at lambda_.
        attainable: whether the achieved density is inside the target band.
        trace: visited (lambda, density) pairs; density is None for
          infeasible lambdas.
    """
    lambda_: float
    estimate: core.PrecisionEstimate
    attainable: bool
    trace: Tuple[Tuple[float, Optional[float]], ...]


def sample_cov(x):
    """Spatial sample covariance with divisor q - 1 over the time columns.

    Args:
        x: a SubjectMatrix or a p x q array.

    Returns:
        The exactly symmetric p x p sample covariance.

    Raises:
        DomainError: if there are fewer than two time points.
    """
    data = x.data if isinstance(x, core.SubjectMatrix) else np.asarray(
        x, dtype=float)
    data = np.atleast_2d(data)
    if data.shape[1] < 2:
        raise errors.DomainError(
            f'need at least 2 time points, got {data.shape[1]}')
    cov = np.atleast_2d(np.cov(data, rowvar=True, ddof=1))
    return (cov + cov.T) / 2


def _linprog(c, a_ub, b_ub, tolerance):
    return optimize.linprog(c,
                            A_ub=a_ub,
                            b_ub=b_ub,
                            bounds=(0, None),
                            method='highs',
                            options={
                                'primal_feasibility_tolerance':
                                    max(tolerance / 10, 1e-10),
                            })


def min_feasible_lambda(sigma, i):
    """Smallest lambda at which CLIME column i is feasible.

    Solves the Chebyshev problem min_b ||S b - e_i||_inf as an LP over
    (b+, b-, t).
    """
    sigma = np.asarray(sigma, dtype=float)
    p = sigma.shape[0]
    e = np.zeros(p)
    e[i] = 1.0
    ones = np.ones((p, 1))
    c = np.zeros(2 * p + 1)
    c[-1] = 1.0
    a_ub = np.block([[sigma, -sigma, -ones], [-sigma, sigma, -ones]])
    b_ub = np.concatenate([e, -e])
    result = optimize.linprog(c,
                              A_ub=a_ub,
                              b_ub=b_ub,
                              bounds=(0, None),
                              method='highs')
    if result.status != 0:
        return None
    return float(result.x[-1])


def clime_column(sigma, i, lambda_, lp_tolerance=1e-7):
    """Solves one CLIME column.

    Args:
        sigma: p x p sample covariance.
        i: 0-based column.
        lambda_: constraint radius, >= 0.
        lp_tolerance: feasibility slack handed to the LP solver.

    Returns:
        The length-p minimiser of ||b||_1 with ||S b - e_i||_inf <= lambda_.

    Raises:
        DomainError: for a negative lambda or bad column.
        InfeasibleError: when no b satisfies the constraint.
    """
    sigma = np.asarray(sigma, dtype=float)
    p = sigma.shape[0]
    if lambda_ < 0:
        raise errors.DomainError(f'lambda must be >= 0, got {lambda_}')
    if not 0 <= i < p:
        raise errors.DomainError(f'column {i} out of range for p={p}')
    e = np.zeros(p)
    e[i] = 1.0
    c = np.ones(2 * p)
    a_ub = np.block([[sigma, -sigma], [-sigma, sigma]])
    b_ub = np.concatenate([lambda_ + e, lambda_ - e])
    result = _linprog(c, a_ub, b_ub, lp_tolerance)
    if result.status == 2:
        raise errors.InfeasibleError(i, lambda_, min_feasible_lambda(sigma, i))
    if result.status != 0:
        raise errors.NumericError(
            f'CLIME column {i} at lambda={lambda_:.3g}: {result.message}')
    return result.x[:p] - result.x[p:]


def symmetrize_min_magnitude(omega_tilde):
    """Keeps, for every symmetric pair, the entry of smaller magnitude.

    Ties keep the upper-triangle entry. The diagonal is left unchanged and
    the result is exactly symmetric.
    """
    omega_tilde = np.asarray(omega_tilde, dtype=float)
    transposed = omega_tilde.T
    pick = np.where(
        np.abs(omega_tilde) <= np.abs(transposed), omega_tilde, transposed)
    upper = np.triu(pick, 1)
    return upper + upper.T + np.diag(np.diag(omega_tilde))


def off_diagonal_density(omega):
    p = omega.shape[0]
    if p < 2:
        return 0.0
    upper = np.abs(omega[np.triu_indices(p, 1)])
    return float(np.count_nonzero(upper > ZERO_TOL)) / upper.size


def clime_raw(sigma, lambda_, lp_tolerance=1e-7):
    """Stacks the p column solutions before symmetrization."""
    sigma = np.asarray(sigma, dtype=float)
    p = sigma.shape[0]
    return np.column_stack(
        [clime_column(sigma, i, lambda_, lp_tolerance) for i in range(p)])


def clime(sigma, lambda_, lp_tolerance=1e-7):
    """CLIME precision estimate, symmetrized by the smaller-magnitude rule.

    Returns:
        A PrecisionEstimate whose near-zero (<= 1e-8) entries are exact
        zeros.
    """
    omega = symmetrize_min_magnitude(clime_raw(sigma, lambda_, lp_tolerance))
    omega[np.abs(omega) <= ZERO_TOL] = 0.0
    return core.PrecisionEstimate(omega, float(lambda_),
                                  off_diagonal_density(omega))


def lambda_upper(sigma, floor=1e-7):
    """Smallest lambda at which every column has a diagonal-only solution.

    With r_i = max_{j != i} |S_ji| / S_ii the column b = (1 - lambda) / S_ii
    e_i is feasible once lambda >= r_i / (1 + r_i). Below 1, so b = 0 is
    never feasible and the diagonal stays positive.
    """
    sigma = np.asarray(sigma, dtype=float)
    diag = np.diag(sigma)
    if np.any(diag <= 0):
        raise errors.NumericError('sample covariance has a zero-variance region')
    off = np.abs(sigma - np.diag(diag))
    ratios = off.max(axis=0) / diag
    return max(float(np.max(ratios / (1 + ratios))), floor)


def tune_lambda_dens(sigma, settings=ClimeSettings()):
    """Picks lambda so that the estimate's density is close to the target.

    Bisects [lp_tolerance, lambda_upper(sigma)]; density falls as lambda
    grows. Infeasible midpoints count as too small. The closest density
    among visited lambdas wins.

    Returns:
        A TuneResult.

    Raises:
        InfeasibleError: if every visited lambda was infeasible.
    """
    target = settings.target_density
    lo = settings.lp_tolerance
    hi = lambda_upper(sigma, settings.lp_tolerance)
    trace = []
    best = None
    last_error = None

    def visit(lambda_):
        nonlocal best, last_error
        try:
            estimate = clime(sigma, lambda_, settings.lp_tolerance)
        except errors.NumericError as e:
            last_error = e
            trace.append((lambda_, None))
            return None
        trace.append((lambda_, estimate.density))
        gap = abs(estimate.density - target)
        if best is None or gap < best[0]:
            best = (gap, lambda_, estimate)
        return estimate.density

    density = visit(hi)
    steps = 0
    while (best is None or best[0] > settings.density_band) and \
            steps < settings.max_bisection_steps and hi > lo:
        mid = (lo + hi) / 2
        density = visit(mid)
        steps += 1
        if density is None or density > target:
            lo = mid
        else:
            hi = mid
        logging.vlog(2, 'bisection step %d: lambda=%.4g density=%s', steps, mid,
                     density)
    if best is None:
        raise last_error
    gap, lambda_, estimate = best
    attainable = gap <= settings.density_band
    if not attainable:
        logging.warning(
            'target density %.2f unattainable; closest %.3f at lambda=%.4g',
            target, estimate.density, lambda_)
    return TuneResult(lambda_, estimate, attainable, tuple(trace))


def partial_corr(estimate):
    """R = D^{-1/2} Omega D^{-1/2} with unit diagonal.

    The conventional minus sign of partial correlations is not applied.

    Raises:
        NumericError: if the diagonal is not strictly positive.
    """
    omega = estimate.omega if isinstance(
        estimate, core.PrecisionEstimate) else np.asarray(estimate, dtype=float)
    diag = np.diag(omega)
    if np.any(diag <= 0):
        raise errors.NumericError('precision diagonal must be positive')
    scale = 1.0 / np.sqrt(diag)
    r = omega * np.outer(scale, scale)
    r = (r + r.T) / 2
    np.fill_diagonal(r, 1.0)
    return r


def fisher_transform(r):
    """0.5 log((1 + r) / (1 - r)) on r clamped to +-(1 - 1e-6)."""
    return np.arctanh(np.clip(r, -FISHER_CLAMP, FISHER_CLAMP))


def fisher_features(r, edge_map=None):
    """Fisher-transformed off-diagonal entries in EdgeIndexMap order."""
    r = np.asarray(r, dtype=float)
    edge_map = edge_map or core.EdgeIndexMap(r.shape[0])
    return core.EdgeFeatureVector(fisher_transform(edge_map.gather(r)))


def subject_features(subject, settings=ClimeSettings(), edge_map=None):
    """Runs the whole per-subject pipeline.

    Returns:
        (EdgeFeatureVector, TuneResult).
    """
    sigma = sample_cov(subject)
    tuned = tune_lambda_dens(sigma, settings)
    features = fisher_features(partial_corr(tuned.estimate), edge_map)
    return features, tuned


@dataclasses.dataclass(frozen=True)
class SubjectLog:
    """One row of the per-subject feature log."""
    subject_id: str
    lambda_: Optional[float]
    density: Optional[float]
    attainable: bool
    status: str
    message: str = ''


def _subject_job(subject, settings):
    try:
        features, tuned = subject_features(subject, settings)
    except errors.NumericError as e:
        logging.warning('subject %s failed: %s', subject.id, e)
        return None, SubjectLog(subject.id, None, None, False, 'failed', str(e))
    logging.vlog(1, 'subject %s: lambda=%.4g density=%.3f', subject.id,
                 tuned.lambda_, tuned.estimate.density)
    return features, SubjectLog(subject.id, tuned.lambda_,
                                tuned.estimate.density, tuned.attainable, 'ok')


def cohort_features(dataset, settings=ClimeSettings(), n_jobs=1):
    """Edge features for every subject of a cohort.

    Subjects whose CLIME fit fails are logged and left out of the returned
    FeatureSet instead of aborting the run.

    Returns:
        (FeatureSet or None if every subject failed, list of SubjectLog).
    """
    results = joblib.Parallel(n_jobs=n_jobs)(
        joblib.delayed(_subject_job)(s, settings) for s in dataset.subjects)
    logs: List[SubjectLog] = [log for _, log in results]
    keep = [k for k, (features, _) in enumerate(results) if features is not None]
    logging.info('features: %d of %d subjects succeeded', len(keep),
                 len(dataset))
    if not keep:
        return None, logs
    return core.FeatureSet(
        ids=[dataset.subjects[k].id for k in keep],
        labels=dataset.labels[keep],
        confounders=dataset.confounders[keep],
        values=np.vstack([results[k][0].values for k in keep]),
        p=dataset.p), logs
