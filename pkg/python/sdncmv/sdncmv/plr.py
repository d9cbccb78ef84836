"""Elastic-net penalized logistic regression with unpenalized confounders.

The fitted model minimises

    (1/n) sum_k [-z_k s_k + log(1 + exp(s_k))]
        + lambda * (alpha * ||beta||_1 + (1 - alpha) * ||beta||_2^2),

    s_k = intercept + eta' Q_k + beta' W_k,

with no 1/2 on the ridge term. Only beta is penalized.

The solver is a proximal Newton method: every outer iteration builds the
weighted quadratic model of the log-likelihood at the current scores and
minimises it plus the penalty by cyclic coordinate descent over an active
set, then backtracks along the step until the objective does not increase.
Columns are centred and scaled internally; the penalty weights absorb the
scaling so the minimiser is the one of the objective above.
"""

import dataclasses
import math
from typing import List, Optional, Tuple

from absl import logging
import numpy as np
from scipy import special
from sklearn import model_selection

from sdncmv import errors

_WEIGHT_FLOOR = 1e-5
_DEAD_SCALE = 1e-12
_MIN_STEP = 1e-8
_PROB_CLIP = 1e-15


@dataclasses.dataclass(frozen=True)
class PlrFitSettings:
    """Solver and cross-validation policy.

    Attributes:
        max_iterations: cap on outer (Newton) iterations per fit.
        max_sweeps: cap on coordinate sweeps per active-set pass.
        tolerance: convergence threshold on the largest coefficient change.
        n_lambda: length of the automatic lambda path.
        lambda_min_ratio: smallest path lambda relative to lambda_max; None
          picks 1e-4 when n > d and 1e-2 otherwise.
        alpha_grid: mixing values searched by cv_tune.
        cv_folds: number of stratified folds.
        fit_intercept: include an unpenalized intercept.
        saturation: a path stops once the fit explains this fraction of the
          null deviance.
    """
    max_iterations: int = 200
    max_sweeps: int = 1000
    tolerance: float = 1e-7
    n_lambda: int = 50
    lambda_min_ratio: Optional[float] = None
    alpha_grid: Tuple[float, ...] = (0.5, 1.0)
    cv_folds: int = 5
    fit_intercept: bool = True
    saturation: float = 0.999

    def __post_init__(self):
        if min(self.max_iterations, self.max_sweeps, self.n_lambda) < 1:
            raise errors.DomainError('iteration counts must be positive')
        if self.tolerance <= 0:
            raise errors.DomainError('tolerance must be positive')
        if self.cv_folds < 2:
            raise errors.DomainError('cv_folds must be at least 2')
        if not self.alpha_grid or any(
                not 0.0 <= a <= 1.0 for a in self.alpha_grid):
            raise errors.DomainError(
                f'alpha grid must be nonempty within [0, 1]: {self.alpha_grid}')
        if self.lambda_min_ratio is not None and \
                not 0 < self.lambda_min_ratio < 1:
            raise errors.DomainError('lambda_min_ratio must be in (0, 1)')
        object.__setattr__(self, 'alpha_grid', tuple(self.alpha_grid))


@dataclasses.dataclass(frozen=True, eq=False)
class PlrModel:
    """A fitted penalized logistic regression.

    Attributes:
        intercept: unpenalized intercept (0 when not fitted).
        eta: confounder coefficients, length M.
        beta: feature coefficients, length d.
        lambda_: penalty scale.
        alpha: L1 / L2 mixing.
        feature_index: flat edge index of every beta position.
        n_iterations: outer iterations used.
        objective_history: objective after every outer iteration.
    """
    intercept: float
    eta: np.ndarray
    beta: np.ndarray
    lambda_: float
    alpha: float
    feature_index: np.ndarray
    n_iterations: int = 0
    objective_history: Tuple[float, ...] = ()

    def support(self):
        """Flat edge indices with a nonzero coefficient."""
        return self.feature_index[self.beta != 0]


def elastic_net_threshold(a, b, l1, l2):
    """argmin_x 0.5 a (x - b)^2 + l1 |x| + l2 x^2."""
    return math.copysign(max(abs(a * b) - l1, 0.0), b) / (a + 2.0 * l2)


def _check_design(q, w, z=None):
    w = np.asarray(w, dtype=float)
    if w.ndim != 2:
        raise errors.DomainError(f'features must be a matrix, got {w.shape}')
    n = w.shape[0]
    if q is None or np.size(q) == 0:
        q = np.zeros((n, 0))
    q = np.asarray(q, dtype=float).reshape(n, -1)
    if z is None:
        return q, w, None
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.shape[0] != n:
        raise errors.DomainError(
            f'{z.shape[0]} labels for {n} feature rows')
    if not np.all(np.isin(z, (0.0, 1.0))):
        raise errors.DomainError('labels must be 0 or 1')
    return q, w, z


def _require_both_labels(z):
    if z.shape[0] < 2 or z.min() == z.max():
        raise errors.DomainError('fitting needs both labels present')


def _check_model_dims(model, q, w):
    if q.shape[1] != model.eta.shape[0] or w.shape[1] != model.beta.shape[0]:
        raise errors.DomainError(
            f'design has {q.shape[1]} confounders and {w.shape[1]} features; '
            f'model expects {model.eta.shape[0]} and {model.beta.shape[0]}')


def linear_score(model, q, w):
    q, w, _ = _check_design(q, w)
    _check_model_dims(model, q, w)
    return model.intercept + q @ model.eta + w @ model.beta


def predict_proba(model, q, w):
    """P(z = 1) = 1 / (1 + exp(-(intercept + eta'Q + beta'W)))."""
    return special.expit(linear_score(model, q, w))


def predict_label(model, q, w):
    return (predict_proba(model, q, w) > 0.5).astype(int)


def _mean_nll(s, z):
    return float(np.mean(np.logaddexp(0.0, s) - z * s))


def penalty(beta, lambda_, alpha):
    beta = np.asarray(beta, dtype=float)
    return lambda_ * (alpha * np.abs(beta).sum() +
                      (1 - alpha) * float(beta @ beta))


def plr_objective(model, q, w, z):
    """Exact penalized objective of a model on (Q, W, z)."""
    q, w, z = _check_design(q, w, z)
    s = linear_score(model, q, w)
    return _mean_nll(s, z) + penalty(model.beta, model.lambda_, model.alpha)


def plr_smooth_gradient(model, q, w, z):
    """Gradient of the mean negative log-likelihood.

    Returns:
        (d/d intercept, d/d eta, d/d beta).
    """
    q, w, z = _check_design(q, w, z)
    residual = special.expit(linear_score(model, q, w)) - z
    n = w.shape[0]
    return (float(residual.mean()), q.T @ residual / n, w.T @ residual / n)


def kkt_violation(model, q, w, z, fit_intercept=True):
    """Largest violation of the subgradient optimality conditions."""
    g0, g_eta, g_beta = plr_smooth_gradient(model, q, w, z)
    l1 = model.lambda_ * model.alpha
    l2 = model.lambda_ * (1 - model.alpha)
    beta = model.beta
    nonzero = beta != 0
    at_zero = np.maximum(np.abs(g_beta[~nonzero]) - l1, 0.0)
    moving = np.abs(g_beta[nonzero] + 2 * l2 * beta[nonzero] +
                    l1 * np.sign(beta[nonzero]))
    parts = [np.abs(g_eta), at_zero, moving]
    if fit_intercept:
        parts.append(np.array([abs(g0)]))
    return float(max((np.max(part) for part in parts if part.size),
                     default=0.0))


class _Design:
    """Centred and scaled design [1 | Q | W] with penalty weights."""

    def __init__(self, q, w, fit_intercept):
        n = w.shape[0]
        self.n = n
        self.m = q.shape[1]
        self.d = w.shape[1]
        self.fit_intercept = fit_intercept
        raw = np.hstack([q, w])
        if fit_intercept:
            self.center = raw.mean(axis=0)
        else:
            self.center = np.zeros(raw.shape[1])
        scale = np.sqrt(np.mean((raw - self.center)**2, axis=0))
        self.dead = scale <= _DEAD_SCALE
        scale[self.dead] = 1.0
        self.scale = scale
        cols = (raw - self.center) / scale
        cols[:, self.dead] = 0.0
        lead = 1 if fit_intercept else 0
        self.lead = lead
        self.x = np.hstack([np.ones((n, lead)), cols])
        self.xt = np.ascontiguousarray(self.x.T)
        size = self.x.shape[1]
        self.penalized = np.zeros(size, dtype=bool)
        self.penalized[lead + self.m:] = True
        self.live = np.ones(size, dtype=bool)
        self.live[lead:] = ~self.dead
        self.l1_weight = np.zeros(size)
        self.l2_weight = np.zeros(size)
        self.l1_weight[lead + self.m:] = 1.0 / scale[self.m:]
        self.l2_weight[lead + self.m:] = 1.0 / scale[self.m:]**2

    @property
    def size(self):
        return self.x.shape[1]

    def coefficients(self, theta):
        """Maps internal coordinates to (intercept, eta, beta)."""
        slopes = np.where(self.dead, 0.0, theta[self.lead:] / self.scale)
        intercept = 0.0
        if self.fit_intercept:
            intercept = float(theta[0] - slopes @ self.center)
        return intercept, slopes[:self.m], slopes[self.m:]

    def theta_of(self, model):
        slopes = np.concatenate([model.eta, model.beta])
        theta = np.zeros(self.size)
        theta[self.lead:] = np.where(self.dead, 0.0, slopes * self.scale)
        if self.fit_intercept:
            theta[0] = model.intercept + slopes @ self.center
        return theta

    def to_model(self, theta, lambda_, alpha, feature_index, iterations=0,
                 history=()):
        intercept, eta, beta = self.coefficients(theta)
        return PlrModel(intercept=intercept,
                        eta=eta,
                        beta=beta,
                        lambda_=float(lambda_),
                        alpha=float(alpha),
                        feature_index=feature_index,
                        n_iterations=iterations,
                        objective_history=tuple(history))


def _internal_objective(s, theta, z, l1, l2):
    return _mean_nll(s, z) + float(l1 @ np.abs(theta) + l2 @ (theta * theta))


def _coordinate_descent(design, weights, wr, a, theta, l1, l2, eligible,
                        settings):
    """Minimises the weighted quadratic model plus penalty in place.

    wr holds weights * working residual and is updated with theta.
    """
    n = design.n
    xt = design.xt
    wx = xt * weights
    penalized = design.penalized
    active = eligible & (~penalized | (theta != 0))
    while True:
        index = np.flatnonzero(active)
        for _ in range(settings.max_sweeps):
            max_change = 0.0
            for j in index:
                old = theta[j]
                g = float(xt[j] @ wr) / n
                if penalized[j]:
                    new = elastic_net_threshold(a[j], old + g / a[j], l1[j],
                                                l2[j])
                else:
                    new = old + g / a[j]
                if new != old:
                    delta = new - old
                    wr -= delta * wx[j]
                    theta[j] = new
                    max_change = max(max_change, abs(delta))
            if max_change < settings.tolerance:
                break
        grad = (xt @ wr) / n
        violators = eligible & penalized & ~active & (np.abs(grad) > l1)
        if not violators.any():
            return theta
        active |= violators


def _solve(design, z, lambda_, alpha, theta, settings, allow_penalized=True):
    """Proximal Newton iterations from theta.

    Returns:
        (theta, objective history, iterations, converged).
    """
    l1 = lambda_ * alpha * design.l1_weight
    l2 = lambda_ * (1 - alpha) * design.l2_weight
    eligible = design.live & (allow_penalized | ~design.penalized)
    theta = np.where(eligible, theta, 0.0)
    x = design.x
    x2 = x * x
    s = x @ theta
    objective = _internal_objective(s, theta, z, l1, l2)
    history = [objective]
    for iteration in range(1, settings.max_iterations + 1):
        prob = special.expit(s)
        weights = np.maximum(prob * (1 - prob), _WEIGHT_FLOOR)
        wr = z - prob
        a = np.maximum((weights @ x2) / design.n, _WEIGHT_FLOOR)
        target = _coordinate_descent(design, weights, wr, a, theta.copy(), l1,
                                     l2, eligible, settings)
        step = target - theta
        slack = 1e-12 * max(1.0, abs(objective))
        t = 1.0
        accepted = False
        while t >= _MIN_STEP:
            candidate = theta + t * step
            s_candidate = x @ candidate
            value = _internal_objective(s_candidate, candidate, z, l1, l2)
            if value <= objective + slack:
                accepted = True
                break
            t /= 2
        if not accepted:
            # No descent along the Newton step: numerically optimal.
            return theta, history, iteration, True
        change = float(np.max(np.abs(t * step), initial=0.0))
        theta, s, objective = candidate, s_candidate, value
        history.append(objective)
        logging.vlog(2, 'plr iteration %d: objective=%.10g step=%.3g change=%.3g',
                     iteration, objective, t, change)
        if change < settings.tolerance:
            return theta, history, iteration, True
    return theta, history, settings.max_iterations, False


def fit_plr(q,
            w,
            z,
            lambda_,
            alpha,
            settings=PlrFitSettings(),
            start=None,
            feature_index=None):
    """Fits the penalized logistic regression at one (lambda, alpha).

    Args:
        q: n x M confounders (None or empty for none).
        w: n x d features.
        z: 0/1 labels.
        lambda_: penalty scale, >= 0.
        alpha: mixing in [0, 1].
        settings: PlrFitSettings.
        start: optional PlrModel to warm-start from.
        feature_index: flat edge index of every feature column.

    Returns:
        The fitted PlrModel.

    Raises:
        DomainError: for inconsistent inputs.
        ConvergenceError: when max_iterations is exhausted.
    """
    q, w, z = _check_design(q, w, z)
    _require_both_labels(z)
    if lambda_ < 0 or not 0.0 <= alpha <= 1.0:
        raise errors.DomainError(
            f'need lambda >= 0 and alpha in [0, 1], got {lambda_}, {alpha}')
    if not np.all(np.isfinite(w)) or not np.all(np.isfinite(q)):
        raise errors.DomainError('design must be finite')
    if feature_index is None:
        feature_index = np.arange(w.shape[1])
    design = _Design(q, w, settings.fit_intercept)
    theta = np.zeros(design.size) if start is None else design.theta_of(start)
    theta, history, iterations, converged = _solve(design, z, lambda_, alpha,
                                                   theta, settings)
    model = design.to_model(theta, lambda_, alpha,
                            np.asarray(feature_index), iterations, history)
    if not converged:
        violation = kkt_violation(model, q, w, z, settings.fit_intercept)
        raise errors.ConvergenceError(
            f'no convergence after {iterations} iterations at '
            f'lambda={lambda_:.4g} alpha={alpha} (KKT violation '
            f'{violation:.3g})', model, violation)
    return model


def _null_fit(design, z, settings):
    theta, _, _, _ = _solve(design, z, 0.0, 1.0, np.zeros(design.size),
                            settings, allow_penalized=False)
    return theta


def _lambda_max_from(design, w, z, alpha, settings):
    s = design.x @ _null_fit(design, z, settings)
    residual = z - special.expit(s)
    score = np.abs(w.T @ residual) / design.n
    score[design.dead[design.m:]] = 0.0
    return float(score.max(initial=0.0)) / max(alpha, 1e-3)


def lambda_max(q, w, z, alpha, settings=PlrFitSettings()):
    """Smallest lambda at which every beta is zero."""
    q, w, z = _check_design(q, w, z)
    _require_both_labels(z)
    return _lambda_max_from(_Design(q, w, settings.fit_intercept), w, z, alpha,
                            settings)


def _path_for(lam_max, n, d, settings):
    ratio = settings.lambda_min_ratio
    if ratio is None:
        ratio = 1e-4 if n > d else 1e-2
    if lam_max <= 0:
        return np.zeros(1)
    return np.geomspace(lam_max, lam_max * ratio, settings.n_lambda)


def lambda_path(q, w, z, alpha, settings=PlrFitSettings()):
    """Descending log-spaced lambdas starting at lambda_max."""
    q, w, z = _check_design(q, w, z)
    return _path_for(lambda_max(q, w, z, alpha, settings), w.shape[0],
                     w.shape[1], settings)


def _fit_path(design, z, alpha, lambdas, settings, feature_index):
    """Warm-started fits along lambdas; stops at saturation or failure."""
    null_theta = _null_fit(design, z, settings)
    null_deviance = 2 * design.n * _mean_nll(design.x @ null_theta, z)
    theta = null_theta
    models: List[PlrModel] = []
    for lambda_ in lambdas:
        theta, history, iterations, converged = _solve(
            design, z, lambda_, alpha, theta, settings)
        if not converged:
            logging.warning('plr path stopped at lambda=%.4g (no convergence)',
                            lambda_)
            break
        models.append(
            design.to_model(theta, lambda_, alpha, feature_index, iterations,
                            history))
        deviance = 2 * design.n * _mean_nll(design.x @ theta, z)
        if null_deviance > 0 and \
                1 - deviance / null_deviance >= settings.saturation:
            break
    return models


def binomial_deviance(z, prob):
    """Mean binomial deviance -2 [z log p + (1 - z) log(1 - p)]."""
    prob = np.clip(prob, _PROB_CLIP, 1 - _PROB_CLIP)
    z = np.asarray(z, dtype=float)
    return float(-2 * np.mean(z * np.log(prob) + (1 - z) * np.log1p(-prob)))


@dataclasses.dataclass(frozen=True)
class CvResult:
    """Outcome of cv_tune.

    Attributes:
        lambda_: selected penalty scale.
        alpha: selected mixing.
        model: refit on the full data at (lambda_, alpha).
        scores: (alpha, lambda, mean held-out deviance) for every grid cell.
    """
    lambda_: float
    alpha: float
    model: PlrModel
    scores: Tuple[Tuple[float, float, float], ...]


def cv_tune(q, w, z, settings=PlrFitSettings(), seed=0, feature_index=None):
    """Chooses (lambda, alpha) by stratified K-fold binomial deviance.

    Raises:
        DomainError: if some class has fewer subjects than folds.
    """
    q, w, z = _check_design(q, w, z)
    _require_both_labels(z)
    n, d = w.shape
    folds = settings.cv_folds
    smallest = int(min(np.sum(z == 1), np.sum(z == 0)))
    if n < folds or smallest < folds:
        raise errors.DomainError(
            f'degenerate folds: {folds} folds for n={n} with smallest class '
            f'{smallest}')
    if feature_index is None:
        feature_index = np.arange(d)
    feature_index = np.asarray(feature_index)
    splitter = model_selection.StratifiedKFold(n_splits=folds,
                                               shuffle=True,
                                               random_state=seed)
    splits = list(splitter.split(np.zeros((n, 1)), z.astype(int)))
    full = _Design(q, w, settings.fit_intercept)

    paths = []
    table = []
    for alpha in settings.alpha_grid:
        lambdas = _path_for(_lambda_max_from(full, w, z, alpha, settings), n,
                            d, settings)
        total = np.zeros(lambdas.size)
        for train, held in splits:
            design = _Design(q[train], w[train], settings.fit_intercept)
            models = _fit_path(design, z[train], alpha, lambdas, settings,
                               feature_index)
            if not models:
                raise errors.NumericError(
                    f'cross-validation fold failed at alpha={alpha}')
            for k in range(lambdas.size):
                model = models[min(k, len(models) - 1)]
                prob = predict_proba(model, q[held], w[held])
                total[k] += binomial_deviance(z[held], prob) * held.size
        paths.append(lambdas)
        table.append(total / n)

    best_alpha, best_k = min(
        ((a, k) for a in range(len(table)) for k in range(table[a].size)),
        key=lambda cell: table[cell[0]][cell[1]])
    alpha = settings.alpha_grid[best_alpha]
    models = _fit_path(full, z, alpha, paths[best_alpha][:best_k + 1], settings,
                       feature_index)
    if not models:
        raise errors.NumericError(f'refit failed at alpha={alpha}')
    model = models[-1]
    scores = tuple((float(a), float(lam), float(dev))
                   for a, lambdas, devs in zip(settings.alpha_grid, paths,
                                               table)
                   for lam, dev in zip(lambdas, devs))
    logging.vlog(1, 'cv_tune: lambda=%.4g alpha=%.2f deviance=%.4f, %d nonzero',
                 model.lambda_, alpha, table[best_alpha][best_k],
                 int(np.count_nonzero(model.beta)))
    return CvResult(model.lambda_, alpha, model, scores)
