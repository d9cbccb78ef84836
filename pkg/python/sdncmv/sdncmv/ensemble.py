"""Bootstrap ensemble of penalized logistic fits over edge features.

Each of the B replicates draws a stratified bootstrap sample of the
training subjects, tunes and fits a PLR model on it, predicts the test
subjects and records which edges received a nonzero coefficient. The
ensemble then classifies by majority vote and declares an edge differential
when its occurrence count exceeds a threshold tau.

Replicate b draws from np.random.default_rng([seed, b]), so results do not
depend on the order or parallelism of execution.
"""

import dataclasses
import enum
import math
from typing import List, Optional, Tuple

from absl import logging
import joblib
import numpy as np

from sdncmv import core
from sdncmv import errors
from sdncmv import plr


class TuningMode(enum.Enum):
    PER_REPLICATE = 'per-replicate'
    ONCE = 'once'
    # A single cross-validated fit on the full training set, no bootstrap.
    SINGLE = 'single'


@dataclasses.dataclass(frozen=True)
class ScreeningSettings:
    """Marginal screening policy.

    Attributes:
        keep_fraction: share of edges kept, in (0, 1]; 1 disables screening.
        per_replicate: screen inside every bootstrap sample instead of once
          on the full training set.
    """
    keep_fraction: float = 1.0
    per_replicate: bool = False

    def __post_init__(self):
        if not 0.0 < self.keep_fraction <= 1.0:
            raise errors.DomainError(
                f'keep_fraction must be in (0, 1], got {self.keep_fraction}')

    @property
    def enabled(self):
        return self.keep_fraction < 1.0


def screen_count(d, keep_fraction):
    """max(1, floor(keep_fraction * d)), so 15% of 34716 keeps 5207."""
    return max(1, min(d, math.floor(keep_fraction * d + 1e-9)))


def screening_scores(w, z):
    """|mean_1 - mean_0| / pooled standard deviation for every column.

    Columns with zero pooled variance score -inf.
    """
    w = np.asarray(w, dtype=float)
    z = np.asarray(z).reshape(-1)
    case, control = w[z == 1], w[z == 0]
    n = w.shape[0]
    ss = (np.sum((case - case.mean(axis=0))**2, axis=0) +
          np.sum((control - control.mean(axis=0))**2, axis=0))
    pooled = np.sqrt(ss / (n - 2))
    diff = np.abs(case.mean(axis=0) - control.mean(axis=0))
    scores = np.full(w.shape[1], -np.inf)
    live = pooled > 0
    scores[live] = diff[live] / pooled[live]
    return scores


def screen_features(w, z, keep_fraction):
    """Keeps the edges with the largest standardized mean difference.

    Args:
        w: n x d training features.
        z: 0/1 labels.
        keep_fraction: share of columns to keep, in (0, 1].

    Returns:
        Ascending column indices of the kept edges. Ties keep the lower
        index.

    Raises:
        DomainError: for fewer than four subjects, a missing group or a bad
          fraction.
    """
    w = np.asarray(w, dtype=float)
    z = np.asarray(z).reshape(-1)
    if not 0.0 < keep_fraction <= 1.0:
        raise errors.DomainError(
            f'keep_fraction must be in (0, 1], got {keep_fraction}')
    if w.shape[0] < 4 or np.all(z == 1) or np.all(z == 0):
        raise errors.DomainError(
            'screening needs at least 4 subjects from both groups')
    d = w.shape[1]
    if keep_fraction >= 1.0:
        return np.arange(d)
    order = np.argsort(-screening_scores(w, z), kind='stable')
    return np.sort(order[:screen_count(d, keep_fraction)])


def stratified_bootstrap(labels, rng):
    """Resamples each group with replacement, preserving its size.

    Args:
        labels: a CohortDataset, a FeatureSet or a 0/1 label vector.
        rng: numpy Generator.

    Returns:
        n1 case indices followed by n2 control indices.
    """
    labels = np.asarray(getattr(labels, 'labels', labels)).reshape(-1)
    cases = np.flatnonzero(labels == 1)
    controls = np.flatnonzero(labels == 0)
    if not cases.size or not controls.size:
        raise errors.DomainError(
            f'bootstrap needs both groups, got n1={cases.size} '
            f'n2={controls.size}')
    return np.concatenate([
        rng.choice(cases, size=cases.size, replace=True),
        rng.choice(controls, size=controls.size, replace=True)
    ])


def predict_features(model, features):
    """Labels of a FeatureSet under a model fitted on a column subset."""
    return plr.predict_label(model, features.confounders,
                             features.values[:, model.feature_index])


@dataclasses.dataclass(frozen=True, eq=False)
class EnsembleModel:
    """B fitted replicates with their votes and edge occurrence counts.

    Attributes:
        models: one PlrModel per replicate; feature_index holds flat edge
          indices.
        p: number of regions.
        seed: master seed.
        predictions: B x n_test matrix of 0/1 test predictions.
        test_ids: identifiers of the test subjects, in column order.
        active_set: edges kept by global screening, or None.
        tuning: the TuningMode used.
        theta_counts: per-edge count of replicates with a nonzero
          coefficient, derived from models.
    """
    models: Tuple[plr.PlrModel, ...]
    p: int
    seed: int
    predictions: np.ndarray
    test_ids: Tuple[str, ...] = ()
    active_set: Optional[np.ndarray] = None
    tuning: TuningMode = TuningMode.PER_REPLICATE
    theta_counts: np.ndarray = dataclasses.field(init=False, repr=False)

    def __post_init__(self):
        models = tuple(self.models)
        if not models:
            raise errors.DomainError('an ensemble needs at least one model')
        d = core.n_edges(self.p)
        counts = np.zeros(d, dtype=int)
        for model in models:
            support = np.unique(model.support())
            if support.size and (support[0] < 0 or support[-1] >= d):
                raise errors.DomainError(
                    f'model support outside the {d} edges of p={self.p}')
            counts[support] += 1
        test_ids = tuple(self.test_ids)
        predictions = np.array(self.predictions, dtype=int).reshape(
            len(models), len(test_ids))
        if not np.all(np.isin(predictions, (0, 1))):
            raise errors.DomainError('predictions must be 0 or 1')
        counts.flags.writeable = False
        predictions.flags.writeable = False
        object.__setattr__(self, 'models', models)
        object.__setattr__(self, 'test_ids', test_ids)
        object.__setattr__(self, 'predictions', predictions)
        object.__setattr__(self, 'theta_counts', counts)
        object.__setattr__(self, 'tuning', TuningMode(self.tuning))
        if self.active_set is not None:
            object.__setattr__(self, 'active_set',
                               np.asarray(self.active_set, dtype=int))

    @property
    def B(self):  # pylint: disable=invalid-name
        return len(self.models)

    @property
    def votes(self):
        """Per test subject, the number of replicates predicting label 1."""
        return self.predictions.sum(axis=0)

    def theta_fraction(self):
        return self.theta_counts / self.B

    def top_edges(self, k):
        """The k most frequently selected edges as (i, j, count)."""
        return _ranked_edges(self.theta_counts, self.p, 0)[:k]


@dataclasses.dataclass(frozen=True)
class DifferentialNetwork:
    """Edges whose occurrence count exceeds tau.

    Attributes:
        edges: (i, j, count) with 1-based regions, by count descending then
          (i, j).
        tau: the count threshold.
        B: number of replicates behind the counts.
    """
    edges: Tuple[Tuple[int, int, int], ...]
    tau: float
    B: int  # pylint: disable=invalid-name

    def __len__(self):
        return len(self.edges)

    def pairs(self):
        return {(i, j) for i, j, _ in self.edges}


def _ranked_edges(counts, p, tau):
    emap = core.EdgeIndexMap(p)
    selected = np.flatnonzero(counts > tau)
    edges = [(int(emap.rows[k]) + 1, int(emap.cols[k]) + 1, int(counts[k]))
             for k in selected]
    edges.sort(key=lambda edge: (-edge[2], edge[0], edge[1]))
    return edges


def _check_sets(train, test):
    if len(train) == 0:
        raise errors.DomainError('empty training set')
    if train.n1 < 1 or train.n2 < 1:
        raise errors.DomainError(
            f'training needs both groups, got n1={train.n1} n2={train.n2}')
    if test is not None and (test.p != train.p or test.m != train.m):
        raise errors.DomainError(
            f'test features (p={test.p}, M={test.m}) do not match training '
            f'features (p={train.p}, M={train.m})')


def _fit_columns(sample, columns, settings, fixed, cv_seed):
    q = sample.confounders
    w = sample.values[:, columns]
    if fixed is not None:
        lambda_, alpha = fixed
        return plr.fit_plr(q, w, sample.labels, lambda_, alpha, settings,
                           feature_index=columns)
    return plr.cv_tune(q, w, sample.labels, settings, seed=cv_seed,
                       feature_index=columns).model


def _replicate(b, train, test, settings, screening, columns, fixed, seed):
    rng = np.random.default_rng([seed, b])
    try:
        sample = train.subset(stratified_bootstrap(train.labels, rng))
        if screening.per_replicate and screening.enabled:
            columns = screen_features(sample.values, sample.labels,
                                      screening.keep_fraction)
        model = _fit_columns(sample, columns, settings, fixed,
                             int(rng.integers(2**31 - 1)))
    except errors.SdncmvError as e:
        raise errors.ReplicateError(b, e) from e
    predictions = predict_features(model, test) if test is not None else \
        np.zeros(0, dtype=int)
    logging.vlog(1, 'replicate %d: lambda=%.4g alpha=%.2f, %d edges', b,
                 model.lambda_, model.alpha, model.support().size)
    return model, predictions


def _global_columns(train, screening):
    if screening.enabled and not screening.per_replicate:
        active = screen_features(train.values, train.labels,
                                 screening.keep_fraction)
        logging.info('screening kept %d of %d edges', active.size, train.d)
        return active, active
    return np.arange(train.d), None


def fit_ensemble(train,
                 test=None,
                 B=200,  # pylint: disable=invalid-name
                 settings=plr.PlrFitSettings(),
                 screening=ScreeningSettings(),
                 seed=0,
                 tuning=TuningMode.PER_REPLICATE,
                 n_jobs=1):
    """Runs the bootstrap ensemble.

    Args:
        train: training FeatureSet with both groups.
        test: optional FeatureSet to classify.
        B: number of bootstrap replicates.
        settings: PlrFitSettings for every replicate.
        screening: ScreeningSettings.
        seed: master seed; replicate b uses [seed, b].
        tuning: PER_REPLICATE runs cv_tune inside every replicate, ONCE tunes
          on the full training set and reuses (lambda, alpha).
        n_jobs: joblib parallelism over replicates.

    Returns:
        An EnsembleModel.

    Raises:
        DomainError: for invalid inputs.
        ReplicateError: when any replicate fails; carries its index.
    """
    tuning = TuningMode(tuning)
    if tuning is TuningMode.SINGLE:
        return fit_single_plr(train, test, settings, screening, seed)
    if B < 1:
        raise errors.DomainError(f'B must be positive, got {B}')
    _check_sets(train, test)
    columns, active = _global_columns(train, screening)
    fixed = None
    if tuning is TuningMode.ONCE:
        tuned = plr.cv_tune(train.confounders, train.values[:, columns],
                            train.labels, settings, seed=seed,
                            feature_index=columns)
        fixed = (tuned.lambda_, tuned.alpha)
        logging.info('tuned once: lambda=%.4g alpha=%.2f', *fixed)
    results = joblib.Parallel(n_jobs=n_jobs)(
        joblib.delayed(_replicate)(b, train, test, settings, screening,
                                   columns, fixed, seed)
        for b in range(1, B + 1))
    models: List[plr.PlrModel] = [model for model, _ in results]
    ensemble = EnsembleModel(models=models,
                             p=train.p,
                             seed=seed,
                             predictions=np.array([pred for _, pred in results],
                                                 dtype=int),
                             test_ids=test.ids if test is not None else (),
                             active_set=active,
                             tuning=tuning)
    logging.info('ensemble of %d replicates: %d edges ever selected', B,
                 int(np.count_nonzero(ensemble.theta_counts)))
    return ensemble


def fit_single_plr(train,
                   test=None,
                   settings=plr.PlrFitSettings(),
                   screening=ScreeningSettings(),
                   seed=0):
    """One cross-validated PLR fit on all training subjects.

    The result is a B = 1 EnsembleModel, so votes, counts and thresholds
    apply unchanged.
    """
    _check_sets(train, test)
    columns, active = _global_columns(train, screening)
    if screening.per_replicate and screening.enabled:
        columns = screen_features(train.values, train.labels,
                                  screening.keep_fraction)
    model = _fit_columns(train, columns, settings, None, seed)
    predictions = predict_features(model, test) if test is not None else \
        np.zeros(0, dtype=int)
    return EnsembleModel(models=(model,),
                         p=train.p,
                         seed=seed,
                         predictions=predictions[np.newaxis, :],
                         test_ids=test.ids if test is not None else (),
                         active_set=active,
                         tuning=TuningMode.SINGLE)


def _test_position(ensemble, subject):
    if isinstance(subject, str):
        if subject not in ensemble.test_ids:
            raise errors.DomainError(f'unknown test subject {subject!r}')
        return ensemble.test_ids.index(subject)
    if not 0 <= subject < len(ensemble.test_ids):
        raise errors.DomainError(f'test subject {subject} out of range')
    return subject


def vote_classify(ensemble, subject):
    """Label 1 iff strictly more than half of the replicates vote 1.

    Args:
        ensemble: EnsembleModel.
        subject: test subject position or id.
    """
    votes = int(ensemble.votes[_test_position(ensemble, subject)])
    return int(2 * votes > ensemble.B)


def predicted_labels(ensemble):
    return (2 * ensemble.votes > ensemble.B).astype(int)


def differential_network(ensemble, tau=None):
    """Edges selected in more than tau replicates; tau defaults to B/2."""
    if tau is None:
        tau = ensemble.B / 2
    if not 0 <= tau <= ensemble.B:
        raise errors.DomainError(f'tau must be in [0, {ensemble.B}], got {tau}')
    return DifferentialNetwork(
        tuple(_ranked_edges(ensemble.theta_counts, ensemble.p, tau)), tau,
        ensemble.B)


def scree_data(ensemble):
    """(tau, number of edges with count > tau) for tau = 0..B."""
    histogram = np.bincount(ensemble.theta_counts, minlength=ensemble.B + 1)
    # at_least[t] = #edges with count >= t.
    at_least = np.cumsum(histogram[::-1])[::-1]
    above = np.append(at_least[1:], 0)
    return [(tau, int(above[tau])) for tau in range(ensemble.B + 1)]
