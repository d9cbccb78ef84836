"""Repeated simulation runs behind the classification, recovery and PR tables.

Replication r simulates a fresh scenario instance, computes edge features
for its training and test subjects, fits the bootstrap ensemble and the
single-fit baseline on the same features, and scores both. Its seed is
drawn from SeedSequence([seed, r]), so a report depends only on the
settings and not on how many jobs ran it.
"""

import dataclasses
import enum
import os
from typing import Dict, List, Optional, Tuple

from absl import logging
import joblib
import numpy as np

from sdncmv import dataio
from sdncmv import ensemble
from sdncmv import errors
from sdncmv import evalmetrics
from sdncmv import netstrength
from sdncmv import plr
from sdncmv import synthgen

SDNCMV = 'sdncmv'
BASELINE = 'plr'
METHODS = (SDNCMV, BASELINE)


class Table(enum.Enum):
    TABLE1 = 'table1'
    TABLE2 = 'table2'
    PRCURVE = 'prcurve'


def desk_scenario(scenario=1):
    """The reduced scale used for routine runs: p = q = 50, 20 + 20."""
    return synthgen.ScenarioConfig(scenario=scenario, p=50, q=50, n1=20,
                                   n2=20)


@dataclasses.dataclass(frozen=True)
class ReplicationSettings:
    """Everything a replication run depends on.

    Attributes:
        table: which summary to report.
        replications: number of independent instances.
        scenario: simulation design; its seed is replaced per replication.
        clime: feature extraction settings, shared by train and test.
        fit: penalized regression settings.
        B: bootstrap replicates per ensemble.
        tau: differential-edge count threshold; None means B/2.
        screening: ScreeningSettings.
        tuning: ensemble TuningMode.
        seed: master seed.
    """
    table: Table = Table.TABLE1
    replications: int = 20
    scenario: synthgen.ScenarioConfig = dataclasses.field(
        default_factory=desk_scenario)
    clime: netstrength.ClimeSettings = netstrength.ClimeSettings()
    fit: plr.PlrFitSettings = plr.PlrFitSettings()
    B: int = 100  # pylint: disable=invalid-name
    tau: Optional[float] = None
    screening: ensemble.ScreeningSettings = ensemble.ScreeningSettings()
    tuning: ensemble.TuningMode = ensemble.TuningMode.PER_REPLICATE
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'table', Table(self.table))
        object.__setattr__(self, 'tuning', ensemble.TuningMode(self.tuning))
        if self.replications < 1 or self.B < 1:
            raise errors.DomainError('replications and B must be positive')
        if self.tau is not None and not 0 <= self.tau <= self.B:
            raise errors.DomainError(f'tau must be in [0, {self.B}]')
        if sum(self.scenario.test_sizes) == 0:
            raise errors.DomainError('replications need test subjects')


@dataclasses.dataclass(frozen=True)
class MethodResult:
    """Scores of one method on one replication."""
    misclassification: float
    tpr: float
    tnr: float
    tdr: float
    n_edges: int
    average_precision: float
    pr_curve: Tuple[evalmetrics.PrPoint, ...]

    def to_json(self):
        out = dataclasses.asdict(self)
        out['pr_curve'] = [list(point) for point in self.pr_curve]
        return out


@dataclasses.dataclass(frozen=True)
class ReplicationResult:
    index: int
    seed: int
    failed_subjects: Tuple[str, ...]
    methods: Dict[str, MethodResult]

    def to_json(self):
        return {
            'replication': self.index,
            'seed': self.seed,
            'failed_subjects': list(self.failed_subjects),
            'methods': {
                name: result.to_json() for name, result in self.methods.items()
            },
        }


def replication_seed(seed, index):
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def score_method(model, test, truth, tau=None):
    """Misclassification, support rates and PR summary of a fitted model."""
    network = ensemble.differential_network(model, tau)
    estimated = evalmetrics.support_from_counts(model.theta_counts, network.tau)
    rates = evalmetrics.support_metrics(
        evalmetrics.SupportComparison(truth, estimated,
                                      model.theta_counts.size))
    points = evalmetrics.pr_curve(model.theta_counts, truth, model.B)
    return MethodResult(misclassification=evalmetrics.misclassification_rate(
        ensemble.predicted_labels(model), test.labels),
                        tpr=rates.tpr,
                        tnr=rates.tnr,
                        tdr=rates.tdr,
                        n_edges=len(network),
                        average_precision=evalmetrics.average_precision(points),
                        pr_curve=tuple(points))


def _features(cohort, clime):
    features, logs = netstrength.cohort_features(cohort, clime)
    failed = tuple(log.subject_id for log in logs if log.status != 'ok')
    return features, failed


def run_replication(index, settings, out_dir=None):
    """Runs and scores one replication; writes rep_NNN.json under out_dir."""
    seed = replication_seed(settings.seed, index)
    logging.info('replication %d: seed %d', index, seed)
    config = dataclasses.replace(settings.scenario, seed=seed)
    train, test, truth = synthgen.gen_scenario(config)
    train_features, train_failed = _features(train, settings.clime)
    test_features, test_failed = _features(test, settings.clime)
    if train_features is None or test_features is None:
        raise errors.NumericError(
            f'replication {index}: every subject of a split failed')
    support = frozenset(truth.delta_support)
    sdncmv = ensemble.fit_ensemble(train_features,
                                   test_features,
                                   B=settings.B,
                                   settings=settings.fit,
                                   screening=settings.screening,
                                   seed=seed,
                                   tuning=settings.tuning)
    baseline = ensemble.fit_single_plr(train_features, test_features,
                                       settings.fit, settings.screening, seed)
    result = ReplicationResult(
        index=index,
        seed=seed,
        failed_subjects=train_failed + test_failed,
        methods={
            SDNCMV: score_method(sdncmv, test_features, support, settings.tau),
            BASELINE: score_method(baseline, test_features, support),
        })
    if out_dir is not None:
        dataio.write_json(
            os.path.join(out_dir, 'replications', f'rep_{index:03d}.json'),
            result.to_json())
    logging.info('replication %d done: error %.3f (plr %.3f), tdr %.3f',
                 index, result.methods[SDNCMV].misclassification,
                 result.methods[BASELINE].misclassification,
                 result.methods[SDNCMV].tdr)
    return result


def run_replications(settings, out_dir=None, n_jobs=1):
    """Runs replications 1..R, in parallel when n_jobs > 1."""
    return joblib.Parallel(n_jobs=n_jobs)(
        joblib.delayed(run_replication)(r, settings, out_dir)
        for r in range(1, settings.replications + 1))


@dataclasses.dataclass(frozen=True)
class SummaryRow:
    metric: str
    method: str
    mean: float
    se: float


_TABLE_METRICS = {
    Table.TABLE1: ('misclassification',),
    Table.TABLE2: ('tpr', 'tnr', 'tdr'),
    Table.PRCURVE: ('average_precision',),
}


def summarize(results, table):
    """Mean and standard error of the table's metrics for both methods."""
    table = Table(table)
    rows: List[SummaryRow] = []
    for metric in _TABLE_METRICS[table]:
        for method in METHODS:
            values = [getattr(r.methods[method], metric) for r in results]
            rows.append(SummaryRow(metric, method,
                                   *evalmetrics.mean_and_se(values)))
    if table is Table.TABLE2:
        # Equal TDRs (often both 1.0) are reported apart from wins.
        pairs = [(r.methods[SDNCMV].tdr, r.methods[BASELINE].tdr)
                 for r in results]
        wins = [float(ours > theirs) for ours, theirs in pairs]
        ties = [float(ours == theirs) for ours, theirs in pairs]
        rows.append(
            SummaryRow('tdr_better_fraction', SDNCMV,
                       *evalmetrics.mean_and_se(wins)))
        rows.append(
            SummaryRow('tdr_tie_fraction', SDNCMV,
                       *evalmetrics.mean_and_se(ties)))
    return rows


def mean_pr_curve(results, method=SDNCMV):
    """Per tau, mean recall and precision over replications reporting it.

    Returns:
        (tau, mean recall, mean precision, replications) rows by descending
        tau.
    """
    by_tau: Dict[int, List[evalmetrics.PrPoint]] = {}
    for result in results:
        for point in result.methods[method].pr_curve:
            by_tau.setdefault(point.tau, []).append(point)
    rows = []
    for tau in sorted(by_tau, reverse=True):
        points = by_tau[tau]
        rows.append((tau, float(np.mean([p.recall for p in points])),
                     float(np.mean([p.precision for p in points])),
                     len(points)))
    return rows
