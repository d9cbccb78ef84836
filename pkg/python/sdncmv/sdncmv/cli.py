#!/usr/bin/env python3
"""Command line surface of the SDNCMV pipeline.

Usage:

    sdncmv simulate --scenario 1 --p 50 --q 50 --n1 20 --n2 20 --out data
    sdncmv features --dataset data --out run
    sdncmv fit --features run --B 200 --tau 100 --out run
    sdncmv evaluate --model run/model.json --truth data/truth.tsv --out run
    sdncmv replicate --table table1 --replications 20 --out rep

The exit code is 0 iff the command finished without subject-level failures.
"""

import dataclasses
import os
from typing import Optional

from absl import app
from absl import flags
from absl import logging
import pandas as pd

from sdncmv import dataio
from sdncmv import ensemble
from sdncmv import errors
from sdncmv import evalmetrics
from sdncmv import netstrength
from sdncmv import plr
from sdncmv import replicate
from sdncmv import report
from sdncmv import synthgen

FLAGS = flags.FLAGS

COMMANDS = ('simulate', 'features', 'fit', 'evaluate', 'replicate')
JOBS_ENV = 'SDNCMV_JOBS'
FIT_B = 200

flags.DEFINE_string('out', None, 'Output directory.')
flags.DEFINE_integer('seed', 0, 'Master seed; all randomness derives from it.')
flags.DEFINE_integer(
    'jobs', None, f'Parallel jobs; defaults to ${JOBS_ENV}, otherwise 1.')

# simulate / replicate
flags.DEFINE_integer('scenario', 1, 'Simulation scenario, 1 to 4.')
flags.DEFINE_integer('p', 50, 'Number of regions.')
flags.DEFINE_integer('q', 50, 'Number of time points.')
flags.DEFINE_integer('n1', 20, 'Training cases.')
flags.DEFINE_integer('n2', 20, 'Training controls.')
flags.DEFINE_integer('n1_test', None, 'Test cases; defaults to --n1.')
flags.DEFINE_integer('n2_test', None, 'Test controls; defaults to --n2.')
flags.DEFINE_float('perturb_var', 0.02,
                   'Variance of the individual precision perturbations.')

# features
flags.DEFINE_string('dataset', None, 'Dataset directory written by simulate.')
flags.DEFINE_float('target_density', 0.5,
                   'CLIME density target for every subject.')
flags.DEFINE_float('density_band', 0.05,
                   'Accepted distance from the density target.')

# fit
flags.DEFINE_string('features', None,
                    'Directory holding features_train.tsv and, optionally, '
                    'features_test.tsv.')
flags.DEFINE_integer(
    'B', None, f'Bootstrap replicates; {FIT_B} for fit, '
    f'{replicate.ReplicationSettings.B} for replicate.')
flags.DEFINE_float('tau', None, 'Differential edge threshold; defaults to B/2.')
flags.DEFINE_float('keep_fraction', 1.0,
                   'Share of edges kept by marginal screening; 1 disables it.')
flags.DEFINE_bool('per_replicate_screening', False,
                  'Screen inside every bootstrap sample.')
flags.DEFINE_enum('tuning', ensemble.TuningMode.PER_REPLICATE.value,
                  [mode.value for mode in ensemble.TuningMode],
                  'Where lambda and alpha are cross-validated.')
flags.DEFINE_list('alpha_grid', ['0.5', '1.0'],
                  'Elastic-net mixing values searched by cross-validation.')
flags.DEFINE_integer('n_lambda', 50, 'Length of the lambda path.')
flags.DEFINE_integer('cv_folds', 5, 'Stratified cross-validation folds.')
flags.DEFINE_bool('intercept', True, 'Fit an unpenalized intercept.')

# evaluate
flags.DEFINE_string('model', None, 'model.json written by fit.')
flags.DEFINE_string('truth', None,
                    'Truth table; defaults to <dataset>/truth.tsv.')

# replicate
flags.DEFINE_enum('table', replicate.Table.TABLE1.value,
                  [table.value for table in replicate.Table],
                  'Summary to report.')
flags.DEFINE_integer('replications', 20, 'Independent simulated instances.')


def default_jobs():
    value = os.environ.get(JOBS_ENV, '1')
    try:
        return int(value)
    except ValueError as e:
        raise app.UsageError(f'${JOBS_ENV} must be an integer, got {value!r}'
                            ) from e


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Settings shared by the feature, fit and evaluate commands.

    Attributes:
        clime: ClimeSettings for every subject.
        fit: PlrFitSettings for every replicate.
        B: bootstrap replicates.
        tau: differential-edge threshold; None means B/2.
        screening: ScreeningSettings.
        tuning: ensemble TuningMode.
        seed: master seed.
        out: output directory.
        jobs: joblib parallelism.
    """
    clime: netstrength.ClimeSettings = netstrength.ClimeSettings()
    fit: plr.PlrFitSettings = plr.PlrFitSettings()
    B: int = FIT_B  # pylint: disable=invalid-name
    tau: Optional[float] = None
    screening: ensemble.ScreeningSettings = ensemble.ScreeningSettings()
    tuning: ensemble.TuningMode = ensemble.TuningMode.PER_REPLICATE
    seed: int = 0
    out: Optional[str] = None
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, 'tuning', ensemble.TuningMode(self.tuning))
        if self.B < 1:
            raise errors.DomainError(f'B must be positive, got {self.B}')
        if self.tau is not None and self.tau < 0:
            raise errors.DomainError(f'tau must be >= 0, got {self.tau}')
        if self.jobs == 0:
            raise errors.DomainError('jobs must be nonzero')

    @classmethod
    def from_flags(cls, default_b=FIT_B):
        try:
            alpha_grid = tuple(float(a) for a in FLAGS.alpha_grid)
        except ValueError as e:
            raise errors.DomainError(f'--alpha_grid: {e}') from e
        return cls(clime=netstrength.ClimeSettings(
            target_density=FLAGS.target_density,
            density_band=FLAGS.density_band),
                   fit=plr.PlrFitSettings(n_lambda=FLAGS.n_lambda,
                                          alpha_grid=alpha_grid,
                                          cv_folds=FLAGS.cv_folds,
                                          fit_intercept=FLAGS.intercept),
                   B=default_b if FLAGS.B is None else FLAGS.B,
                   tau=FLAGS.tau,
                   screening=ensemble.ScreeningSettings(
                       keep_fraction=FLAGS.keep_fraction,
                       per_replicate=FLAGS.per_replicate_screening),
                   tuning=FLAGS.tuning,
                   seed=FLAGS.seed,
                   out=FLAGS.out,
                   jobs=default_jobs() if FLAGS.jobs is None else FLAGS.jobs)

    def to_json(self):
        """The settings a model artifact depends on; out and jobs excluded."""
        return {
            'clime': dataclasses.asdict(self.clime),
            'fit': dataclasses.asdict(self.fit),
            'B': self.B,
            'tau': self.tau,
            'screening': dataclasses.asdict(self.screening),
            'tuning': self.tuning.value,
            'seed': self.seed,
        }


def scenario_from_flags():
    return synthgen.ScenarioConfig(scenario=FLAGS.scenario,
                                   p=FLAGS.p,
                                   q=FLAGS.q,
                                   n1=FLAGS.n1,
                                   n2=FLAGS.n2,
                                   n1_test=FLAGS.n1_test,
                                   n2_test=FLAGS.n2_test,
                                   perturb_var=FLAGS.perturb_var,
                                   seed=FLAGS.seed)


def _emit(path, text):
    dataio.atomic_write(path, text)
    print(text, end='')


def cmd_simulate(scenario, out):
    """Writes a synthetic dataset directory."""
    train, test, truth = synthgen.gen_scenario(scenario)
    manifest = dataio.write_dataset(out, train, test, truth, scenario)
    logging.info('wrote %d subjects and %d true edges to %s',
                 len(manifest.subjects), len(truth.delta_support), out)
    return 0


def cmd_features(dataset, config):
    """Edge features of every subject plus the per-subject tuning log."""
    train, test, _ = dataio.load_dataset(dataset)
    train_features, logs = netstrength.cohort_features(train, config.clime,
                                                       config.jobs)
    test_features = None
    if test is not None:
        test_features, test_logs = netstrength.cohort_features(
            test, config.clime, config.jobs)
        logs += test_logs
    dataio.write_feature_log(os.path.join(config.out, 'features_log.tsv'),
                             logs)
    if train_features is None:
        raise errors.NumericError('features failed for every training subject')
    dataio.write_features(os.path.join(config.out, 'features_train.tsv'),
                          train_features)
    if test_features is not None:
        dataio.write_features(os.path.join(config.out, 'features_test.tsv'),
                              test_features)
    failed = [log.subject_id for log in logs if log.status != 'ok']
    if failed:
        logging.warning('%d subjects failed: %s', len(failed),
                        ', '.join(failed))
        return 1
    return 0


def load_features(directory):
    """(train, test or None) feature sets from a features directory."""
    train = dataio.read_features(os.path.join(directory, 'features_train.tsv'))
    test_path = os.path.join(directory, 'features_test.tsv')
    test = dataio.read_features(test_path) if os.path.exists(test_path) \
        else None
    return train, test


def cmd_fit(features_dir, config):
    """Fits the ensemble and writes the model artifact and its tables."""
    train, test = load_features(features_dir)
    model = ensemble.fit_ensemble(train,
                                  test,
                                  B=config.B,
                                  settings=config.fit,
                                  screening=config.screening,
                                  seed=config.seed,
                                  tuning=config.tuning,
                                  n_jobs=config.jobs)
    network = ensemble.differential_network(model, config.tau)
    dataio.write_model(os.path.join(config.out, 'model.json'), model,
                       config.to_json())
    dataio.write_edges(os.path.join(config.out, 'edges.tsv'), network)
    dataio.write_scree(os.path.join(config.out, 'scree.tsv'),
                       ensemble.scree_data(model))
    error = None
    if test is not None:
        dataio.write_predictions(os.path.join(config.out, 'predictions.tsv'),
                                 model, test.labels)
        error = evalmetrics.misclassification_rate(
            ensemble.predicted_labels(model), test.labels)
    _emit(os.path.join(config.out, 'report.txt'),
          report.render_fit(model, network, error))
    return 0


def cmd_evaluate(model_path, truth_path, config):
    """Support recovery of a fitted model against known truth."""
    model = dataio.read_model(model_path)
    truth = dataio.truth_support(dataio.read_truth(truth_path, model.p),
                                 model.p)
    network = ensemble.differential_network(model, config.tau)
    estimated = evalmetrics.support_from_counts(model.theta_counts, network.tau)
    rates = evalmetrics.support_metrics(
        evalmetrics.SupportComparison(truth, estimated,
                                      model.theta_counts.size))
    points = evalmetrics.pr_curve(model.theta_counts, truth, model.B)
    metrics = pd.DataFrame({
        'metric': [
            'tau', 'tpr', 'tnr', 'tdr', 'n_true', 'n_estimated',
            'average_precision'
        ],
        'value': [
            float(network.tau), rates.tpr, rates.tnr, rates.tdr,
            float(len(truth)),
            float(len(estimated)),
            evalmetrics.average_precision(points)
        ],
    })
    dataio.write_table(os.path.join(config.out, 'metrics.tsv'), metrics)
    dataio.write_table(
        os.path.join(config.out, 'pr_curve.tsv'),
        pd.DataFrame(points, columns=['tau', 'recall', 'precision']))
    _emit(
        os.path.join(config.out, 'evaluation.txt'),
        report.render_evaluation(rates, network.tau, model.B, len(truth),
                                 len(estimated), points))
    return 0


def cmd_replicate(settings, out, jobs=1):
    """Runs the replications and writes the aggregated table."""
    results = replicate.run_replications(settings, out, jobs)
    rows = replicate.summarize(results, settings.table)
    dataio.write_table(os.path.join(out, 'report.tsv'),
                       pd.DataFrame([dataclasses.asdict(r) for r in rows],
                                    columns=['metric', 'method', 'mean', 'se']))
    if settings.table is replicate.Table.PRCURVE:
        curve = [(method,) + row
                 for method in replicate.METHODS
                 for row in replicate.mean_pr_curve(results, method)]
        dataio.write_table(
            os.path.join(out, 'pr_curve.tsv'),
            pd.DataFrame(curve,
                         columns=[
                             'method', 'tau', 'recall', 'precision',
                             'replications'
                         ]))
    failed = sum(len(r.failed_subjects) for r in results)
    for result in results:
        logging.info('replication %d used seed %d', result.index, result.seed)
    _emit(os.path.join(out, 'report.txt'),
          report.render_replication(settings, rows, failed))
    return 1 if failed else 0


def _require(name):
    value = getattr(FLAGS, name)
    if value is None:
        raise app.UsageError(f'--{name} must be set.')
    return value


def _dispatch(command):
    out = _require('out')
    if command == 'simulate':
        return cmd_simulate(scenario_from_flags(), out)
    if command == 'features':
        return cmd_features(_require('dataset'), RunConfig.from_flags())
    if command == 'fit':
        return cmd_fit(_require('features'), RunConfig.from_flags())
    if command == 'evaluate':
        truth = FLAGS.truth
        if truth is None and FLAGS.dataset is not None:
            truth = os.path.join(FLAGS.dataset, dataio.TRUTH)
        if truth is None:
            raise app.UsageError('--truth or --dataset must be set.')
        return cmd_evaluate(_require('model'), truth, RunConfig.from_flags())
    config = RunConfig.from_flags(
        default_b=replicate.ReplicationSettings.B)
    settings = replicate.ReplicationSettings(table=FLAGS.table,
                                             replications=FLAGS.replications,
                                             scenario=scenario_from_flags(),
                                             clime=config.clime,
                                             fit=config.fit,
                                             B=config.B,
                                             tau=config.tau,
                                             screening=config.screening,
                                             tuning=config.tuning,
                                             seed=config.seed)
    return cmd_replicate(settings, out, config.jobs)


def main(argv):
    if len(argv) != 2 or argv[1] not in COMMANDS:
        raise app.UsageError(f'Usage: sdncmv {"|".join(COMMANDS)} [flags]')
    try:
        return _dispatch(argv[1])
    except (errors.DomainError, errors.FormatError) as e:
        raise app.UsageError(str(e)) from e


def run():
    """Console script entry point."""
    app.run(main)


if __name__ == '__main__':
    run()
