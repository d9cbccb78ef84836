# pylint: disable=missing-docstring
"""End-to-end tests of the command line on tiny datasets."""

import json
import os
from unittest import mock

from absl import app
from absl.testing import absltest
from absl.testing import flagsaver
import numpy as np

from sdncmv import cli
from sdncmv import dataio
from sdncmv import errors

TINY = dict(p=10, q=20, n1=5, n2=5, n1_test=2, n2_test=2, seed=4)
FAST = dict(n_lambda=8, cv_folds=3)


def read_bytes(path):
    with open(path, 'rb') as f:
        return f.read()


class UsageTest(absltest.TestCase):

    def test_unknown_command(self):
        with self.assertRaises(app.UsageError):
            cli.main(['sdncmv'])
        with self.assertRaises(app.UsageError):
            cli.main(['sdncmv', 'train'])

    def test_missing_out(self):
        with flagsaver.flagsaver(out=None):
            with self.assertRaises(app.UsageError):
                cli.main(['sdncmv', 'simulate'])

    def test_bad_scenario(self):
        with flagsaver.flagsaver(out=self.create_tempdir().full_path,
                                 scenario=9):
            with self.assertRaises(app.UsageError):
                cli.main(['sdncmv', 'simulate'])

    def test_bad_keep_fraction(self):
        with flagsaver.flagsaver(keep_fraction=1.5):
            with self.assertRaises(errors.DomainError):
                cli.RunConfig.from_flags()

    def test_jobs_from_environment(self):
        with mock.patch.dict(os.environ, {cli.JOBS_ENV: '3'}):
            self.assertEqual(cli.RunConfig.from_flags().jobs, 3)
            with flagsaver.flagsaver(jobs=2):
                self.assertEqual(cli.RunConfig.from_flags().jobs, 2)
        with mock.patch.dict(os.environ, {cli.JOBS_ENV: 'many'}):
            with self.assertRaises(app.UsageError):
                cli.default_jobs()

    def test_config_json_skips_run_location(self):
        config = cli.RunConfig(out='/tmp/x', jobs=4, tau=100)
        obj = config.to_json()
        self.assertNotIn('out', obj)
        self.assertNotIn('jobs', obj)
        self.assertEqual(obj['B'], 200)
        self.assertEqual(obj['tuning'], 'per-replicate')
        self.assertEqual(obj['fit']['alpha_grid'], (0.5, 1.0))
        json.dumps(obj)


class PipelineTest(absltest.TestCase):

    def setUp(self):
        super().setUp()
        self.data = self.create_tempdir().full_path
        self.run_dir = self.create_tempdir().full_path
        with flagsaver.flagsaver(out=self.data, **TINY):
            self.assertEqual(cli.main(['sdncmv', 'simulate']), 0)

    def features(self):
        with flagsaver.flagsaver(out=self.run_dir, dataset=self.data):
            return cli.main(['sdncmv', 'features'])

    def fit(self, **kwargs):
        with flagsaver.flagsaver(out=self.run_dir,
                                 features=self.run_dir,
                                 **dict(FAST, **kwargs)):
            return cli.main(['sdncmv', 'fit'])

    def test_simulate_layout_and_determinism(self):
        self.assertLen(os.listdir(os.path.join(self.data, 'matrices')), 14)
        again = self.create_tempdir().full_path
        with flagsaver.flagsaver(out=again, **TINY):
            cli.main(['sdncmv', 'simulate'])
        for name in ('manifest.json', 'truth.tsv',
                     'matrices/train-case-003.csv'):
            self.assertEqual(read_bytes(os.path.join(self.data, name)),
                             read_bytes(os.path.join(again, name)))

    def test_features(self):
        code = self.features()
        log = dataio.read_table(os.path.join(self.run_dir, 'features_log.tsv'))
        self.assertLen(log, 14)
        self.assertEqual(code, int(any(log['status'] != 'ok')))
        with open(os.path.join(self.run_dir, 'features_train.tsv')) as f:
            header = f.readline().rstrip('\n').split('\t')
        self.assertLen(header, 45 + 0 + 2)
        self.assertTrue(
            os.path.exists(os.path.join(self.run_dir, 'features_test.tsv')))

    def test_fit_and_evaluate(self):
        self.features()
        self.assertEqual(self.fit(B=4, tau=2), 0)
        scree = dataio.read_table(os.path.join(self.run_dir, 'scree.tsv'))
        self.assertEqual(scree['tau'].tolist(), [0, 1, 2, 3, 4])
        edges = dataio.read_table(os.path.join(self.run_dir, 'edges.tsv'))
        self.assertTrue(all(edges['count'] > 2))
        self.assertEqual(len(edges), scree['n_edges'][2])
        predictions = dataio.read_table(
            os.path.join(self.run_dir, 'predictions.tsv'))
        self.assertLen(predictions, 4)
        self.assertTrue(set(predictions['predicted']) <= {0, 1})
        model_bytes = read_bytes(os.path.join(self.run_dir, 'model.json'))
        self.assertEqual(self.fit(B=4, tau=2), 0)
        self.assertEqual(read_bytes(os.path.join(self.run_dir, 'model.json')),
                         model_bytes)

        with flagsaver.flagsaver(out=self.run_dir,
                                 dataset=self.data,
                                 model=os.path.join(self.run_dir,
                                                    'model.json')):
            self.assertEqual(cli.main(['sdncmv', 'evaluate']), 0)
        metrics = dataio.read_table(os.path.join(self.run_dir, 'metrics.tsv'))
        values = dict(zip(metrics['metric'], metrics['value']))
        self.assertEqual(values['tau'], 2.0)
        for name in ('tpr', 'tnr', 'tdr'):
            self.assertBetween(values[name], 0.0, 1.0)
        curve = dataio.read_table(os.path.join(self.run_dir, 'pr_curve.tsv'))
        self.assertTrue(np.all(np.diff(curve['recall']) >= 0))
        self.assertTrue(
            os.path.exists(os.path.join(self.run_dir, 'evaluation.txt')))

    def test_evaluate_rejects_other_universe(self):
        self.features()
        self.fit(B=2)
        truth = os.path.join(self.run_dir, 'wide.tsv')
        dataio.write_truth(truth, [(1, 12, 1.0)])
        with flagsaver.flagsaver(out=self.run_dir,
                                 truth=truth,
                                 model=os.path.join(self.run_dir,
                                                    'model.json')):
            with self.assertRaises(app.UsageError):
                cli.main(['sdncmv', 'evaluate'])


class ReplicateCommandTest(absltest.TestCase):

    def test_prcurve(self):
        out = self.create_tempdir().full_path
        with flagsaver.flagsaver(out=out,
                                 table='prcurve',
                                 replications=2,
                                 B=2,
                                 **dict(TINY, **FAST)):
            code = cli.main(['sdncmv', 'replicate'])
        self.assertIn(code, (0, 1))
        self.assertEqual(sorted(os.listdir(os.path.join(out, 'replications'))),
                         ['rep_001.json', 'rep_002.json'])
        rows = dataio.read_table(os.path.join(out, 'report.tsv'))
        self.assertEqual(rows['metric'].tolist(), ['average_precision'] * 2)
        self.assertEqual(rows['method'].tolist(), ['sdncmv', 'plr'])
        curve = dataio.read_table(os.path.join(out, 'pr_curve.tsv'))
        self.assertEqual(list(curve.columns),
                         ['method', 'tau', 'recall', 'precision',
                          'replications'])
        with open(os.path.join(out, 'report.txt')) as f:
            self.assertTrue(f.readline().startswith('prcurve: 2 replications'))


if __name__ == '__main__':
    absltest.main()
