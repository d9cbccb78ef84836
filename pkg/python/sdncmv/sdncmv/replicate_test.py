# pylint: disable=missing-docstring
"""Unit tests for the replication driver."""

import json
import math
import os

from absl.testing import absltest
from absl.testing import parameterized

from sdncmv import errors
from sdncmv import evalmetrics
from sdncmv import plr
from sdncmv import replicate
from sdncmv import synthgen


def tiny_settings(table='table2', replications=2):
    return replicate.ReplicationSettings(
        table=table,
        replications=replications,
        scenario=synthgen.ScenarioConfig(scenario=1, p=10, q=20, n1=6, n2=6,
                                         n1_test=3, n2_test=3),
        fit=plr.PlrFitSettings(n_lambda=8, cv_folds=3),
        B=2)


def method_result(error, tdr, curve=()):
    return replicate.MethodResult(misclassification=error,
                                  tpr=0.5,
                                  tnr=1.0,
                                  tdr=tdr,
                                  n_edges=3,
                                  average_precision=0.5,
                                  pr_curve=tuple(curve))


def handmade_results():
    first = replicate.ReplicationResult(
        index=1,
        seed=10,
        failed_subjects=(),
        methods={
            replicate.SDNCMV:
                method_result(0.1, 0.8, [
                    evalmetrics.PrPoint(2, 0.5, 1.0),
                    evalmetrics.PrPoint(1, 1.0, 0.5)
                ]),
            replicate.BASELINE:
                method_result(0.3, 0.5),
        })
    second = replicate.ReplicationResult(
        index=2,
        seed=11,
        failed_subjects=('test-case-002',),
        methods={
            replicate.SDNCMV:
                method_result(0.2, 0.4, [evalmetrics.PrPoint(1, 0.5, 0.75)]),
            replicate.BASELINE:
                method_result(0.2, 0.6),
        })
    return [first, second]


class SettingsTest(parameterized.TestCase):

    def test_defaults(self):
        settings = replicate.ReplicationSettings()
        self.assertEqual(settings.scenario.p, 50)
        self.assertEqual(settings.scenario.test_sizes, (20, 20))
        self.assertIs(settings.table, replicate.Table.TABLE1)

    @parameterized.parameters(dict(replications=0), dict(B=0),
                              dict(B=4, tau=5))
    def test_invalid(self, **kwargs):
        with self.assertRaises(errors.DomainError):
            replicate.ReplicationSettings(**kwargs)

    def test_needs_test_subjects(self):
        scenario = synthgen.ScenarioConfig(p=10, q=20, n1=4, n2=4, n1_test=0,
                                           n2_test=0)
        with self.assertRaises(errors.DomainError):
            replicate.ReplicationSettings(scenario=scenario)

    def test_unknown_table(self):
        with self.assertRaises(ValueError):
            replicate.ReplicationSettings(table='table9')

    def test_replication_seed(self):
        self.assertEqual(replicate.replication_seed(0, 1),
                         replicate.replication_seed(0, 1))
        seeds = {replicate.replication_seed(0, r) for r in range(1, 21)}
        self.assertLen(seeds, 20)
        self.assertNotEqual(replicate.replication_seed(0, 1),
                            replicate.replication_seed(1, 1))


class SummaryTest(absltest.TestCase):

    def test_table1(self):
        rows = replicate.summarize(handmade_results(), 'table1')
        self.assertEqual([(r.metric, r.method) for r in rows],
                         [('misclassification', 'sdncmv'),
                          ('misclassification', 'plr')])
        self.assertAlmostEqual(rows[0].mean, 0.15)
        self.assertAlmostEqual(rows[0].se, 0.05)
        self.assertAlmostEqual(rows[1].mean, 0.25)

    def test_table2(self):
        rows = replicate.summarize(handmade_results(), replicate.Table.TABLE2)
        self.assertLen(rows, 8)
        self.assertEqual(rows[-2].metric, 'tdr_better_fraction')
        self.assertEqual(rows[-2].mean, 0.5)
        self.assertEqual(rows[-1].metric, 'tdr_tie_fraction')
        self.assertEqual(rows[-1].mean, 0.0)
        tdr = [r for r in rows if r.metric == 'tdr']
        self.assertAlmostEqual(tdr[0].mean, 0.6)
        self.assertAlmostEqual(tdr[1].mean, 0.55)

    def test_equal_tdr_is_a_tie_not_a_loss(self):
        results = handmade_results()
        results.append(
            replicate.ReplicationResult(
                index=3,
                seed=12,
                failed_subjects=(),
                methods={
                    replicate.SDNCMV: method_result(0.0, 1.0),
                    replicate.BASELINE: method_result(0.1, 1.0),
                }))
        rows = replicate.summarize(results, 'table2')
        by_metric = {r.metric: r.mean for r in rows if r.method == 'sdncmv'}
        self.assertAlmostEqual(by_metric['tdr_better_fraction'], 1 / 3)
        self.assertAlmostEqual(by_metric['tdr_tie_fraction'], 1 / 3)

    def test_single_replication_has_no_se(self):
        rows = replicate.summarize(handmade_results()[:1], 'table1')
        self.assertTrue(math.isnan(rows[0].se))

    def test_mean_pr_curve(self):
        rows = replicate.mean_pr_curve(handmade_results())
        self.assertEqual([row[0] for row in rows], [2, 1])
        self.assertEqual(rows[0], (2, 0.5, 1.0, 1))
        self.assertAlmostEqual(rows[1][1], 0.75)
        self.assertAlmostEqual(rows[1][2], 0.625)
        self.assertEqual(rows[1][3], 2)
        self.assertEqual(replicate.mean_pr_curve(handmade_results(), 'plr'),
                         [])

    def test_json(self):
        obj = handmade_results()[0].to_json()
        self.assertEqual(obj['replication'], 1)
        self.assertEqual(obj['methods']['sdncmv']['pr_curve'][0], [2, 0.5, 1.0])
        json.dumps(obj)


class RunTest(absltest.TestCase):

    def test_one_replication(self):
        out = self.create_tempdir().full_path
        result = replicate.run_replication(1, tiny_settings(), out)
        self.assertEqual(set(result.methods), {'sdncmv', 'plr'})
        for scores in result.methods.values():
            for value in (scores.misclassification, scores.tpr, scores.tnr,
                          scores.tdr):
                self.assertBetween(value, 0.0, 1.0)
        with open(os.path.join(out, 'replications', 'rep_001.json')) as f:
            obj = json.load(f)
        self.assertEqual(obj['seed'], replicate.replication_seed(0, 1))
        self.assertEqual(obj['methods']['sdncmv']['n_edges'],
                         result.methods['sdncmv'].n_edges)

    def test_independent_of_jobs(self):
        settings = tiny_settings()
        serial = replicate.run_replications(settings, n_jobs=1)
        parallel = replicate.run_replications(settings, n_jobs=2)
        self.assertEqual([r.index for r in parallel], [1, 2])
        self.assertEqual(replicate.summarize(serial, 'table2'),
                         replicate.summarize(parallel, 'table2'))
        self.assertEqual([r.to_json() for r in serial],
                         [r.to_json() for r in parallel])


if __name__ == '__main__':
    absltest.main()
