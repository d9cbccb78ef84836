# pylint: disable=missing-docstring
"""Unit tests for the file formats."""

import json
import os
import stat

from absl.testing import absltest
import numpy as np

from sdncmv import core
from sdncmv import dataio
from sdncmv import ensemble
from sdncmv import errors
from sdncmv import netstrength
from sdncmv import plr
from sdncmv import synthgen


def read_bytes(path):
    with open(path, 'rb') as f:
        return f.read()


def small_scenario(seed=3):
    config = synthgen.ScenarioConfig(scenario=1, p=10, q=6, n1=3, n2=2,
                                     n1_test=1, n2_test=1, seed=seed)
    return (config,) + synthgen.gen_scenario(config)


class AtomicWriteTest(absltest.TestCase):

    def test_creates_directories_and_leaves_no_temp(self):
        root = self.create_tempdir().full_path
        path = os.path.join(root, 'a', 'b', 'out.txt')
        dataio.atomic_write(path, 'x\ny\n')
        self.assertEqual(read_bytes(path), b'x\ny\n')
        self.assertEqual(os.listdir(os.path.dirname(path)), ['out.txt'])

    def test_permissions_follow_umask(self):
        path = os.path.join(self.create_tempdir().full_path, 'out.txt')
        previous = os.umask(0o027)
        try:
            dataio.atomic_write(path, 'x\n')
        finally:
            os.umask(previous)
        self.assertEqual(stat.S_IMODE(os.stat(path).st_mode), 0o640)


class DatasetTest(absltest.TestCase):

    def setUp(self):
        super().setUp()
        self.root = self.create_tempdir().full_path
        self.config, self.train, self.test, self.truth = small_scenario()
        self.manifest = dataio.write_dataset(self.root, self.train, self.test,
                                             self.truth, self.config)

    def test_layout(self):
        files = sorted(os.listdir(os.path.join(self.root, 'matrices')))
        self.assertLen(files, 7)
        self.assertIn('train-case-001.csv', files)
        self.assertTrue(os.path.exists(os.path.join(self.root, 'truth.tsv')))
        with open(os.path.join(self.root, 'manifest.json')) as f:
            obj = json.load(f)
        self.assertEqual(obj['format_version'], 1)
        self.assertEqual((obj['p'], obj['q'], obj['m']), (10, 6, 0))
        self.assertEqual(obj['seed'], 3)
        self.assertEqual(obj['scenario']['scenario'], 1)
        self.assertEqual([s['split'] for s in obj['subjects']],
                         ['train'] * 5 + ['test'] * 2)

    def test_matrix_text_format(self):
        text = read_bytes(
            os.path.join(self.root, 'matrices', 'train-case-001.csv')).decode()
        lines = text.split('\n')
        self.assertLen(lines, 11)
        self.assertEqual(lines[-1], '')
        self.assertLen(lines[0].split(','), 6)

    def test_load_round_trip(self):
        train, test, manifest = dataio.load_dataset(self.root)
        self.assertEqual(manifest, self.manifest)
        for a, b in zip(self.train.subjects + self.test.subjects,
                        train.subjects + test.subjects):
            self.assertEqual((a.id, a.group), (b.id, b.group))
            np.testing.assert_array_equal(a.data, b.data)

    def test_rewrite_is_byte_identical(self):
        train, test, _ = dataio.load_dataset(self.root)
        other = self.create_tempdir().full_path
        edges = dataio.read_truth(os.path.join(self.root, 'truth.tsv'), 10)
        dataio.write_dataset(other, train, test, self.truth, self.config)
        for name in ('manifest.json', 'truth.tsv',
                     'matrices/test-ctrl-001.csv'):
            self.assertEqual(read_bytes(os.path.join(self.root, name)),
                             read_bytes(os.path.join(other, name)))
        self.assertEqual(edges, self.truth.edges())

    def test_missing_matrix(self):
        os.remove(os.path.join(self.root, 'matrices', 'train-ctrl-002.csv'))
        with self.assertRaises(errors.FormatError):
            dataio.load_dataset(self.root)

    def test_wrong_shape(self):
        dataio.write_matrix(
            os.path.join(self.root, 'matrices', 'train-ctrl-002.csv'),
            np.ones((10, 5)))
        with self.assertRaises(errors.FormatError):
            dataio.load_dataset(self.root)

    def test_bad_manifest(self):
        obj = self.manifest.to_json()
        obj['format_version'] = 2
        with self.assertRaises(errors.FormatError):
            dataio.DatasetManifest.from_json(obj)
        obj = self.manifest.to_json()
        obj['subjects'][0]['label'] = 3
        with self.assertRaises(errors.FormatError):
            dataio.DatasetManifest.from_json(obj)
        obj = self.manifest.to_json()
        del obj['p']
        with self.assertRaises(errors.FormatError):
            dataio.DatasetManifest.from_json(obj)

    def test_truth_outside_universe(self):
        path = os.path.join(self.root, 'bad.tsv')
        dataio.write_truth(path, [(3, 12, 1.0)])
        with self.assertRaises(errors.FormatError):
            dataio.read_truth(path, 10)

    def test_confounders_survive(self):
        root = self.create_tempdir().full_path
        cohort = core.CohortDataset(self.train.subjects,
                                    np.arange(10.0).reshape(5, 2) / 3)
        dataio.write_dataset(root, cohort)
        train, test, manifest = dataio.load_dataset(root)
        self.assertIsNone(test)
        self.assertEqual(manifest.m, 2)
        np.testing.assert_array_equal(train.confounders, cohort.confounders)


class FeatureTableTest(absltest.TestCase):

    def setUp(self):
        super().setUp()
        rng = np.random.default_rng(0)
        self.features = core.FeatureSet(ids=['a', 'b', '007'],
                                        labels=[1, 0, 1],
                                        confounders=rng.standard_normal((3, 2)),
                                        values=rng.standard_normal((3, 6)),
                                        p=4)

    def test_header_and_round_trip(self):
        path = os.path.join(self.create_tempdir().full_path, 'f.tsv')
        dataio.write_features(path, self.features)
        header = read_bytes(path).decode().split('\n')[0].split('\t')
        self.assertEqual(header, [
            'id', 'label', 'c_1', 'c_2', 'w_1_2', 'w_1_3', 'w_2_3', 'w_1_4',
            'w_2_4', 'w_3_4'
        ])
        self.assertLen(header, 6 + 2 + 2)
        again = dataio.read_features(path)
        self.assertEqual(again.ids, ('a', 'b', '007'))
        np.testing.assert_array_equal(again.values, self.features.values)
        np.testing.assert_array_equal(again.confounders,
                                      self.features.confounders)
        other = os.path.join(os.path.dirname(path), 'g.tsv')
        dataio.write_features(other, again)
        self.assertEqual(read_bytes(path), read_bytes(other))

    def test_incomplete_edge_block(self):
        path = os.path.join(self.create_tempdir().full_path, 'f.tsv')
        dataio.atomic_write(path, 'id\tlabel\tw_1_2\tw_1_3\na\t1\t0.1\t0.2\n')
        with self.assertRaises(errors.FormatError):
            dataio.read_features(path)

    def test_feature_log(self):
        path = os.path.join(self.create_tempdir().full_path, 'log.tsv')
        logs = [
            netstrength.SubjectLog('a', 0.25, 0.5, True, 'ok'),
            netstrength.SubjectLog('b', None, None, False, 'failed', 'boom'),
        ]
        dataio.write_feature_log(path, logs)
        frame = dataio.read_table(path, required=('subject_id', 'lambda'))
        self.assertEqual(frame['status'].tolist(), ['ok', 'failed'])
        self.assertTrue(np.isnan(frame['lambda'][1]))


class ModelArtifactTest(absltest.TestCase):

    def make_ensemble(self):
        models = []
        for support in ([0, 2], [2], []):
            models.append(
                plr.PlrModel(intercept=0.5,
                             eta=np.array([0.1]),
                             beta=np.array([0.3 if k in support else 0.0
                                            for k in range(6)]),
                             lambda_=0.01,
                             alpha=0.5,
                             feature_index=np.arange(6)))
        return ensemble.EnsembleModel(models=models,
                                      p=4,
                                      seed=11,
                                      predictions=[[1, 0], [1, 1], [0, 0]],
                                      test_ids=('x', 'y'),
                                      active_set=np.arange(6))

    def test_round_trip(self):
        path = os.path.join(self.create_tempdir().full_path, 'model.json')
        model = self.make_ensemble()
        dataio.write_model(path, model, {'B': 3})
        again = dataio.read_model(path)
        np.testing.assert_array_equal(again.theta_counts, [1, 0, 2, 0, 0, 0])
        np.testing.assert_array_equal(again.votes, model.votes)
        self.assertEqual(again.test_ids, ('x', 'y'))
        features = core.FeatureSet(ids=['x', 'y'],
                                   labels=[1, 0],
                                   confounders=[[1.0], [2.0]],
                                   values=np.arange(12.0).reshape(2, 6),
                                   p=4)
        for before, after in zip(model.models, again.models):
            np.testing.assert_allclose(
                plr.predict_proba(after, features.confounders,
                                  features.values[:, after.feature_index]),
                plr.predict_proba(before, features.confounders,
                                  features.values))
        other = os.path.join(os.path.dirname(path), 'again.json')
        dataio.write_model(other, again, {'B': 3})
        self.assertEqual(read_bytes(path), read_bytes(other))

    def test_tampered_counts(self):
        obj = dataio.ensemble_to_json(self.make_ensemble())
        obj['theta_counts'][0] = 3
        with self.assertRaises(errors.FormatError):
            dataio.ensemble_from_json(obj)
        obj = dataio.ensemble_to_json(self.make_ensemble())
        del obj['replicates']
        with self.assertRaises(errors.FormatError):
            dataio.ensemble_from_json(obj)

    def test_tables(self):
        root = self.create_tempdir().full_path
        model = self.make_ensemble()
        dataio.write_edges(os.path.join(root, 'edges.tsv'),
                           ensemble.differential_network(model, 0))
        dataio.write_scree(os.path.join(root, 'scree.tsv'),
                           ensemble.scree_data(model))
        dataio.write_predictions(os.path.join(root, 'pred.tsv'), model,
                                 [1, 0])
        self.assertEqual(
            read_bytes(os.path.join(root, 'edges.tsv')).decode(),
            'i\tj\tcount\n2\t3\t2\n1\t2\t1\n')
        scree = dataio.read_table(os.path.join(root, 'scree.tsv'))
        self.assertLen(scree, 4)
        predictions = dataio.read_table(os.path.join(root, 'pred.tsv'))
        self.assertEqual(predictions['predicted'].tolist(), [1, 0])
        self.assertEqual(predictions['votes'].tolist(), [2, 1])


if __name__ == '__main__':
    absltest.main()
