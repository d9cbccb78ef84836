"""On-disk formats: dataset directories, feature tables and model artifacts.

A dataset directory holds

    manifest.json          format version, dimensions, subject records
    matrices/<id>.csv      one p x q matrix per subject, ',' separated
    truth.tsv              i, j, delta for synthetic data

Numbers are written with %.17g so a write -> read -> write cycle is byte
identical. Every file is written through atomic_write.
"""

import dataclasses
import io
import json
import math
import os
import tempfile
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from sdncmv import core
from sdncmv import ensemble
from sdncmv import errors
from sdncmv import plr

FORMAT_VERSION = 1
MANIFEST = 'manifest.json'
MATRIX_DIR = 'matrices'
TRUTH = 'truth.tsv'
FLOAT_FORMAT = '%.17g'
SPLITS = ('train', 'test')


def atomic_write(path, content):
    """Writes text to path through a temporary file and os.replace."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix='.tmp-')
    try:
        with os.fdopen(fd, 'w', newline='') as f:
            f.write(content)
        # mkstemp files are 0600; match what open() would have created.
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_text(obj):
    return json.dumps(obj, indent=1, allow_nan=False) + '\n'


def write_json(path, obj):
    atomic_write(path, _json_text(obj))


def read_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise errors.FormatError(f'{path}: invalid JSON: {e}') from e


def write_table(path, frame):
    """Writes a DataFrame as TSV."""
    atomic_write(
        path,
        frame.to_csv(sep='\t',
                     index=False,
                     float_format=FLOAT_FORMAT,
                     lineterminator='\n'))


def read_table(path, required=(), dtype=None):
    """Reads a TSV written by write_table.

    Raises:
        FormatError: if the file cannot be parsed or misses a column.
    """
    try:
        frame = pd.read_csv(path,
                            sep='\t',
                            dtype=dtype,
                            keep_default_na=False,
                            na_values=[''],
                            float_precision='round_trip')
    except (pd.errors.ParserError, pd.errors.EmptyDataError,
            UnicodeDecodeError) as e:
        raise errors.FormatError(f'{path}: {e}') from e
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise errors.FormatError(f'{path}: missing columns {missing}')
    return frame


def write_matrix(path, matrix):
    buffer = io.StringIO()
    np.savetxt(buffer, np.atleast_2d(matrix), fmt=FLOAT_FORMAT, delimiter=',',
               newline='\n')
    atomic_write(path, buffer.getvalue())


def read_matrix(path, shape=None):
    """Reads a ',' separated matrix, optionally checking its shape."""
    try:
        matrix = np.loadtxt(path, delimiter=',', ndmin=2)
    except ValueError as e:
        raise errors.FormatError(f'{path}: {e}') from e
    if shape is not None and matrix.shape != tuple(shape):
        raise errors.FormatError(
            f'{path}: expected a {shape[0]}x{shape[1]} matrix, got '
            f'{matrix.shape[0]}x{matrix.shape[1]}')
    return matrix


@dataclasses.dataclass(frozen=True)
class SubjectRecord:
    id: str
    label: int
    split: str
    path: str
    confounders: Tuple[float, ...] = ()


@dataclasses.dataclass(frozen=True)
class DatasetManifest:
    """Index of a dataset directory.

    Attributes:
        p: regions per subject.
        q: time points per subject.
        m: confounders per subject.
        subjects: one record per subject, train before test.
        seed: master seed of a synthetic dataset.
        scenario: the ScenarioConfig fields of a synthetic dataset.
        format_version: file format revision.
    """
    p: int
    q: int
    m: int
    subjects: Tuple[SubjectRecord, ...]
    seed: Optional[int] = None
    scenario: Optional[Dict[str, Any]] = None
    format_version: int = FORMAT_VERSION

    def records(self, split):
        return [s for s in self.subjects if s.split == split]

    def to_json(self):
        return {
            'format_version': self.format_version,
            'p': self.p,
            'q': self.q,
            'm': self.m,
            'seed': self.seed,
            'scenario': self.scenario,
            'subjects': [dataclasses.asdict(s) for s in self.subjects],
        }

    @classmethod
    def from_json(cls, obj):
        """Validates and parses a manifest dictionary.

        Raises:
            FormatError: for unknown versions, missing keys or bad records.
        """
        try:
            version = obj['format_version']
            if version != FORMAT_VERSION:
                raise errors.FormatError(
                    f'unsupported manifest format version {version}')
            m = int(obj['m'])
            subjects = []
            for record in obj['subjects']:
                subject = SubjectRecord(id=str(record['id']),
                                        label=int(record['label']),
                                        split=str(record['split']),
                                        path=str(record['path']),
                                        confounders=tuple(
                                            float(c)
                                            for c in record['confounders']))
                if subject.label not in (0, 1):
                    raise errors.FormatError(
                        f'subject {subject.id}: label must be 0 or 1')
                if subject.split not in SPLITS:
                    raise errors.FormatError(
                        f'subject {subject.id}: unknown split {subject.split}')
                if len(subject.confounders) != m:
                    raise errors.FormatError(
                        f'subject {subject.id}: expected {m} confounders')
                subjects.append(subject)
            ids = [s.id for s in subjects]
            if len(set(ids)) != len(ids):
                raise errors.FormatError('duplicate subject ids in manifest')
            return cls(p=int(obj['p']),
                       q=int(obj['q']),
                       m=m,
                       subjects=tuple(subjects),
                       seed=obj.get('seed'),
                       scenario=obj.get('scenario'),
                       format_version=version)
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, errors.FormatError):
                raise
            raise errors.FormatError(f'malformed manifest: {e!r}') from e


def _cohort_records(cohort, split):
    records = []
    for k, subject in enumerate(cohort.subjects):
        records.append(
            SubjectRecord(id=subject.id,
                          label=subject.group,
                          split=split,
                          path=f'{MATRIX_DIR}/{subject.id}.csv',
                          confounders=tuple(
                              float(c) for c in cohort.confounders[k])))
    return records


def write_dataset(directory, train, test=None, truth=None, scenario=None):
    """Writes cohorts (and optional ground truth) as a dataset directory.

    Args:
        directory: target directory, created if needed.
        train: training CohortDataset.
        test: optional test CohortDataset.
        truth: optional synthgen.GroundTruth written to truth.tsv.
        scenario: optional ScenarioConfig recorded in the manifest.

    Returns:
        The DatasetManifest written.
    """
    records = _cohort_records(train, 'train')
    if test is not None:
        if (test.p, test.q, test.m) != (train.p, train.q, train.m):
            raise errors.DomainError('train and test cohorts differ in shape')
        records += _cohort_records(test, 'test')
    cohorts = [train] + ([test] if test is not None else [])
    for cohort in cohorts:
        for subject in cohort.subjects:
            write_matrix(os.path.join(directory, MATRIX_DIR,
                                      f'{subject.id}.csv'), subject.data)
    manifest = DatasetManifest(
        p=train.p,
        q=train.q,
        m=train.m,
        subjects=tuple(records),
        seed=scenario.seed if scenario is not None else None,
        scenario=dataclasses.asdict(scenario) if scenario is not None else None)
    if truth is not None:
        write_truth(os.path.join(directory, TRUTH), truth.edges())
    write_json(os.path.join(directory, MANIFEST), manifest.to_json())
    return manifest


def read_manifest(directory):
    path = os.path.join(directory, MANIFEST)
    if not os.path.exists(path):
        raise errors.FormatError(f'no {MANIFEST} in {directory}')
    return DatasetManifest.from_json(read_json(path))


def _load_split(directory, manifest, split):
    records = manifest.records(split)
    if not records:
        return None
    subjects = []
    for record in records:
        path = os.path.join(directory, record.path)
        if not os.path.exists(path):
            raise errors.FormatError(f'missing matrix file {record.path}')
        subjects.append(
            core.SubjectMatrix(record.id, record.label,
                               read_matrix(path, (manifest.p, manifest.q))))
    confounders = np.array([r.confounders for r in records],
                           dtype=float).reshape(len(records), manifest.m)
    return core.CohortDataset(subjects, confounders)


def load_dataset(directory):
    """Reads a dataset directory.

    Returns:
        (train CohortDataset, test CohortDataset or None, DatasetManifest).

    Raises:
        FormatError: for a malformed manifest or matrix file.
    """
    manifest = read_manifest(directory)
    train = _load_split(directory, manifest, 'train')
    if train is None:
        raise errors.FormatError(f'{directory}: no training subjects')
    return train, _load_split(directory, manifest, 'test'), manifest


def write_truth(path, edges):
    """Writes 1-based (i, j, delta) triples."""
    frame = pd.DataFrame(list(edges), columns=['i', 'j', 'delta'])
    write_table(path, frame.astype({'i': int, 'j': int, 'delta': float}))


def read_truth(path, p=None):
    """Reads a truth table as a list of (i, j, delta).

    Raises:
        FormatError: if an edge is not a valid pair for p.
    """
    frame = read_table(path, required=('i', 'j', 'delta'))
    edges = [(int(i), int(j), float(delta))
             for i, j, delta in zip(frame['i'], frame['j'], frame['delta'])]
    if p is not None:
        for i, j, _ in edges:
            if not 1 <= i < j <= p:
                raise errors.FormatError(
                    f'{path}: edge ({i}, {j}) outside p={p}')
    return edges


def truth_support(edges, p):
    """Flat edge indices of 1-based (i, j, ...) records."""
    return frozenset(core.edge_index(e[0], e[1], p) for e in edges)


def confounder_names(m):
    return [f'c_{k + 1}' for k in range(m)]


def write_features(path, features):
    """Writes a FeatureSet: id, label, c_1..c_M, then the w_i_j columns."""
    emap = core.EdgeIndexMap(features.p)
    frame = pd.concat([
        pd.DataFrame({
            'id': list(features.ids),
            'label': features.labels
        }),
        pd.DataFrame(features.confounders, columns=confounder_names(
            features.m)),
        pd.DataFrame(features.values, columns=emap.column_names()),
    ],
                      axis=1)
    write_table(path, frame)


def _p_from_edges(d):
    p = (1 + math.isqrt(1 + 8 * d)) // 2
    return p if core.n_edges(p) == d and p >= 2 else None


def read_features(path):
    """Reads a feature table written by write_features.

    Raises:
        FormatError: when the edge columns are not a full w_i_j block.
    """
    frame = read_table(path, required=('id', 'label'), dtype={'id': str})
    columns = list(frame.columns)
    confounders = [c for c in columns if c.startswith('c_')]
    edges = [c for c in columns if c.startswith('w_')]
    p = _p_from_edges(len(edges))
    if p is None or edges != core.EdgeIndexMap(p).column_names():
        raise errors.FormatError(
            f'{path}: edge columns are not a complete w_i_j block')
    if confounders != confounder_names(len(confounders)):
        raise errors.FormatError(f'{path}: confounder columns out of order')
    try:
        return core.FeatureSet(ids=frame['id'].tolist(),
                               labels=frame['label'].to_numpy(dtype=int),
                               confounders=frame[confounders].to_numpy(
                                   dtype=float),
                               values=frame[edges].to_numpy(dtype=float),
                               p=p)
    except (errors.DomainError, ValueError) as e:
        raise errors.FormatError(f'{path}: {e}') from e


def write_feature_log(path, logs):
    frame = pd.DataFrame([dataclasses.asdict(log) for log in logs],
                         columns=[
                             'subject_id', 'lambda_', 'density', 'attainable',
                             'status', 'message'
                         ])
    write_table(path, frame.rename(columns={'lambda_': 'lambda'}))


def _model_record(b, model, seed):
    support = np.flatnonzero(model.beta)
    return {
        'replicate': b,
        'seed': [seed, b],
        'lambda': float(model.lambda_),
        'alpha': float(model.alpha),
        'intercept': float(model.intercept),
        'eta': [float(v) for v in model.eta],
        'support': [int(k) for k in model.feature_index[support]],
        'coefficients': [float(v) for v in model.beta[support]],
    }


def ensemble_to_json(model, config=None):
    """Serializes an EnsembleModel; replicates keep only nonzero coefficients.

    Args:
        model: the EnsembleModel.
        config: optional JSON-ready run settings stored alongside.
    """
    return {
        'format_version': FORMAT_VERSION,
        'p': model.p,
        'seed': model.seed,
        'B': model.B,
        'tuning': model.tuning.value,
        'config': config,
        'active_set': (None if model.active_set is None else
                       [int(k) for k in model.active_set]),
        'test_ids': list(model.test_ids),
        'predictions': model.predictions.tolist(),
        'theta_counts': model.theta_counts.tolist(),
        'replicates': [
            _model_record(b, m, model.seed)
            for b, m in enumerate(model.models, start=1)
        ],
    }


def ensemble_from_json(obj):
    """Rebuilds an EnsembleModel and checks its stored counts.

    Raises:
        FormatError: for a malformed artifact or inconsistent counts.
    """
    try:
        if obj['format_version'] != FORMAT_VERSION:
            raise errors.FormatError(
                f'unsupported model format version {obj["format_version"]}')
        models = []
        for record in obj['replicates']:
            models.append(
                plr.PlrModel(intercept=float(record['intercept']),
                             eta=np.array(record['eta'], dtype=float),
                             beta=np.array(record['coefficients'],
                                           dtype=float),
                             lambda_=float(record['lambda']),
                             alpha=float(record['alpha']),
                             feature_index=np.array(record['support'],
                                                    dtype=int)))
        test_ids = tuple(obj['test_ids'])
        active = obj.get('active_set')
        model = ensemble.EnsembleModel(
            models=models,
            p=int(obj['p']),
            seed=int(obj['seed']),
            predictions=np.array(obj['predictions'],
                                 dtype=int).reshape(len(models),
                                                    len(test_ids)),
            test_ids=test_ids,
            active_set=None if active is None else np.array(active, dtype=int),
            tuning=obj['tuning'])
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, errors.FormatError):
            raise
        raise errors.FormatError(f'malformed model artifact: {e!r}') from e
    if model.B != obj.get('B') or \
            model.theta_counts.tolist() != list(obj.get('theta_counts', ())):
        raise errors.FormatError('model artifact counts are inconsistent')
    return model


def write_model(path, model, config=None):
    write_json(path, ensemble_to_json(model, config))


def read_model(path):
    return ensemble_from_json(read_json(path))


def write_edges(path, network):
    write_table(path, pd.DataFrame(list(network.edges),
                                   columns=['i', 'j', 'count']))


def write_scree(path, scree: Sequence[Tuple[int, int]]):
    write_table(path, pd.DataFrame(list(scree), columns=['tau', 'n_edges']))


def write_predictions(path, model, labels=None):
    """Writes id, votes, predicted label and, when known, the true label."""
    columns: Dict[str, List[Any]] = {
        'id': list(model.test_ids),
        'votes': [int(v) for v in model.votes],
        'predicted': [int(v) for v in ensemble.predicted_labels(model)],
    }
    if labels is not None:
        columns['label'] = [int(v) for v in labels]
    write_table(path, pd.DataFrame(columns))
