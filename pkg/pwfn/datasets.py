"""
Datasets: seeded Gaussian blobs, or a labelled CSV/Excel table read with pandas.
"""

import logging
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd

from pwfn.errors import ConfigError
from pwfn.numerics import STREAM_DATA, Rng

logger = logging.getLogger(__name__)

EXCEL_EXTENSIONS = ('.xlsx', '.xls')


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __len__(self):
        return int(self.labels.shape[0])

    @property
    def n_features(self):
        return int(self.features.shape[1])

    def batches(self, batch_size, order=None):
        order = np.arange(len(self)) if order is None else order
        for start in range(0, len(self), batch_size):
            idx = order[start:start + batch_size]
            yield self.features[idx], self.labels[idx]


def blob_means(n_classes, n_features, separation):
    """Class means on a circle of radius `separation` in the first two features"""
    means = np.zeros((n_classes, n_features))
    if n_features == 1:
        means[:, 0] = separation * (np.arange(n_classes) - (n_classes - 1) / 2.0)
        return means
    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    means[:, 0] = separation * np.cos(angles)
    means[:, 1] = separation * np.sin(angles)
    return means


def _draw_blobs(rng, means, n_samples):
    n_classes, n_features = means.shape
    labels = np.arange(n_samples) % n_classes
    labels = labels[rng.permutation(n_samples)]
    noise = rng.gaussian(n_samples * n_features).reshape(n_samples, n_features)
    return Dataset(means[labels] + noise, labels.astype(np.int64), n_classes)


def make_blobs(spec):
    """(train, test) drawn from one stream, so the two sets never share a sample"""
    rng = Rng(spec.seed, STREAM_DATA)
    means = blob_means(spec.n_classes, spec.n_features, spec.class_separation)
    train = _draw_blobs(rng, means, spec.n_train)
    test = _draw_blobs(rng, means, spec.n_test)
    return train, test


def read_table(path):
    if not os.path.exists(path):
        raise ConfigError(f'Dataset file not found: {path}')
    try:
        if path.lower().endswith(EXCEL_EXTENSIONS):
            return pd.read_excel(path)
        return pd.read_csv(path)
    except (ValueError, pd.errors.ParserError) as e:
        raise ConfigError(f'Could not read dataset {path}: {e}') from e


def load_table(spec):
    """Split a labelled table and standardise it with train statistics only"""
    df = read_table(spec.path)
    if spec.label_column not in df.columns:
        raise ConfigError(f'Label column {spec.label_column!r} not in {list(df.columns)}')
    if df.isnull().values.any():
        raise ConfigError(f'Dataset {spec.path} has missing values')
    codes, classes = pd.factorize(df[spec.label_column], sort=True)
    feature_frame = df.drop(columns=[spec.label_column])
    non_numeric = [c for c in feature_frame.columns if not pd.api.types.is_numeric_dtype(feature_frame[c])]
    if non_numeric:
        raise ConfigError(f'Non-numeric feature columns: {non_numeric}')
    features = feature_frame.to_numpy(dtype=np.float64)
    n_rows = len(df)
    if n_rows < 2:
        raise ConfigError('Dataset needs at least two rows to split')

    order = Rng(spec.seed, STREAM_DATA).permutation(n_rows)
    n_test = min(n_rows - 1, max(1, int(round(n_rows * spec.test_fraction))))
    test_idx, train_idx = order[:n_test], order[n_test:]
    train_x, test_x = features[train_idx], features[test_idx]
    if spec.normalization == 'standardize':
        mean = train_x.mean(axis=0)
        std = train_x.std(axis=0)
        std[std == 0] = 1.0
        train_x = (train_x - mean) / std
        test_x = (test_x - mean) / std
    n_classes = len(classes)
    logger.info(f'Loaded {spec.path}: {len(train_idx)} train / {n_test} test rows, '
                f'{features.shape[1]} features, {n_classes} classes')
    return (Dataset(train_x, codes[train_idx].astype(np.int64), n_classes),
            Dataset(test_x, codes[test_idx].astype(np.int64), n_classes))


def load_dataset(spec, network):
    """(train, test) checked against the network's input and output sizes"""
    spec.validate()
    train, test = make_blobs(spec) if spec.kind == 'synthetic' else load_table(spec)
    if train.n_features != network.layer_dims[0]:
        raise ConfigError(f'Dataset has {train.n_features} features but the network '
                          f'expects {network.layer_dims[0]} inputs')
    if train.n_classes > network.layer_dims[-1]:
        raise ConfigError(f'Dataset has {train.n_classes} classes but the network '
                          f'has {network.layer_dims[-1]} outputs')
    return train, test
