"""
Quantisation quality: weight-space entropy, unique values, point and
ensemble accuracy, and how far weights moved to reach their centers.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

from pwfn.bayes_weights import sample_weights
from pwfn.errors import ConfigError
from pwfn.numerics import predict, softmax

logger = logging.getLogger(__name__)

DEFAULT_ENSEMBLE_SAMPLES = 20
CLUSTER_COLUMNS = ['round', 'center', 'members', 'passes', 'omega_max', 'mean_relative',
                   'max_relative', 'mean_absolute', 'max_absolute']
ROUND_COLUMNS = ['round', 'clusters', 'members', 'passes', 'omega_max', 'delta_max',
                 'mean_relative', 'max_relative', 'zero_center_members', 'zero_center_max_absolute']


@dataclass
class CompressionReport:
    entropy_bits: float
    unique_params: int
    top1_point: Optional[float] = None
    top1_ensemble: Optional[float] = None
    per_round: List[dict] = field(default_factory=list)
    top1_pretrained: Optional[float] = None
    prior_mode: Optional[str] = None
    n_weights: int = 0
    fixed_fraction: float = 0.0
    final_omega: int = 0
    epochs_trained: int = 0
    entropy_by_round: List[float] = field(default_factory=list)
    unique_by_round: List[int] = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def _value_keys(values):
    """Bit patterns of the 32-bit representation, the unit of identity"""
    return np.asarray(values, dtype=np.float64).astype(np.float32).view(np.uint32)


def _mus(store_or_values):
    return store_or_values.mu if hasattr(store_or_values, 'mu') else np.asarray(store_or_values)


def weight_entropy(store):
    """Shannon entropy in bits of the occupancy of each distinct value"""
    keys = _value_keys(_mus(store))
    if keys.size == 0:
        return 0.0
    _, counts = np.unique(keys, return_counts=True)
    p = counts / keys.size
    return float(max(0.0, -np.sum(p * np.log2(p))))


def unique_count(store):
    return int(np.unique(_value_keys(_mus(store))).size)


def evaluate_point(store, dataset):
    """Top-1 accuracy with every weight at its mean; ties go to the lowest class"""
    if len(dataset) == 0:
        raise ConfigError('Cannot evaluate on an empty dataset')
    probs = softmax(predict(store.spec, store.point_params(), dataset.features))
    return float(np.mean(np.argmax(probs, axis=1) == dataset.labels))


def evaluate_ensemble(store, dataset, rng, samples=DEFAULT_ENSEMBLE_SAMPLES, deterministic_fixed=False):
    """Top-1 accuracy of the mean softmax over `samples` weight draws"""
    if samples < 1:
        raise ConfigError(f'samples must be >= 1, got {samples}')
    if len(dataset) == 0:
        raise ConfigError('Cannot evaluate on an empty dataset')
    total = np.zeros((len(dataset), store.spec.layer_dims[-1]))
    for _ in range(samples):
        params, _ = sample_weights(store, rng, deterministic_fixed)
        total += softmax(predict(store.spec, params, dataset.features))
    mean = total / samples
    return float(np.mean(np.argmax(mean, axis=1) == dataset.labels))


# --- Movement diagnostics ---

def member_movements(records):
    """One row per assigned weight: how far its pre-assignment mean moved"""
    rows = []
    for record in records:
        center = record.center
        for weight_id, mu in zip(record.member_ids, record.member_mus):
            absolute = abs(mu - center)
            rows.append({
                'round': record.round_t,
                'pass': record.pass_index,
                'omega': record.omega,
                'delta': record.delta,
                'center': center,
                'weight_id': weight_id,
                'mu_pre': mu,
                'absolute': absolute,
                'relative': absolute / abs(center) if center != 0 else np.nan,
            })
    return pd.DataFrame(rows, columns=['round', 'pass', 'omega', 'delta', 'center', 'weight_id',
                                       'mu_pre', 'absolute', 'relative'])


def relative_distance_report(records):
    """(clusters, rounds) tables: one row per round per center, and per round

    Relative distance is |mu - c| / |c|; moves onto the zero center have no
    relative distance and are reported through the absolute columns only.
    """
    moves = member_movements(records)
    if moves.empty:
        return pd.DataFrame(columns=CLUSTER_COLUMNS), pd.DataFrame(columns=ROUND_COLUMNS)

    clusters = (moves.groupby(['round', 'center'], sort=True)
                .agg(members=('weight_id', 'size'),
                     passes=('pass', 'nunique'),
                     omega_max=('omega', 'max'),
                     mean_relative=('relative', 'mean'),
                     max_relative=('relative', 'max'),
                     mean_absolute=('absolute', 'mean'),
                     max_absolute=('absolute', 'max'))
                .reset_index())[CLUSTER_COLUMNS]

    nonzero = moves[moves['center'] != 0]
    zero = moves[moves['center'] == 0]
    rounds = (moves.groupby('round', sort=True)
              .agg(clusters=('center', 'nunique'),
                   members=('weight_id', 'size'),
                   passes=('pass', 'nunique'),
                   omega_max=('omega', 'max'),
                   delta_max=('delta', 'max'))
              .reset_index())
    relative = nonzero.groupby('round')['relative'].agg(['mean', 'max']).rename(
        columns={'mean': 'mean_relative', 'max': 'max_relative'})
    zero_stats = zero.groupby('round')['absolute'].agg(['size', 'max']).rename(
        columns={'size': 'zero_center_members', 'max': 'zero_center_max_absolute'})
    rounds = rounds.join(relative, on='round').join(zero_stats, on='round')
    rounds['zero_center_members'] = rounds['zero_center_members'].fillna(0).astype(int)
    return clusters, rounds[ROUND_COLUMNS]


def sigma_histogram(store, bins=40):
    """Counts of log2(sigma), split by fixed/free"""
    log_sigma = np.log2(np.maximum(store.sigma, np.finfo(np.float64).tiny))
    edges = np.histogram_bin_edges(log_sigma, bins=bins)
    free_counts, _ = np.histogram(log_sigma[~store.fixed], bins=edges)
    fixed_counts, _ = np.histogram(log_sigma[store.fixed], bins=edges)
    return pd.DataFrame({
        'log2_sigma_low': edges[:-1],
        'log2_sigma_high': edges[1:],
        'free': free_counts,
        'fixed': fixed_counts,
    })


def mu_sigma_scatter(store):
    names = []
    for name, shape in store.spec.param_shapes():
        names.extend([name] * int(np.prod(shape)))
    return pd.DataFrame({
        'weight_id': np.arange(store.n_weights),
        'tensor': names,
        'mu': store.mu,
        'sigma': store.sigma,
        'fixed': store.fixed,
    })


def summarize(store, records, history=None, top1_point=None, top1_ensemble=None):
    """CompressionReport for a store and its assignment log"""
    history = history or {}
    _, rounds = relative_distance_report(records)
    return CompressionReport(
        entropy_bits=weight_entropy(store),
        unique_params=unique_count(store),
        top1_point=top1_point if top1_point is not None else history.get('top1_point'),
        top1_ensemble=top1_ensemble if top1_ensemble is not None else history.get('top1_ensemble'),
        per_round=rounds.to_dict(orient='records'),
        top1_pretrained=history.get('top1_pretrained'),
        prior_mode=history.get('prior_mode'),
        n_weights=store.n_weights,
        fixed_fraction=float(store.fixed.mean()) if store.n_weights else 0.0,
        final_omega=max((r.omega for r in records), default=0),
        epochs_trained=int(history.get('epochs_trained', 0)),
        entropy_by_round=list(history.get('entropy_by_round', [])),
        unique_by_round=list(history.get('unique_by_round', [])),
    )
