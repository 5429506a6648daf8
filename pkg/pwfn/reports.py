"""
Report files: summary JSON, CSV tables and an optional Excel workbook.
"""

import json
import logging
import math
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd

from pwfn.clustering import AssignmentRecord
from pwfn.errors import ReportError
from pwfn.metrics import mu_sigma_scatter, relative_distance_report, sigma_histogram, summarize

logger = logging.getLogger(__name__)

SUMMARY_FILE = 'report.json'
CLUSTERS_FILE = 'clusters.csv'
ROUNDS_FILE = 'rounds.csv'
SIGMA_HISTOGRAM_FILE = 'sigma_histogram.csv'
MU_SIGMA_FILE = 'mu_sigma.csv'
ASSIGNMENTS_FILE = 'assignments.json'
WORKBOOK_FILE = 'report.xlsx'


@dataclass
class ReportBundle:
    summary: object
    clusters: pd.DataFrame
    rounds: pd.DataFrame
    sigma_histogram: pd.DataFrame
    mu_sigma: pd.DataFrame

    def tables(self):
        return {
            'clusters': self.clusters,
            'rounds': self.rounds,
            'sigma_histogram': self.sigma_histogram,
            'mu_sigma': self.mu_sigma,
        }


def to_jsonable(value):
    """numpy scalars to Python, NaN/inf to None, recursively"""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_json(data, path):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(to_jsonable(data), f, indent=2, sort_keys=True)
    return path


def read_assignment_log(path):
    if not os.path.exists(path):
        raise ReportError(f'Assignment log not found: {path}')
    try:
        with open(path, encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ReportError(f'Assignment log {path} is not valid JSON: {e}') from e
    if isinstance(data, dict):
        data = data.get('assignments')
    if not isinstance(data, list):
        raise ReportError(f'Assignment log {path} holds no assignment list')
    return data


def build_report(checkpoint, assignments):
    """Summary plus every diagnostic table for a checkpoint and its assignment log"""
    if assignments is None:
        raise ReportError('Report needs the assignment log of the run')
    try:
        records = [a if isinstance(a, AssignmentRecord) else AssignmentRecord.from_dict(a)
                   for a in assignments]
    except (KeyError, TypeError, ValueError) as e:
        raise ReportError(f'Malformed assignment log entry: {e}') from e
    store = checkpoint.store
    clusters, rounds = relative_distance_report(records)
    return ReportBundle(
        summary=summarize(store, records, checkpoint.history),
        clusters=clusters,
        rounds=rounds,
        sigma_histogram=sigma_histogram(store),
        mu_sigma=mu_sigma_scatter(store),
    )


def write_report(bundle, out_dir, checkpoint=None, xlsx=False):
    """Write the bundle under `out_dir`; returns {kind: path}"""
    os.makedirs(out_dir, exist_ok=True)
    summary = bundle.summary.to_dict()
    if checkpoint is not None:
        summary['stage'] = checkpoint.stage
        summary['round_t'] = checkpoint.round_t
        summary['codebook'] = checkpoint.codebook.to_dict() if checkpoint.codebook else None
        summary['top1_pretrained_train'] = checkpoint.history.get('top1_pretrained_train')
    paths = {'summary': write_json(summary, os.path.join(out_dir, SUMMARY_FILE))}
    for name, filename in (('clusters', CLUSTERS_FILE), ('rounds', ROUNDS_FILE),
                           ('sigma_histogram', SIGMA_HISTOGRAM_FILE), ('mu_sigma', MU_SIGMA_FILE)):
        path = os.path.join(out_dir, filename)
        bundle.tables()[name].to_csv(path, index=False)
        paths[name] = path
    if xlsx:
        path = os.path.join(out_dir, WORKBOOK_FILE)
        with pd.ExcelWriter(path, engine='xlsxwriter') as writer:
            pd.DataFrame([to_jsonable({k: v for k, v in summary.items()
                                       if not isinstance(v, (list, dict))})]).to_excel(
                writer, sheet_name='summary', index=False)
            for name, table in bundle.tables().items():
                table.to_excel(writer, sheet_name=name, index=False)
        paths['workbook'] = path
    logger.info(f'Report written to {out_dir} ({len(paths)} files)')
    return paths


def write_assignment_log(assignments, path):
    return write_json({'assignments': [a.to_dict() if isinstance(a, AssignmentRecord) else a
                                       for a in assignments]}, path)
