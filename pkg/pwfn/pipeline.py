"""
End-to-end runs: pretrain a point network, then alternate training of the
Gaussian weights with fix rounds until every weight sits on a codebook center.

Every round ends with mu and sigma rounded to float32 and the optimizer is
rebuilt at the start of each round, so a run resumed from a mid-pipeline
checkpoint finishes bit-identical to an uninterrupted one.
"""

import copy
import logging

import numpy as np

from pwfn.bayes_weights import (FREE, RegConfig, WeightStore, assemble_gradients, init_prior_sigma,
                                init_uniform_sigma, new_optimizer, sample_weights, sgd_step,
                                training_loss)
from pwfn.checkpoint import Checkpoint
from pwfn.clustering import AssignmentRecord, Partition, achieved_codebook, fix_round
from pwfn.codebook import is_representable
from pwfn.config import RunConfig
from pwfn.datasets import load_dataset
from pwfn.errors import ClusteringError, ConfigError, NumericalError, ReportError
from pwfn.metrics import evaluate_ensemble, evaluate_point, summarize, unique_count, weight_entropy
from pwfn.numerics import (STREAM_COMPRESS, STREAM_EVALUATE, STREAM_PRETRAIN, Rng, SgdState, flatten,
                           init_point_params, mlp_backward, mlp_forward, sgd_momentum_update,
                           softmax_cross_entropy)
from pwfn.reports import build_report, write_report

logger = logging.getLogger(__name__)

EVALUATION_MODES = ('point', 'ensemble')


def _check_loss(loss, where):
    if not np.isfinite(loss):
        raise NumericalError(f'Non-finite loss during {where}')
    return loss


def train_point_epoch(spec, params, data, rng, optimizer, batch_size):
    """One shuffled pass of plain cross-entropy training; returns the mean loss"""
    total = 0.0
    for x, y in data.batches(batch_size, rng.permutation(len(data))):
        logits, cache = mlp_forward(spec, params, x)
        loss, grad_logits = softmax_cross_entropy(logits, y)
        total += _check_loss(loss, 'pretraining') * len(y)
        grads = mlp_backward(spec, params, cache, grad_logits)
        sgd_momentum_update(params, grads, optimizer)
    return total / len(data)


def train_bayes_epoch(store, data, rng, optimizer, reg_cfg, batch_size, deterministic_fixed=False):
    """One shuffled pass over the regularised loss, one noise draw per batch"""
    spec = store.spec
    total = 0.0
    for x, y in data.batches(batch_size, rng.permutation(len(data))):
        params, eps = sample_weights(store, rng, deterministic_fixed)
        logits, cache = mlp_forward(spec, params, x)
        data_loss, grad_logits = softmax_cross_entropy(logits, y)
        loss = _check_loss(training_loss(data_loss, store, reg_cfg), 'Bayesian training')
        total += loss * len(y)
        grad_w = flatten(mlp_backward(spec, params, cache, grad_logits))
        grad_mu, grad_sigma = assemble_gradients(grad_w, eps, store, reg_cfg)
        sgd_step(store, grad_mu, grad_sigma, optimizer)
    if not (np.all(np.isfinite(store.mu)) and np.all(np.isfinite(store.sigma))):
        raise NumericalError('Weight distributions became non-finite')
    return total / len(data)


def pretrain(config, dataset=None):
    """Train the point network and return it as a checkpoint (sigma zero, all free)"""
    config.validate()
    spec = config.network
    train, test = dataset if dataset is not None else load_dataset(config.dataset, spec)
    rng = Rng(config.seed, STREAM_PRETRAIN)
    params = init_point_params(spec, rng)
    optimizer = SgdState.for_params(params, config.pretrain_learning_rate, config.momentum)
    logger.info(f'Pretraining {list(spec.layer_dims)} for {config.pretrain_epochs} epochs '
                f'on {len(train)} examples')
    for epoch in range(config.pretrain_epochs):
        loss = train_point_epoch(spec, params, train, rng, optimizer, config.batch_size)
        logger.info(f'Pretrain epoch {epoch + 1}/{config.pretrain_epochs}: loss {loss:.6f}')

    store = WeightStore.from_point_params(spec, params).round_to_float32()
    history = {
        'pretrain_epochs': config.pretrain_epochs,
        'top1_pretrained_train': evaluate_point(store, train),
        'top1_pretrained': evaluate_point(store, test),
    }
    logger.info(f'Pretrained accuracy: train {history["top1_pretrained_train"]:.4f}, '
                f'test {history["top1_pretrained"]:.4f}')
    return Checkpoint(store=store, stage='pretrained', round_t=0, config=config.to_dict(),
                      rng_state=rng.state, history=history)


def _start_compression(checkpoint, config, test):
    store = checkpoint.store.copy()
    store.sigma[:] = 0.0
    store.fixed[:] = False
    store.cluster_index[:] = FREE
    if config.prior_mode == 'powers_of_two_prior':
        init_prior_sigma(store, as_variance=config.prior_as_variance)
    else:
        init_uniform_sigma(store, config.sigma_cutoff_S / 2.0)
    store.round_to_float32()
    top1_pretrained = checkpoint.history.get('top1_pretrained')
    history = {
        'top1_pretrained': top1_pretrained if top1_pretrained is not None else evaluate_point(store, test),
        'prior_mode': config.prior_mode,
        'epochs_trained': 0,
        'entropy_by_round': [],
        'unique_by_round': [],
    }
    return store, Rng(config.seed, STREAM_COMPRESS), [], history


def _resume_compression(checkpoint, config):
    store = checkpoint.store.copy()
    rng = Rng(config.seed, STREAM_COMPRESS)
    rng.state = checkpoint.rng_state
    records = [AssignmentRecord.from_dict(a) for a in checkpoint.assignments]
    logger.info(f'Resuming compression after round {checkpoint.round_t}')
    return store, rng, records, copy.deepcopy(checkpoint.history)


def compress(checkpoint, config=None, dataset=None, stop_after_round=None, on_round=None):
    """Run the fixing rounds; returns (checkpoint, CompressionReport)

    A 'compressing' checkpoint resumes with the config it was written with.
    When `stop_after_round` is reached before the last round, the
    mid-pipeline checkpoint is returned with a None report.
    """
    if checkpoint.stage == 'compressed':
        raise ConfigError('Checkpoint is already fully compressed')
    resuming = checkpoint.stage == 'compressing'
    if resuming or config is None:
        config = RunConfig.from_dict(checkpoint.config) if checkpoint.config else RunConfig()
    config.validate()
    if checkpoint.spec != config.network:
        raise ConfigError(f'Checkpoint network {list(checkpoint.spec.layer_dims)} does not match '
                          f'config network {list(config.network.layer_dims)}')
    train, test = dataset if dataset is not None else load_dataset(config.dataset, config.network)

    if resuming:
        store, rng, records, history = _resume_compression(checkpoint, config)
        first_round = checkpoint.round_t + 1
    else:
        store, rng, records, history = _start_compression(checkpoint, config, test)
        first_round = 1

    reg_cfg = RegConfig(config.alpha, config.sigma_cutoff_S)
    schedule = config.fixing_schedule()
    base = config.base_set()
    partition = Partition.from_store(store, first_round - 1)
    for round_t in range(first_round, schedule.rounds_T + 1):
        optimizer = new_optimizer(store, config.learning_rate, config.momentum)
        for epoch in range(schedule.epochs_per_round):
            loss = train_bayes_epoch(store, train, rng, optimizer, reg_cfg, config.batch_size,
                                     config.deterministic_fixed)
            history['epochs_trained'] += 1
            free = ~store.fixed
            logger.info(f'Round {round_t} epoch {epoch + 1}/{schedule.epochs_per_round}: loss {loss:.6f}, '
                        f'median free sigma {np.median(store.sigma[free]) if free.any() else 0:.3g}')
        partition, state = fix_round(store, partition, schedule, base, config.delta0, config.max_centers)
        store.round_to_float32()
        records.extend(state.assignments_this_round)
        history['entropy_by_round'].append(weight_entropy(store))
        history['unique_by_round'].append(unique_count(store))
        logger.info(f'Round {round_t}: entropy {history["entropy_by_round"][-1]:.4f} bits, '
                    f'{history["unique_by_round"][-1]} unique values')

        if round_t < schedule.rounds_T:
            snapshot = Checkpoint(
                store=store.copy(), stage='compressing', round_t=round_t, config=config.to_dict(),
                rng_state=rng.state, assignments=[r.to_dict() for r in records],
                history=copy.deepcopy(history),
            )
            if on_round is not None:
                on_round(snapshot)
            if stop_after_round is not None and round_t >= stop_after_round:
                logger.info(f'Stopping after round {round_t} as requested')
                return snapshot, None

    if not store.fixed.all():
        raise ClusteringError(f'{int((~store.fixed).sum())} weights still free after the last round')
    final_omega = max((r.omega for r in records), default=1)
    codebook = achieved_codebook(base, final_omega, config.max_centers)
    for value in np.unique(store.mu):
        if not is_representable(float(value), base, final_omega)[0]:
            raise ClusteringError(f'Fixed value {value!r} is not in the order-{final_omega} codebook')

    history['top1_point'] = evaluate_point(store, test)
    history['top1_ensemble'] = evaluate_ensemble(store, test, Rng(config.seed, STREAM_EVALUATE),
                                                 config.ensemble_samples, config.deterministic_fixed)
    final = Checkpoint(
        store=store, stage='compressed', round_t=schedule.rounds_T, config=config.to_dict(),
        codebook=codebook, rng_state=rng.state, assignments=[r.to_dict() for r in records],
        history=history,
    )
    report = summarize(store, records, history)
    logger.info(f'Compression done: entropy {report.entropy_bits:.4f} bits, {report.unique_params} unique, '
                f'top-1 {report.top1_point:.4f} (ensemble {report.top1_ensemble:.4f}, '
                f'pretrained {report.top1_pretrained:.4f})')
    return final, report


def evaluate(checkpoint, dataset, mode='point', samples=20, seed=0, deterministic_fixed=False):
    """Accuracy of a checkpoint on `dataset` as a report row"""
    if mode not in EVALUATION_MODES:
        raise ConfigError(f'mode must be one of {EVALUATION_MODES}, got {mode!r}')
    if dataset.n_features != checkpoint.spec.layer_dims[0]:
        raise ConfigError(f'Dataset has {dataset.n_features} features but the checkpoint '
                          f'expects {checkpoint.spec.layer_dims[0]} inputs')
    if mode == 'point':
        top1 = evaluate_point(checkpoint.store, dataset)
    else:
        top1 = evaluate_ensemble(checkpoint.store, dataset, Rng(seed, STREAM_EVALUATE), samples,
                                 deterministic_fixed)
    row = {
        'mode': mode,
        'samples': samples if mode == 'ensemble' else 1,
        'seed': seed,
        'top1': top1,
        'n_examples': len(dataset),
        'stage': checkpoint.stage,
        'round_t': checkpoint.round_t,
    }
    logger.info(f'Evaluation ({mode}): top-1 {top1:.4f} on {len(dataset)} examples')
    return row


def report(checkpoint, assignments, out_dir, xlsx=False):
    """Write the report files for a checkpoint and its assignment log; returns {kind: path}"""
    if assignments is None:
        raise ReportError('Report needs the assignment log of the run')
    if checkpoint.stage != 'pretrained' and not assignments:
        raise ReportError(f'A {checkpoint.stage} checkpoint needs a non-empty assignment log')
    bundle = build_report(checkpoint, assignments)
    return write_report(bundle, out_dir, checkpoint=checkpoint, xlsx=xlsx)
