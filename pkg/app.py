"""
PWFN - command-line entry point.

    python app.py pretrain --out runs/blobs
    python app.py compress --checkpoint runs/blobs/pretrained.pwfn --out runs/blobs
    python app.py evaluate --checkpoint runs/blobs/compressed.pwfn --mode ensemble
    python app.py report --checkpoint runs/blobs/compressed.pwfn --xlsx

Exit codes: 0 success, 2 configuration/checkpoint/report errors,
3 numerical aborts, 1 anything unexpected.
"""

import functools
import logging
import os
import sys
import traceback
from logging.handlers import RotatingFileHandler

import click
from dotenv import load_dotenv

from pwfn import __version__
from pwfn.checkpoint import load_checkpoint, save_checkpoint
from pwfn.config import RunConfig, load_run_config
from pwfn.datasets import load_dataset
from pwfn.errors import CheckpointError, ConfigError, NumericalError, PwfnError, ReportError, ShapeError
from pwfn.pipeline import EVALUATION_MODES, compress, evaluate, pretrain, report
from pwfn.reports import read_assignment_log, write_assignment_log, write_json

load_dotenv()

LOG_FORMAT = '%(asctime)s %(levelname)s: %(message)s [in %(pathname)s:%(lineno)d]'
LOG_FILE = 'pwfn.log'
PRETRAINED_FILE = 'pretrained.pwfn'
COMPRESSED_FILE = 'compressed.pwfn'
EVALUATION_FILE = 'evaluation.json'

logger = logging.getLogger('pwfn.app')


def configure_logging(log_dir=None, level=None):
    """Rotating file log plus console output on the package logger"""
    log_dir = log_dir or os.environ.get('PWFN_LOG_DIR', 'logs')
    level_name = (level or os.environ.get('PWFN_LOG_LEVEL', 'INFO')).upper()
    level = getattr(logging, level_name, logging.INFO)
    if not os.path.exists(log_dir):
        os.makedirs(log_dir)

    package_logger = logging.getLogger('pwfn')
    for handler in list(package_logger.handlers):
        package_logger.removeHandler(handler)
        handler.close()

    file_handler = RotatingFileHandler(os.path.join(log_dir, LOG_FILE), maxBytes=1024 * 1024, backupCount=10)
    file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
    file_handler.setLevel(level)
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(logging.Formatter('%(levelname)s: %(message)s'))
    console_handler.setLevel(level)

    package_logger.addHandler(file_handler)
    package_logger.addHandler(console_handler)
    package_logger.setLevel(level)
    package_logger.propagate = False
    logger.info(f'PWFN {__version__} startup')
    return package_logger


def log_error(error_type, message, stack_trace=None):
    """Log an error and its traceback to the run log"""
    try:
        logger.error(f'{error_type}: {message}')
        if stack_trace:
            logger.error(f'Stack trace: {stack_trace}')
    except Exception as e:
        logging.getLogger(__name__).error(f'Error logging failed: {str(e)}')


def exit_code_for(error):
    if isinstance(error, NumericalError):
        return 3
    if isinstance(error, (ConfigError, CheckpointError, ReportError, ShapeError)):
        return 2
    return 1


def handle_errors(command):
    """Turn package errors into a one-line diagnostic and the documented exit code"""
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except PwfnError as e:
            log_error(type(e).__name__, str(e), traceback.format_exc())
            click.echo(f'Error: {e}', err=True)
            sys.exit(exit_code_for(e))
        except Exception as e:
            log_error('UnexpectedError', str(e), traceback.format_exc())
            click.echo(f'Unexpected error: {e}', err=True)
            sys.exit(1)
    return wrapper


def config_options(command):
    command = click.option('--config', 'config_path', type=click.Path(dir_okay=False),
                           help='JSON run configuration')(command)
    command = click.option('--seed', type=int, default=None, help='Seed for every random stream')(command)
    command = click.option('--set', 'overrides', multiple=True, metavar='KEY=VALUE',
                           help='Override a config field; dotted keys reach nested fields')(command)
    command = click.option('--out', 'out_dir', type=click.Path(file_okay=False), default='runs',
                           show_default=True, help='Output directory')(command)
    return command


def resolve_config(checkpoint, config_path, seed, overrides):
    """Explicit options win; otherwise the config the checkpoint was made with"""
    if config_path or seed is not None or overrides:
        return load_run_config(config_path, seed, overrides)
    if checkpoint is not None and checkpoint.config:
        return RunConfig.from_dict(checkpoint.config)
    return load_run_config()


@click.group()
@click.version_option(__version__, prog_name='pwfn')
def cli():
    """Probabilistic weight fixing: pretrain, compress, evaluate and report"""
    configure_logging()


@cli.command('pretrain')
@config_options
@handle_errors
def pretrain_command(config_path, seed, overrides, out_dir):
    """Train the point network and save it as a checkpoint"""
    config = load_run_config(config_path, seed, overrides)
    checkpoint = pretrain(config)
    path = save_checkpoint(checkpoint, os.path.join(out_dir, PRETRAINED_FILE))
    write_json({'checkpoint': path, **checkpoint.history}, os.path.join(out_dir, 'pretrain.json'))
    click.echo(f'Pretrained checkpoint: {path} '
               f'(test top-1 {checkpoint.history["top1_pretrained"]:.4f})')


@cli.command('compress')
@click.option('--checkpoint', 'checkpoint_path', required=True, type=click.Path(dir_okay=False),
              help='Pretrained checkpoint, or a mid-pipeline one to resume')
@click.option('--stop-after-round', type=int, default=None,
              help='Save a resumable checkpoint after this round and stop')
@click.option('--save-rounds', is_flag=True, help='Also save a checkpoint after every round')
@config_options
@handle_errors
def compress_command(checkpoint_path, stop_after_round, save_rounds, config_path, seed, overrides, out_dir):
    """Run the fixing rounds and write the compressed checkpoint and report"""
    checkpoint = load_checkpoint(checkpoint_path)
    if checkpoint.stage == 'compressing' and (config_path or seed is not None or overrides):
        logger.warning('Resuming with the configuration stored in the checkpoint; '
                       '--config, --seed and --set are ignored')
    config = resolve_config(checkpoint, config_path, seed, overrides)

    def on_round(snapshot):
        if save_rounds:
            save_checkpoint(snapshot, os.path.join(out_dir, 'rounds', f'round_{snapshot.round_t}.pwfn'))

    result, summary = compress(checkpoint, config, stop_after_round=stop_after_round, on_round=on_round)
    if summary is None:
        path = save_checkpoint(result, os.path.join(out_dir, f'compressing_round_{result.round_t}.pwfn'))
        click.echo(f'Stopped after round {result.round_t}: {path}')
        return
    path = save_checkpoint(result, os.path.join(out_dir, COMPRESSED_FILE))
    write_assignment_log(result.assignments, os.path.join(out_dir, 'assignments.json'))
    report(result, result.assignments, out_dir)
    click.echo(f'Compressed checkpoint: {path} (entropy {summary.entropy_bits:.4f} bits, '
               f'{summary.unique_params} unique, top-1 {summary.top1_point:.4f})')


@cli.command('evaluate')
@click.option('--checkpoint', 'checkpoint_path', required=True, type=click.Path(dir_okay=False))
@click.option('--mode', type=click.Choice(EVALUATION_MODES), default='point', show_default=True)
@click.option('--samples', type=int, default=None, help='Ensemble size (config ensemble_samples by default)')
@config_options
@handle_errors
def evaluate_command(checkpoint_path, mode, samples, config_path, seed, overrides, out_dir):
    """Test accuracy of a checkpoint"""
    checkpoint = load_checkpoint(checkpoint_path)
    config = resolve_config(checkpoint, config_path, seed, overrides)
    _, test = load_dataset(config.dataset, checkpoint.spec)
    row = evaluate(checkpoint, test, mode=mode,
                   samples=samples if samples is not None else config.ensemble_samples,
                   seed=config.seed, deterministic_fixed=config.deterministic_fixed)
    row['checkpoint'] = checkpoint_path
    write_json(row, os.path.join(out_dir, EVALUATION_FILE))
    click.echo(f'{mode} top-1: {row["top1"]:.4f}')


@cli.command('report')
@click.option('--checkpoint', 'checkpoint_path', required=True, type=click.Path(dir_okay=False))
@click.option('--log', 'log_path', type=click.Path(dir_okay=False), default=None,
              help='Assignment log (defaults to the one stored in the checkpoint)')
@click.option('--xlsx', is_flag=True, help='Also write every table to report.xlsx')
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), default='runs', show_default=True)
@handle_errors
def report_command(checkpoint_path, log_path, xlsx, out_dir):
    """Write the summary JSON and diagnostic CSV tables"""
    checkpoint = load_checkpoint(checkpoint_path)
    assignments = read_assignment_log(log_path) if log_path else checkpoint.assignments
    paths = report(checkpoint, assignments, out_dir, xlsx=xlsx)
    click.echo(f'Report written: {paths["summary"]}')


if __name__ == '__main__':
    cli()
