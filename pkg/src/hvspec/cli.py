"""
Module that contains the command line app.

Why does this file exist, and why not put this in __main__?

  You might be tempted to import things from __main__ later, but that will cause
  problems: the code will get executed twice:

  - When you run `python -mhvspec` python will execute
    ``__main__.py`` as a script. That means there won't be any
    ``hvspec.__main__`` in ``sys.modules``.
  - When you import __main__ it will get executed again (as a module) because
    there's no ``hvspec.__main__`` in ``sys.modules``.

Exit codes: 0 success (all verdicts hold), 1 a verdict failed, 2 usage or
configuration error, 3 I/O error.
"""

import json
import logging
import os
from dataclasses import dataclass

import click

from .analyze import CountTable
from .analyze import audit_features
from .analyze import max_j_under_realism
from .analyze import significance
from .analyze import spectrograph_inequality
from .analyze import uniform_singles
from .coincidence import count_channels
from .model import HiddenVariableModel
from .model import SettingPair
from .model import SettingsQuad
from .qm_oracle import EberhardtState
from .qm_oracle import find_violation
from .qm_oracle import j_value
from .simulate import Experiment
from .simulate import TimingConfig
from .simulate import read_stream
from .utils import dumps
from .utils import reject_unknown

logger = logging.getLogger(__name__)

EXIT_VERDICT = 1
EXIT_USAGE = 2
EXIT_IO = 3


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Everything ``simulate`` needs: model, settings, pairs per run, timing,
    seed and output directory.
    """
    model: HiddenVariableModel
    quad: SettingsQuad
    n_pairs: int
    timing: TimingConfig
    seed: int
    output: str = 'hvspec-output'

    FIELDS = ('model', 'quad', 'N', 'timing', 'seed', 'output')

    @classmethod
    def from_dict(cls, data, base_dir='.'):
        reject_unknown(data, cls.FIELDS, 'experiment config')
        missing = [key for key in cls.FIELDS[:-1] if key not in data]
        if missing:
            raise ValueError('experiment config is missing {}'.format(', '.join(missing)))
        quad = SettingsQuad.from_dict(data['quad'])
        model = data['model']
        if isinstance(model, str):
            model = HiddenVariableModel.from_file(os.path.join(base_dir, model), quad=quad)
        else:
            model = HiddenVariableModel.from_dict(model, quad=quad)
        n_pairs = data['N']
        if not isinstance(n_pairs, int) or n_pairs < 0:
            raise ValueError('N must be a non-negative integer, got {!r}'.format(n_pairs))
        seed = data['seed']
        if not isinstance(seed, int) or seed < 0:
            raise ValueError('seed must be a non-negative integer, got {!r}'.format(seed))
        output = data.get('output', 'hvspec-output')
        return cls(model=model, quad=quad, n_pairs=n_pairs, timing=TimingConfig.from_dict(data['timing']),
                   seed=seed, output=os.path.join(base_dir, output))

    @classmethod
    def from_file(cls, file_name):
        with open(file_name) as fh:
            data = json.load(fh)
        return cls.from_dict(data, base_dir=os.path.dirname(os.path.abspath(file_name)))


def _fail(message, code):
    click.echo('Error: {}'.format(message), err=True)
    click.get_current_context().exit(code)


def _emit(data):
    click.echo(dumps(data))


def _load_table(path):
    try:
        return CountTable.from_file(path)
    except OSError as err:
        _fail(str(err), EXIT_IO)
    except (ValueError, KeyError, TypeError) as err:
        _fail('{}: {}'.format(path, err), EXIT_USAGE)


@click.group()
@click.option('-v', '--verbose', count=True, help='Repeat for more log output')
def main(verbose):
    """Hidden-variables spectrograph: CH experiments, simulated and audited."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s')


@main.group('qm')
def cmd_qm():
    """Quantum predictions for the Eberhardt state."""


def _state(r2):
    try:
        return EberhardtState.from_r2(r2)
    except ValueError as err:
        raise click.BadParameter(str(err), param_hint='--r2')


@cmd_qm.command('eval')
@click.option('--r2', type=click.FLOAT, required=True, help='Squared amplitude ratio r^2')
@click.option('--quad', required=True, help='alpha,alpha_prime,beta,beta_prime [rad]')
def cmd_qm_eval(r2, quad):
    """Evaluate the CH statistic J at one settings quad."""
    state = _state(r2)
    try:
        quad = SettingsQuad.parse(quad)
    except ValueError as err:
        raise click.BadParameter(str(err), param_hint='--quad')
    _emit(j_value(state, quad).to_dict())


@cmd_qm.command('scan')
@click.option('--r2', type=click.FLOAT, required=True, help='Squared amplitude ratio r^2')
@click.option('--grid', default=16, type=click.IntRange(min=8), help='Grid points per angle', show_default=True)
@click.option('--refine', default=400, type=click.IntRange(min=0), help='Maximum refinement steps',
              show_default=True)
def cmd_qm_scan(r2, grid, refine):
    """Search the settings quad maximizing J."""
    _emit(find_violation(_state(r2), grid=grid, refine_steps=refine).to_dict())


@main.command('simulate')
@click.argument('config_path', type=click.Path(dir_okay=False))
@click.option('--seed', type=click.IntRange(min=0), default=None, help='Override the config seed')
@click.option('--output', '-o', default=None, help='Override the config output directory')
@click.option('--threads', default=1, type=click.IntRange(min=1), help='Number of worker processes',
              show_default=True)
@click.option('--no_pbar', is_flag=True, help='Suppress progress bar')
def cmd_simulate(config_path, seed, output, threads, no_pbar):
    """Simulate the four runs of CONFIG_PATH and write streams, counts and reports."""
    try:
        config = ExperimentConfig.from_file(config_path)
    except OSError as err:
        _fail(str(err), EXIT_IO)
    except (ValueError, KeyError, TypeError) as err:
        _fail('{}: {}'.format(config_path, err), EXIT_USAGE)

    seed = config.seed if seed is None else seed
    output = output or config.output
    experiment = Experiment(config.model, config.quad, config.timing, seed)
    table = experiment(config.n_pairs, threads=threads, progress_bar=not no_pbar)

    summary = {'output': output, 'seed': seed, 'N': config.n_pairs}
    try:
        experiment.save(output)
        if table.n_pairs > 0:
            report = spectrograph_inequality(table)
            report.save(os.path.join(output, 'report.json'))
            summary.update(J=report.j, sigma=report.sigma, verdicts=report.verdicts)
    except OSError as err:
        _fail(str(err), EXIT_IO)
    _emit(summary)


@main.command('match')
@click.argument('stream_a', type=click.Path(dir_okay=False))
@click.argument('stream_b', type=click.Path(dir_okay=False))
@click.option('--window', type=click.FLOAT, required=True, help='Coincidence window [s]')
@click.option('--channels', type=click.IntRange(min=1), default=None,
              help='Channel count K. Default: largest channel seen + 1')
@click.option('--pair', type=click.Choice([p.name for p in SettingPair]), default=None, help='Setting pair label')
def cmd_match(stream_a, stream_b, window, channels, pair):
    """Count per-channel coincidences between two event-stream CSV files."""
    try:
        events_a = read_stream(stream_a, 'A')
        events_b = read_stream(stream_b, 'B')
    except OSError as err:
        _fail(str(err), EXIT_IO)
    except ValueError as err:
        _fail(str(err), EXIT_USAGE)
    if channels is None:
        channels = 1 + max([0] + [int(s.channels.max()) for s in (events_a, events_b) if len(s)])
    pair = SettingPair[pair] if pair else None
    try:
        counts, result = count_channels(events_a, events_b, window, channels, pair)
    except ValueError as err:
        _fail(str(err), EXIT_USAGE)
    data = counts.to_dict()
    data.update(pair=pair.name if pair else None,
                discards=result.n_discards,
                unmatched_A=result.unmatched_a,
                unmatched_B=result.unmatched_b,
                parameters={'window': window, 'channels': channels})
    _emit(data)


@main.command('analyze')
@click.argument('counts_path', type=click.Path(dir_okay=False))
def cmd_analyze(counts_path):
    """J, the channel partition, the correction term and all verdicts."""
    table = _load_table(counts_path)
    audit = audit_features(table)
    if not audit.passed:
        _emit({'audit': audit.to_dict(), 'verdicts': {'audit': False}})
        _fail('count table fails features #1-#3', EXIT_VERDICT)
    try:
        report = spectrograph_inequality(table)
    except ValueError as err:
        _fail(str(err), EXIT_USAGE)
    data = report.to_dict()
    data['significance'] = significance(report)
    _emit(data)
    if not report.passed:
        click.get_current_context().exit(EXIT_VERDICT)


@main.command('audit')
@click.argument('counts_path', type=click.Path(dir_okay=False))
def cmd_audit(counts_path):
    """Check features #1-#3 of a count table."""
    report = audit_features(_load_table(counts_path))
    _emit(report.to_dict())
    if not report.passed:
        click.get_current_context().exit(EXIT_VERDICT)


@main.command('maximize')
@click.option('--singles', required=True, help='uniform:K=<k>,s=<s> or a count table JSON')
@click.option('--n', 'n_pairs', type=click.IntRange(min=1), default=None,
              help='Emitted pairs per run. Default: N of the count table')
@click.option('--method', type=click.Choice(['greedy', 'lp']), default='greedy', show_default=True)
def cmd_maximize(singles, n_pairs, method):
    """Largest J allowed by features #1-#3 alone for the given singles."""
    if singles.startswith('uniform:'):
        try:
            singles_a, singles_b = uniform_singles(singles)
        except ValueError as err:
            raise click.BadParameter(str(err), param_hint='--singles')
        if n_pairs is None:
            raise click.UsageError('--n is required with uniform singles')
    else:
        table = _load_table(singles)
        singles_a = [table[p].singles_a for p in SettingPair]
        singles_b = [table[p].singles_b for p in SettingPair]
        n_pairs = n_pairs or table.n_pairs
    try:
        table, j_max = max_j_under_realism(singles_a, singles_b, n_pairs, method=method)
    except ValueError as err:
        _fail(str(err), EXIT_USAGE)
    report = spectrograph_inequality(table)
    _emit({'J_max': j_max, 'table': table.to_dict(), 'verdicts': report.verdicts})
    if not (report.verdicts['audit'] and report.verdicts['spectrograph_bound']):
        click.get_current_context().exit(EXIT_VERDICT)
