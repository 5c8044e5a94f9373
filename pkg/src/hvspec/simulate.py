r"""
Monte Carlo time-stamped detections from a hidden-variable model.

Each emitted pair :math:`n` carries one channel :math:`i` drawn from
:math:`\rho`; the joint outcome is drawn from the model response at
:math:`(i, \mathrm{pair})`, and each detecting station records an event with
channel :math:`i` at :math:`nT` plus uniform jitter in :math:`[-j, +j]`.

Random numbers come from per-batch substreams
``SeedSequence(seed, spawn_key=(run_index, batch))`` consumed in the order
channel, outcome, jitter A, jitter B, so the output does not depend on how
runs and batches are distributed over workers.
"""

import json
import logging
import math
import multiprocessing as mp
import os
from collections import namedtuple
from dataclasses import dataclass

import numpy as np
import pandas as pd
# noinspection PyPackageRequirements
import progressbar

from .model import A_ONLY
from .model import BOTH
from .model import B_ONLY
from .model import PAIRS
from .model import SettingPair
from .model import SettingsQuad
from .utils import atomic_write_frame
from .utils import atomic_write_json
from .utils import reject_unknown

logger = logging.getLogger(__name__)

DEFAULT_BATCH_SIZE = 1 << 17

DetectionEvent = namedtuple('DetectionEvent', ('station', 'channel', 'timestamp'))


class StreamOrderError(ValueError):
    """Event timestamps are not in non-decreasing order."""


class EventStream(object):
    """
    Time-ordered detections of one station.

    Parameters
    ----------
    station : str
        ``'A'`` or ``'B'``.
    timestamps : array of float
        Seconds, non-decreasing.
    channels : array of int
    """

    def __init__(self, station, timestamps=(), channels=()):
        if station not in ('A', 'B'):
            raise ValueError("station must be 'A' or 'B', got {!r}".format(station))
        timestamps = np.asarray(timestamps, dtype=np.float64)
        channels = np.asarray(channels, dtype=np.int64)
        if timestamps.ndim != 1 or timestamps.shape != channels.shape:
            raise ValueError('timestamps and channels must be 1-d arrays of equal length')
        if timestamps.size and not np.all(np.diff(timestamps) >= 0):
            raise StreamOrderError('station {} timestamps are not sorted'.format(station))
        if np.any(channels < 0):
            raise ValueError('channel indices must be non-negative')
        self.station = station
        self.timestamps = timestamps
        self.channels = channels

    def __len__(self):
        return self.timestamps.size

    def __getitem__(self, index):
        return DetectionEvent(self.station, int(self.channels[index]), float(self.timestamps[index]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @classmethod
    def from_events(cls, station, events):
        """Build a stream from ``(timestamp, channel)`` pairs, already ordered."""
        events = list(events)
        return cls(station, [e[0] for e in events], [e[1] for e in events])

    def save(self, file_name):
        write_stream(self, file_name)

    @classmethod
    def from_file(cls, file_name, station):
        return read_stream(file_name, station)


def write_stream(stream, file_name):
    """CSV with header ``timestamp,channel``, one row per event."""
    frame = pd.DataFrame({'timestamp': stream.timestamps, 'channel': stream.channels})
    atomic_write_frame(file_name, frame)


def read_stream(file_name, station):
    frame = pd.read_csv(file_name, dtype={'timestamp': np.float64, 'channel': np.int64},
                        float_precision='round_trip')
    if list(frame.columns) != ['timestamp', 'channel']:
        raise ValueError('{}: expected header timestamp,channel, got {}'.format(file_name, ','.join(frame.columns)))
    return EventStream(station, frame['timestamp'].to_numpy(), frame['channel'].to_numpy())


@dataclass(frozen=True)
class TimingConfig:
    """
    Pair emission and coincidence timing.

    Parameters
    ----------
    period : float
        Pair period :math:`T` [s].
    jitter : float
        Half width :math:`j` of the uniform timing jitter [s].
    window : float
        Coincidence window :math:`w` [s].

    With :math:`2j < w < T - 2j` true pairs always coincide and distinct
    pairs never do.

    >>> TimingConfig.default(1e-6).window
    2.5e-07
    """
    period: float = 1e-6
    jitter: float = 1e-8
    window: float = 2.5e-7

    def __post_init__(self):
        for name in ('period', 'jitter', 'window'):
            if not math.isfinite(getattr(self, name)):
                raise ValueError('{} must be finite'.format(name))
        if not self.period > 0:
            raise ValueError('period must be positive, got {!r}'.format(self.period))
        if not self.jitter >= 0:
            raise ValueError('jitter must be non-negative, got {!r}'.format(self.jitter))
        if not 2 * self.jitter < self.window < self.period - 2 * self.jitter:
            raise ValueError('window must satisfy 2*jitter < window < period - 2*jitter '
                             '(period={}, jitter={}, window={})'.format(self.period, self.jitter, self.window))

    @classmethod
    def default(cls, period=1e-6):
        return cls(period=period, jitter=period / 100, window=period / 4)

    def to_dict(self):
        return {'T': self.period, 'jitter': self.jitter, 'window': self.window}

    @classmethod
    def from_dict(cls, data):
        reject_unknown(data, ('T', 'jitter', 'window'), 'timing')
        return cls(period=float(data['T']), jitter=float(data['jitter']), window=float(data['window']))


@dataclass
class RunRecord:
    """The two event streams of one run at fixed settings."""
    pair: SettingPair
    n_pairs: int
    stream_a: EventStream
    stream_b: EventStream
    seed: int
    run_index: int
    timing: TimingConfig = None
    quad: SettingsQuad = None

    def metadata(self):
        data = {'pair': self.pair.name, 'N': self.n_pairs, 'seed': self.seed, 'run_index': self.run_index}
        if self.timing is not None:
            data['timing'] = self.timing.to_dict()
        if self.quad is not None:
            data['quad'] = self.quad.to_dict()
        return data

    def save(self, directory):
        """Write ``stream_A.csv``, ``stream_B.csv`` and ``metadata.json`` into ``directory``."""
        os.makedirs(directory, exist_ok=True)
        write_stream(self.stream_a, os.path.join(directory, 'stream_A.csv'))
        write_stream(self.stream_b, os.path.join(directory, 'stream_B.csv'))
        atomic_write_json(os.path.join(directory, 'metadata.json'), self.metadata())

    @classmethod
    def from_directory(cls, directory):
        with open(os.path.join(directory, 'metadata.json')) as fh:
            meta = json.load(fh)
        reject_unknown(meta, ('pair', 'N', 'seed', 'run_index', 'timing', 'quad'), 'run metadata')
        return cls(pair=SettingPair[meta['pair']],
                   n_pairs=int(meta['N']),
                   stream_a=read_stream(os.path.join(directory, 'stream_A.csv'), 'A'),
                   stream_b=read_stream(os.path.join(directory, 'stream_B.csv'), 'B'),
                   seed=int(meta['seed']),
                   run_index=int(meta['run_index']),
                   timing=TimingConfig.from_dict(meta['timing']) if 'timing' in meta else None,
                   quad=SettingsQuad.from_dict(meta['quad']) if 'quad' in meta else None)


def batch_generator(seed, run_index, batch):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(run_index, batch)))


def _simulate_batch(weights, cumulative, timing, seed, run_index, batch, start, stop):
    """Events of pairs ``start <= n < stop``; returns (t_a, ch_a, t_b, ch_b)."""
    size = stop - start
    rng = batch_generator(seed, run_index, batch)
    channels = rng.choice(weights.size, size=size, p=weights)
    u = rng.random(size)
    jitter_a = rng.uniform(-timing.jitter, timing.jitter, size)
    jitter_b = rng.uniform(-timing.jitter, timing.jitter, size)

    outcome = (u[:, None] >= cumulative[channels]).sum(axis=1)
    emitted = np.arange(start, stop, dtype=np.float64) * timing.period
    det_a = (outcome == BOTH) | (outcome == A_ONLY)
    det_b = (outcome == BOTH) | (outcome == B_ONLY)
    return (emitted[det_a] + jitter_a[det_a], channels[det_a],
            emitted[det_b] + jitter_b[det_b], channels[det_b])


def _sorted_stream(station, timestamps, channels):
    order = np.argsort(timestamps, kind='stable')
    return EventStream(station, timestamps[order], channels[order])


def run_experiment(model, pair, quad, n_pairs, timing, seed, run_index, batch_size=DEFAULT_BATCH_SIZE):
    """
    Simulate one run of ``n_pairs`` emitted pairs at fixed settings.

    Parameters
    ----------
    model : HiddenVariableModel
    pair : SettingPair
    quad : SettingsQuad
        Recorded with the run; the model response already encodes the settings.
    n_pairs : int
        Emitted pairs :math:`N \\geq 0`.
    timing : TimingConfig
    seed : int
        Master seed.
    run_index : int
    batch_size : int
        Pairs per RNG substream.

    Returns
    -------
    RunRecord
    """
    if int(n_pairs) != n_pairs or n_pairs < 0:
        raise ValueError('n_pairs must be a non-negative integer, got {!r}'.format(n_pairs))
    if not isinstance(timing, TimingConfig):
        raise ValueError('timing must be a TimingConfig')
    n_pairs = int(n_pairs)
    if isinstance(pair, str):
        pair = SettingPair[pair]

    weights = np.asarray(model.weights, dtype=np.float64)
    cumulative = model.cumulative_table(pair)
    parts = [_simulate_batch(weights, cumulative, timing, seed, run_index, batch, start,
                             min(start + batch_size, n_pairs))
             for batch, start in enumerate(range(0, n_pairs, batch_size))]
    if parts:
        t_a, ch_a, t_b, ch_b = (np.concatenate(column) for column in zip(*parts))
    else:
        t_a, t_b = np.empty(0), np.empty(0)
        ch_a, ch_b = np.empty(0, np.int64), np.empty(0, np.int64)
    logger.debug('run %d (%s): %d pairs, %d A events, %d B events',
                 run_index, pair.name, n_pairs, t_a.size, t_b.size)
    return RunRecord(pair=pair, n_pairs=n_pairs,
                     stream_a=_sorted_stream('A', t_a, ch_a),
                     stream_b=_sorted_stream('B', t_b, ch_b),
                     seed=int(seed), run_index=int(run_index), timing=timing, quad=quad)


def _run_and_count(model, pair, quad, n_pairs, timing, seed, run_index, batch_size):
    from .coincidence import aggregate
    record = run_experiment(model, pair, quad, n_pairs, timing, seed, run_index, batch_size)
    return record, aggregate(record, timing.window, model.channel_count)


class Experiment(object):
    r"""
    A four-run CH experiment with spectrographs in both stations.

    Parameters
    ----------
    model : HiddenVariableModel
    quad : SettingsQuad
    timing : TimingConfig, optional
        Default: ``TimingConfig.default()``
    seed : int, optional
        Master seed. Drawn at random when omitted.
    batch_size : int, optional
        Pairs per RNG substream.

    Example
    -------
    >>> from hvspec.model import SpectrographConfig, make_factorizable_model
    >>> import numpy as np
    >>> model = make_factorizable_model(SpectrographConfig(1), [1.0], np.ones((2, 1)), np.ones((2, 1)))
    >>> table = Experiment(model, SettingsQuad(0, 0, 0, 0), seed=1)(100)
    >>> int(table.runs[SettingPair.AB].coincidences.sum())
    100
    """

    def __init__(self, model, quad, timing=None, seed=None, batch_size=DEFAULT_BATCH_SIZE):
        self.model = model
        self.quad = quad
        self.timing = timing or TimingConfig.default()
        if seed is None:
            seed = int(np.random.default_rng().integers(int(1e8)))
        self.seed = int(seed)
        self.batch_size = int(batch_size)
        self.runs = {}
        self.counts = {}
        self.table = None

    def __call__(self, n_pairs, threads=1, progress_bar=False):
        """
        Execute the four runs and return the CountTable.

        Parameters
        ----------
        n_pairs : int
            Emitted pairs per run, the same for every setting pair.
        threads : int
            Worker processes. Default: 1 (no parallelization)
        progress_bar : bool
            Default: ``False``
        """
        from .analyze import CountTable

        args = [(self.model, pair, self.quad, n_pairs, self.timing, self.seed, pair.index, self.batch_size)
                for pair in PAIRS]
        if threads > 1:
            with mp.Pool(min(threads, len(args))) as pool:
                results = pool.starmap(_run_and_count, args)
        else:
            indices = range(len(args))
            if progress_bar:
                indices = progressbar.ProgressBar()(indices)
            results = [_run_and_count(*args[i]) for i in indices]

        for pair, (record, counts) in zip(PAIRS, results):
            self.runs[pair] = record
            self.counts[pair] = counts
        self.table = CountTable(self.model.channel_count, int(n_pairs), self.counts)
        logger.info('experiment seed=%d N=%d done', self.seed, n_pairs)
        return self.table

    def save(self, directory):
        """
        Write the four run directories ``run_<pair>``, ``counts.json`` and ``spectrum.csv``.
        """
        if self.table is None:
            raise RuntimeError('experiment has not been run')
        os.makedirs(directory, exist_ok=True)
        for pair, record in self.runs.items():
            record.save(os.path.join(directory, 'run_' + pair.name))
        self.table.save(os.path.join(directory, 'counts.json'))
        self.table.save_spectrum(os.path.join(directory, 'spectrum.csv'))


def run_full(model, quad, n_pairs, timing, seed, threads=1, batch_size=DEFAULT_BATCH_SIZE):
    """
    Run all four setting pairs (run indices 0..3 from one master seed) and
    return the aggregated CountTable.
    """
    return Experiment(model, quad, timing, seed, batch_size)(n_pairs, threads=threads)
