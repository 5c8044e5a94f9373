r"""
Coincidence counting from two time-stamped event streams.

Matching is greedy and earliest-first. The earliest unprocessed event
(ties: station A first, then lower index) takes the earliest unconsumed
event of the other station within the window :math:`|\Delta t| \leq w`;
among equally early candidates one in the same channel is preferred, then
the lower index. A same-channel pair is a coincidence; a cross-channel pair
is noise, and both of its events are discarded. An event with no candidate
stays unmatched.

When events of both stations share a timestamp, the unconsumed events at
that instant are paired as a block: same-channel pairs first (in index
order), then the rest cross-channel. The block consumes as many events as
the one-by-one rule would, so only the coincidence/noise split changes.

Picking the earliest candidate makes the number of consumed pairs a maximum
matching of the window graph, so it never decreases when :math:`w` grows.
"""

import logging
from dataclasses import dataclass

import numpy as np
from numba import jit

from .simulate import EventStream
from .simulate import StreamOrderError

logger = logging.getLogger(__name__)


def _as_counts(values, name):
    values = np.asarray(values)
    if values.dtype.kind not in 'iub' and not np.all(np.equal(np.mod(values, 1), 0)):
        raise ValueError('{} must be integers'.format(name))
    return values.astype(np.int64)


@dataclass(frozen=True)
class MatchResult:
    """
    Attributes
    ----------
    matches : array, shape (M, 3)
        ``(index in A, index in B, channel)`` in processing order.
    discards : array, shape (D, 2)
        Cross-channel pairs ``(index in A, index in B)``.
    unmatched_a, unmatched_b : int
    """
    matches: np.ndarray
    discards: np.ndarray
    unmatched_a: int
    unmatched_b: int

    def __eq__(self, other):
        if not isinstance(other, MatchResult):
            return NotImplemented
        return (np.array_equal(self.matches, other.matches)
                and np.array_equal(self.discards, other.discards)
                and self.unmatched_a == other.unmatched_a
                and self.unmatched_b == other.unmatched_b)

    __hash__ = None

    @property
    def n_matches(self):
        return self.matches.shape[0]

    @property
    def n_discards(self):
        return self.discards.shape[0]

    def coincidences(self, channel_count):
        return np.bincount(self.matches[:, 2], minlength=channel_count).astype(np.int64)

    def to_dict(self):
        return {'matches': self.matches.tolist(),
                'discards': self.discards.tolist(),
                'unmatched_A': self.unmatched_a,
                'unmatched_B': self.unmatched_b}


@dataclass(frozen=True)
class ChannelCounts:
    r"""
    Per-channel counts of one run.

    Attributes
    ----------
    pair : SettingPair
    singles_a, singles_b : array of int
        :math:`N^A_i`, :math:`N^B_i`.
    coincidences : array of int
        :math:`N^{AB}_i`.
    noise : int
        Cross-channel in-window pairs discarded.
    total_a, total_b : int
        Detected events per station, for feature #2.
    """
    pair: object
    singles_a: np.ndarray
    singles_b: np.ndarray
    coincidences: np.ndarray
    noise: int = 0
    total_a: int = None
    total_b: int = None

    def __post_init__(self):
        for name in ('singles_a', 'singles_b', 'coincidences'):
            object.__setattr__(self, name, _as_counts(getattr(self, name), name))
        if not (self.singles_a.ndim == 1 and self.singles_a.shape == self.singles_b.shape
                == self.coincidences.shape):
            raise ValueError('singles and coincidences must be 1-d arrays of equal length')
        object.__setattr__(self, 'noise', int(_as_counts(self.noise, 'noise')))
        for name, singles in (('total_a', self.singles_a), ('total_b', self.singles_b)):
            total = getattr(self, name)
            total = singles.sum() if total is None else _as_counts(total, name)
            object.__setattr__(self, name, int(total))

    @property
    def channel_count(self):
        return self.singles_a.size

    def __eq__(self, other):
        if not isinstance(other, ChannelCounts):
            return NotImplemented
        return (self.pair == other.pair
                and np.array_equal(self.singles_a, other.singles_a)
                and np.array_equal(self.singles_b, other.singles_b)
                and np.array_equal(self.coincidences, other.coincidences)
                and (self.noise, self.total_a, self.total_b) == (other.noise, other.total_a, other.total_b))

    __hash__ = None

    def to_dict(self):
        return {'singles_A': self.singles_a.tolist(),
                'singles_B': self.singles_b.tolist(),
                'coincidences': self.coincidences.tolist(),
                'noise': self.noise,
                'total_A': self.total_a,
                'total_B': self.total_b}


def _as_arrays(stream):
    if isinstance(stream, EventStream):
        return stream.timestamps, stream.channels
    timestamps, channels = stream
    timestamps = np.asarray(timestamps, dtype=np.float64)
    channels = np.asarray(channels, dtype=np.int64)
    if timestamps.shape != channels.shape or timestamps.ndim != 1:
        raise ValueError('timestamps and channels must be 1-d arrays of equal length')
    if timestamps.size and not np.all(np.diff(timestamps) >= 0):
        raise StreamOrderError('stream timestamps are not sorted')
    return timestamps, channels


def _check_window(window):
    if not window > 0:
        raise ValueError('window must be positive, got {!r}'.format(window))
    return float(window)


@jit(nopython=True)
def _pair_block(t_a, ch_a, t_b, ch_b, used_a, used_b, ia, ib, t, matches, discards, n_match, n_discard):
    # unused events of both stations at exactly t: same channels first, then cross pairs in index order
    end_a = ia
    while end_a < t_a.size and t_a[end_a] == t:
        end_a += 1
    end_b = ib
    while end_b < t_b.size and t_b[end_b] == t:
        end_b += 1
    for i in range(ia, end_a):
        if used_a[i]:
            continue
        for k in range(ib, end_b):
            if not used_b[k] and ch_b[k] == ch_a[i]:
                used_a[i] = True
                used_b[k] = True
                matches[n_match, 0] = i
                matches[n_match, 1] = k
                matches[n_match, 2] = ch_a[i]
                n_match += 1
                break
    k = ib
    for i in range(ia, end_a):
        if used_a[i]:
            continue
        while k < end_b and used_b[k]:
            k += 1
        if k >= end_b:
            break
        used_a[i] = True
        used_b[k] = True
        discards[n_discard, 0] = i
        discards[n_discard, 1] = k
        n_discard += 1
    return n_match, n_discard


@jit(nopython=True)
def _merge_match(t_a, ch_a, t_b, ch_b, window):
    n_a = t_a.size
    n_b = t_b.size
    used_a = np.zeros(n_a, np.bool_)
    used_b = np.zeros(n_b, np.bool_)
    size = min(n_a, n_b)
    matches = np.empty((size, 3), np.int64)
    discards = np.empty((size, 2), np.int64)
    n_match = 0
    n_discard = 0
    ia = 0
    ib = 0
    while True:
        while ia < n_a and used_a[ia]:
            ia += 1
        while ib < n_b and used_b[ib]:
            ib += 1
        if ia >= n_a and ib >= n_b:
            break
        from_a = ib >= n_b or (ia < n_a and t_a[ia] <= t_b[ib])
        if from_a:
            x = ia
            used_a[x] = True
            t_x = t_a[x]
            ch_x = ch_a[x]
            t_o = t_b
            ch_o = ch_b
            used_o = used_b
            k = ib
            n_o = n_b
        else:
            x = ib
            used_b[x] = True
            t_x = t_b[x]
            ch_x = ch_b[x]
            t_o = t_a
            ch_o = ch_a
            used_o = used_a
            k = ia
            n_o = n_a

        best = -1
        t_best = 0.0
        while k < n_o:
            if not used_o[k]:
                if abs(t_o[k] - t_x) > window:
                    break
                if best < 0:
                    best = k
                    t_best = t_o[k]
                    if ch_o[k] == ch_x:
                        break
                elif t_o[k] == t_best:
                    if ch_o[k] == ch_x:
                        best = k
                        break
                else:
                    break
            k += 1

        if from_a and best >= 0 and t_best == t_x:
            used_a[x] = False
            n_match, n_discard = _pair_block(t_a, ch_a, t_b, ch_b, used_a, used_b, ia, ib, t_x,
                                             matches, discards, n_match, n_discard)
        elif best >= 0:
            used_o[best] = True
            if from_a:
                i_a = x
                i_b = best
            else:
                i_a = best
                i_b = x
            if ch_o[best] == ch_x:
                matches[n_match, 0] = i_a
                matches[n_match, 1] = i_b
                matches[n_match, 2] = ch_x
                n_match += 1
            else:
                discards[n_discard, 0] = i_a
                discards[n_discard, 1] = i_b
                n_discard += 1
    return matches[:n_match], discards[:n_discard]


def _result(matches, discards, n_a, n_b):
    matches = np.asarray(matches, dtype=np.int64).reshape(-1, 3)
    discards = np.asarray(discards, dtype=np.int64).reshape(-1, 2)
    used = matches.shape[0] + discards.shape[0]
    return MatchResult(matches, discards, n_a - used, n_b - used)


def match_events(stream_a, stream_b, window):
    """
    Sort-merge coincidence matching.

    Parameters
    ----------
    stream_a, stream_b : EventStream or (timestamps, channels)
        Sorted by timestamp.
    window : float
        Coincidence window :math:`w > 0` [s].

    Returns
    -------
    MatchResult

    Example
    -------
    >>> res = match_events(([1.0], [2]), ([1.0], [5]), 0.1)
    >>> res.n_matches, res.n_discards
    (0, 1)
    """
    window = _check_window(window)
    t_a, ch_a = _as_arrays(stream_a)
    t_b, ch_b = _as_arrays(stream_b)
    matches, discards = _merge_match(t_a, ch_a, t_b, ch_b, window)
    return _result(matches, discards, t_a.size, t_b.size)


def brute_force_match(stream_a, stream_b, window):
    """
    Exhaustive-scan version of :func:`match_events`, same rule, O(n^2).
    """
    window = _check_window(window)
    t_a, ch_a = _as_arrays(stream_a)
    t_b, ch_b = _as_arrays(stream_b)
    times = (t_a.tolist(), t_b.tolist())
    chans = (ch_a.tolist(), ch_b.tolist())
    used = ([False] * len(times[0]), [False] * len(times[1]))

    order = sorted([(t, 0, i) for i, t in enumerate(times[0])] +
                   [(t, 1, i) for i, t in enumerate(times[1])])
    matches, discards = [], []
    for t_x, station, x in order:
        if used[station][x]:
            continue
        if station == 0 and any(not used[1][k] and t == t_x for k, t in enumerate(times[1])):
            block_a = [i for i, t in enumerate(times[0]) if not used[0][i] and t == t_x]
            block_b = [k for k, t in enumerate(times[1]) if not used[1][k] and t == t_x]
            for i in block_a:
                same = [k for k in block_b if not used[1][k] and chans[1][k] == chans[0][i]]
                if same:
                    used[0][i] = used[1][same[0]] = True
                    matches.append((i, same[0], chans[0][i]))
            rest_a = [i for i in block_a if not used[0][i]]
            rest_b = [k for k in block_b if not used[1][k]]
            for i, k in zip(rest_a, rest_b):
                used[0][i] = used[1][k] = True
                discards.append((i, k))
            if used[0][x]:
                continue
        used[station][x] = True
        other = 1 - station
        candidates = [(times[other][k], chans[other][k] != chans[station][x], k)
                      for k in range(len(times[other]))
                      if not used[other][k] and abs(times[other][k] - t_x) <= window]
        if not candidates:
            continue
        _, mismatch, k = min(candidates)
        used[other][k] = True
        i_a, i_b = (x, k) if station == 0 else (k, x)
        if mismatch:
            discards.append((i_a, i_b))
        else:
            matches.append((i_a, i_b, chans[station][x]))
    return _result(matches, discards, t_a.size, t_b.size)


def count_channels(stream_a, stream_b, window, channel_count, pair=None):
    """
    Per-channel singles and coincidences of two event streams.

    Returns
    -------
    (ChannelCounts, MatchResult)
    """
    for stream in (stream_a, stream_b):
        if len(stream) and stream.channels.max() >= channel_count:
            raise ValueError('channel index {} outside [0, {})'.format(stream.channels.max(), channel_count))
    result = match_events(stream_a, stream_b, window)
    if result.n_discards:
        logger.info('%s: %d cross-channel coincidences discarded',
                    pair.name if pair is not None else 'streams', result.n_discards)
    counts = ChannelCounts(pair=pair,
                           singles_a=np.bincount(stream_a.channels, minlength=channel_count),
                           singles_b=np.bincount(stream_b.channels, minlength=channel_count),
                           coincidences=result.coincidences(channel_count),
                           noise=result.n_discards,
                           total_a=len(stream_a),
                           total_b=len(stream_b))
    return counts, result


def aggregate(run, window, channel_count):
    """
    Per-channel singles and coincidences of one run.

    Parameters
    ----------
    run : RunRecord
    window : float
    channel_count : int

    Returns
    -------
    ChannelCounts
    """
    return count_channels(run.stream_a, run.stream_b, window, channel_count, run.pair)[0]
