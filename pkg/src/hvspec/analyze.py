r"""
CH statistic and the spectrograph bound from per-channel counts.

"Spectrograph's realism" asks three things of the per-channel counts:

1. every count is non-negative;
2. the channel counts add up to the detected total;
3. :math:`N^{AB}_i \leq \min(N^A_i, N^B_i)` in every channel.

Together they bound :math:`J` only by a correction term built from the
channels :math:`\Gamma_2` where
:math:`N^{AB}_i(\alpha',\beta') > N^{AB}_i(\alpha,\beta')`:

.. math::

    J < \frac{2}{N} \sum_{i \in \Gamma_2}
        \{N^{AB}_i(\alpha',\beta') - N^{AB}_i(\alpha,\beta')\}

and :math:`J \leq 0` when :math:`\Gamma_2` is empty. Singles enter from the
run they were recorded in: :math:`N^B(\beta)` from (α, β) and
:math:`N^A(\alpha')` from (α', β). All verdicts are decided on integer counts.
"""

import json
import logging
import re
from collections import namedtuple
from dataclasses import dataclass
from dataclasses import field
from fractions import Fraction

import numpy as np
import pandas as pd
from scipy.optimize import linprog

from .coincidence import ChannelCounts
from .model import CHTerms
from .model import PAIRS
from .model import SettingPair
from .utils import atomic_write_frame
from .utils import atomic_write_json
from .utils import reject_unknown

logger = logging.getLogger(__name__)

AB, ABp, ApB, ApBp = PAIRS

# Sign of each run's coincidences in J
J_SIGNS = {AB: 1, ABp: -1, ApB: 1, ApBp: 1}

Violation = namedtuple('Violation', ('feature', 'pair', 'channel', 'detail'))


class AuditError(ValueError):
    """A count table does not satisfy features #1-#3."""


class CountTable(object):
    """
    Per-channel counts of the four runs of a CH experiment.

    Parameters
    ----------
    channel_count : int
        :math:`K`, shared by all runs.
    n_pairs : int
        Emitted pairs per run :math:`N`, shared by all runs.
    runs : dict
        ``SettingPair -> ChannelCounts``, all four pairs present.
    """

    def __init__(self, channel_count, n_pairs, runs):
        if int(n_pairs) != n_pairs or n_pairs < 0:
            raise ValueError('N must be a non-negative integer, got {!r}'.format(n_pairs))
        missing = [pair.name for pair in PAIRS if pair not in runs]
        if missing:
            raise ValueError('count table is missing run(s) {}'.format(', '.join(missing)))
        for pair in PAIRS:
            if runs[pair].channel_count != channel_count:
                raise ValueError('run {} has {} channels, expected {}'.format(
                    pair.name, runs[pair].channel_count, channel_count))
        self.channel_count = int(channel_count)
        self.n_pairs = int(n_pairs)
        self.runs = {pair: runs[pair] for pair in PAIRS}

    def __getitem__(self, pair):
        return self.runs[pair]

    def __eq__(self, other):
        if not isinstance(other, CountTable):
            return NotImplemented
        return ((self.channel_count, self.n_pairs) == (other.channel_count, other.n_pairs)
                and all(self.runs[p] == other.runs[p] for p in PAIRS))

    __hash__ = None

    def coincidences(self, pair):
        return self.runs[pair].coincidences

    def to_dict(self):
        data = {'K': self.channel_count, 'N': self.n_pairs}
        for pair in PAIRS:
            data[pair.name] = self.runs[pair].to_dict()
        return data

    @classmethod
    def from_dict(cls, data):
        reject_unknown(data, ('K', 'N') + tuple(p.name for p in PAIRS), 'count table')
        runs = {}
        for pair in PAIRS:
            if pair.name not in data:
                raise ValueError('count table is missing run {}'.format(pair.name))
            run = data[pair.name]
            reject_unknown(run, ('singles_A', 'singles_B', 'coincidences', 'noise', 'total_A', 'total_B'),
                           'run ' + pair.name)
            runs[pair] = ChannelCounts(pair=pair,
                                       singles_a=run['singles_A'],
                                       singles_b=run['singles_B'],
                                       coincidences=run['coincidences'],
                                       noise=run.get('noise', 0),
                                       total_a=run.get('total_A'),
                                       total_b=run.get('total_B'))
        return cls(data['K'], data['N'], runs)

    def save(self, file_name):
        atomic_write_json(file_name, self.to_dict())

    @classmethod
    def from_file(cls, file_name):
        with open(file_name) as fh:
            return cls.from_dict(json.load(fh))

    def spectrum(self):
        """Long-format spectrum: one row per run and channel."""
        rows = []
        for pair in PAIRS:
            run = self.runs[pair]
            rows.append(pd.DataFrame({'pair': pair.name,
                                      'channel': np.arange(self.channel_count),
                                      'N_A': run.singles_a,
                                      'N_B': run.singles_b,
                                      'N_AB': run.coincidences}))
        return pd.concat(rows, ignore_index=True)

    def save_spectrum(self, file_name):
        atomic_write_frame(file_name, self.spectrum())


@dataclass
class AuditReport:
    """
    Outcome of :func:`audit_features`.

    ``detected_totals`` compares, per run and station, the channel sum with the
    number of recorded detections (feature #2, "detected particles" reading);
    ``emitted_pairs`` is the per-run number of emitted pairs, which bounds the
    channel sums under the "emitted" reading.
    """
    violations: list = field(default_factory=list)
    detected_totals: dict = field(default_factory=dict)
    emitted_pairs: int = 0

    @property
    def passed(self):
        return not self.violations

    def to_dict(self):
        return {'passed': self.passed,
                'violations': [dict(v._asdict()) for v in self.violations],
                'detected_totals': self.detected_totals,
                'emitted_pairs': self.emitted_pairs}


def audit_features(table):
    """
    Check features #1-#3 on every run and channel.

    Violations are listed in the report; nothing is raised.

    >>> table = random_count_table(np.random.default_rng(0), 3, 30)
    >>> audit_features(table).passed
    True
    """
    report = AuditReport(emitted_pairs=table.n_pairs)
    for pair in PAIRS:
        run = table[pair]
        for name, values in (('singles_A', run.singles_a), ('singles_B', run.singles_b),
                             ('coincidences', run.coincidences)):
            for i in np.flatnonzero(values < 0):
                report.violations.append(Violation(1, pair.name, int(i), '{} = {}'.format(name, values[i])))
        if run.noise < 0:
            report.violations.append(Violation(1, pair.name, None, 'noise = {}'.format(run.noise)))

        sum_a, sum_b = int(run.singles_a.sum()), int(run.singles_b.sum())
        report.detected_totals[pair.name] = {'A': [sum_a, run.total_a], 'B': [sum_b, run.total_b]}
        for station, total, recorded in (('A', sum_a, run.total_a), ('B', sum_b, run.total_b)):
            if total != recorded:
                report.violations.append(Violation(
                    2, pair.name, None,
                    'station {}: channel sum {} != detected total {}'.format(station, total, recorded)))
            if total > table.n_pairs:
                report.violations.append(Violation(
                    2, pair.name, None,
                    'station {}: channel sum {} exceeds emitted pairs {}'.format(station, total, table.n_pairs)))

        excess = run.coincidences > np.minimum(run.singles_a, run.singles_b)
        for i in np.flatnonzero(excess):
            report.violations.append(Violation(
                3, pair.name, int(i), 'N_AB = {} > min(N_A = {}, N_B = {})'.format(
                    run.coincidences[i], run.singles_a[i], run.singles_b[i])))
    if report.violations:
        logger.info('audit: %d violation(s)', len(report.violations))
    return report


@dataclass(frozen=True)
class GammaPartition:
    r"""
    :math:`\Gamma_1`: channels with
    :math:`N^{AB}_i(\alpha',\beta') \leq N^{AB}_i(\alpha,\beta')` (ties included);
    :math:`\Gamma_2`: the rest.
    """
    gamma1: tuple
    gamma2: tuple

    @property
    def channel_count(self):
        return len(self.gamma1) + len(self.gamma2)


def gamma_partition(table):
    apbp = table.coincidences(ApBp)
    abp = table.coincidences(ABp)
    in_gamma1 = apbp <= abp
    return GammaPartition(tuple(int(i) for i in np.flatnonzero(in_gamma1)),
                          tuple(int(i) for i in np.flatnonzero(~in_gamma1)))


@dataclass
class JReport:
    """
    CH statistic of a count table and, when complete, the spectrograph bound.

    ``j_numerator`` and ``correction_numerator`` are the exact integer
    numerators of :math:`J` and of the correction, over :math:`N`.
    """
    n_pairs: int
    j_numerator: int
    terms: CHTerms
    sigma: float = None
    correction_numerator: int = None
    partition: GammaPartition = None
    residuals_gamma1: dict = None
    residuals_gamma2: dict = None
    verdicts: dict = field(default_factory=dict)

    @property
    def j(self):
        return self.j_numerator / self.n_pairs

    @property
    def correction(self):
        if self.correction_numerator is None:
            return None
        return self.correction_numerator / self.n_pairs

    @property
    def passed(self):
        return all(self.verdicts.values())

    def to_dict(self):
        data = {'J': self.j, 'N': self.n_pairs, 'terms': self.terms.to_dict(),
                'sigma': self.sigma, 'verdicts': dict(self.verdicts)}
        if self.partition is not None:
            data['correction'] = self.correction
            data['gamma2'] = list(self.partition.gamma2)
            data['residuals'] = {'gamma1': {str(k): v for k, v in self.residuals_gamma1.items()},
                                 'gamma2': {str(k): v for k, v in self.residuals_gamma2.items()}}
        return data

    def save(self, file_name):
        atomic_write_json(file_name, self.to_dict())


def _j_numerator(table):
    return int(sum(J_SIGNS[pair] * int(table.coincidences(pair).sum()) for pair in PAIRS)
               - int(table[AB].singles_b.sum()) - int(table[ApB].singles_a.sum()))


def j_standard_error(table):
    r"""
    Binomial standard error of :math:`J`.

    Per emitted pair, run (α, β) contributes :math:`-1` for a B-only
    detection, run (α', β) :math:`-1` for an A-only detection, run (α, β')
    :math:`-1` and run (α', β') :math:`+1` for a coincidence. The four runs are
    independent.
    """
    n = table.n_pairs
    if n < 1:
        raise ValueError('N must be at least 1')
    counts = [table[AB].singles_b.sum() - table.coincidences(AB).sum(),
              table[ApB].singles_a.sum() - table.coincidences(ApB).sum(),
              table.coincidences(ABp).sum(),
              table.coincidences(ApBp).sum()]
    f = np.clip(np.array(counts, dtype=float) / n, 0, 1)
    return float(np.sqrt(np.sum(f * (1 - f)) / n))


def ch_j_from_counts(table):
    """
    :math:`J` from counts, normalized by the emitted pairs :math:`N`.

    Returns
    -------
    JReport
        With ``terms``, ``sigma`` and the ``ch`` verdict only.

    >>> table = max_j_under_realism(np.full((4, 4), 25), np.full((4, 4), 25), 100)[0]
    >>> ch_j_from_counts(table).j
    1.0
    """
    n = table.n_pairs
    if n < 1:
        raise ValueError('J needs N >= 1')
    terms = CHTerms(p_ab=table.coincidences(AB).sum() / n,
                    p_abp=table.coincidences(ABp).sum() / n,
                    p_apb=table.coincidences(ApB).sum() / n,
                    p_apbp=table.coincidences(ApBp).sum() / n,
                    p_b=table[AB].singles_b.sum() / n,
                    p_a_prime=table[ApB].singles_a.sum() / n)
    num = _j_numerator(table)
    return JReport(n_pairs=n, j_numerator=num, terms=CHTerms(*(float(t) for t in terms)),
                   sigma=j_standard_error(table), verdicts={'ch': num <= 0})


def _correction_numerator(table, partition):
    idx = list(partition.gamma2)
    if not idx:
        return 0
    return int(2 * (table.coincidences(ApBp)[idx].sum() - table.coincidences(ABp)[idx].sum()))


def correction_term(table, partition):
    r"""
    :math:`(2/N) \sum_{i \in \Gamma_2} \{N^{AB}_i(\alpha',\beta') - N^{AB}_i(\alpha,\beta')\}`,
    non-negative, zero iff :math:`\Gamma_2` is empty.
    """
    if table.n_pairs < 1:
        raise ValueError('correction needs N >= 1')
    return _correction_numerator(table, partition) / table.n_pairs


def channel_residuals(table, partition):
    """
    Per-channel left-hand sides of the two channel inequalities.

    Returns
    -------
    (dict, dict)
        ``channel -> residual`` for Γ₁ (must be ≤ 0) and for Γ₂ (must be < 0).
    """
    ab, abp = table.coincidences(AB), table.coincidences(ABp)
    apb, apbp = table.coincidences(ApB), table.coincidences(ApBp)
    single_b = table[AB].singles_b
    single_a_prime = table[ApB].singles_a
    common = ab + apb - single_a_prime - single_b
    res1 = {i: int(common[i] + apbp[i] - abp[i]) for i in partition.gamma1}
    res2 = {i: int(common[i] + abp[i] - apbp[i]) for i in partition.gamma2}
    return res1, res2


def spectrograph_inequality(table):
    """
    Full JReport with the spectrograph bound.

    Verdicts
    --------
    ``ch``
        :math:`J \\leq 0`.
    ``spectrograph_bound``
        :math:`J <` correction if Γ₂ is non-empty, :math:`J \\leq 0` otherwise.
    ``residuals``
        Every Γ₁ residual ≤ 0 and every Γ₂ residual < 0.

    Raises
    ------
    AuditError
        When the table fails :func:`audit_features`.
    """
    audit = audit_features(table)
    if not audit.passed:
        raise AuditError('count table fails features #1-#3: {}'.format(
            '; '.join('#{} {} ch{}: {}'.format(*v) for v in audit.violations[:5])))
    report = ch_j_from_counts(table)
    partition = gamma_partition(table)
    corr = _correction_numerator(table, partition)
    res1, res2 = channel_residuals(table, partition)
    if partition.gamma2:
        bound = report.j_numerator < corr
    else:
        bound = report.j_numerator <= 0
    report.correction_numerator = corr
    report.partition = partition
    report.residuals_gamma1 = res1
    report.residuals_gamma2 = res2
    report.verdicts.update({'audit': True,
                            'spectrograph_bound': bool(bound),
                            'residuals': all(v <= 0 for v in res1.values()) and all(v < 0 for v in res2.values())})
    logger.info('J = %.6g, correction = %.6g, |Gamma2| = %d', report.j, report.correction, len(partition.gamma2))
    return report


def _exact_expression(x, xp, y, yp, big_x, big_y):
    x, xp, y, yp, big_x, big_y = (Fraction(float(v)) for v in (x, xp, y, yp, big_x, big_y))
    return x * y - x * yp + xp * y + xp * yp - big_x * y - big_y * xp, big_x * big_y


def ch_algebraic_check(x, xp, y, yp, big_x, big_y):
    r"""
    Evaluate :math:`E = xy - xy' + x'y + x'y' - Xy - Yx'` and the two sides of
    :math:`-XY \leq E \leq 0`, for :math:`0 \leq x, x' \leq X`,
    :math:`0 \leq y, y' \leq Y`.

    Accepts scalars or broadcastable arrays. Cases within rounding distance of
    either bound are decided in exact rational arithmetic.

    Returns
    -------
    (value, holds_lower, holds_upper)

    >>> ch_algebraic_check(1, 1, 1, 1, 1, 1)
    (0.0, True, True)
    """
    args = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, xp, y, yp, big_x, big_y)))
    scalar = args[0].ndim == 0
    args = [np.atleast_1d(v) for v in args]
    x, xp, y, yp, big_x, big_y = args
    if not all(np.all(np.isfinite(v)) for v in args):
        raise ValueError('arguments must be finite')
    if (np.any(x < 0) or np.any(xp < 0) or np.any(x > big_x) or np.any(xp > big_x)
            or np.any(y < 0) or np.any(yp < 0) or np.any(y > big_y) or np.any(yp > big_y)):
        raise ValueError('arguments outside the box 0 <= x, x\' <= X, 0 <= y, y\' <= Y')

    value = x * y - x * yp + xp * y + xp * yp - big_x * y - big_y * xp
    xy = big_x * big_y
    holds_upper = value <= 0
    holds_lower = value >= -xy
    # rounding of six products of size <= XY stays far below this band
    band = 1e-9 * np.maximum(xy, np.finfo(float).tiny)
    for i in zip(*np.nonzero((np.abs(value) <= band) | (np.abs(value + xy) <= band))):
        exact, exact_xy = _exact_expression(x[i], xp[i], y[i], yp[i], big_x[i], big_y[i])
        holds_upper[i] = exact <= 0
        holds_lower[i] = exact >= -exact_xy
    if scalar:
        return float(value[0]), bool(holds_lower[0]), bool(holds_upper[0])
    return value, holds_lower, holds_upper


def _validate_singles(singles_a, singles_b, n_pairs):
    singles_a = np.asarray(singles_a)
    singles_b = np.asarray(singles_b)
    if singles_a.ndim != 2 or singles_a.shape[0] != 4 or singles_a.shape != singles_b.shape:
        raise ValueError('singles must have shape (4, K) for both stations')
    for values in (singles_a, singles_b):
        if not np.all(np.equal(np.mod(values, 1), 0)):
            raise ValueError('singles must be integers')
    singles_a = singles_a.astype(np.int64)
    singles_b = singles_b.astype(np.int64)
    if np.any(singles_a < 0) or np.any(singles_b < 0):
        raise ValueError('singles must be non-negative')
    if np.any(singles_a.sum(axis=1) > n_pairs) or np.any(singles_b.sum(axis=1) > n_pairs):
        raise ValueError('channel sums of singles exceed N = {}'.format(n_pairs))
    return singles_a, singles_b


def max_j_under_realism(singles_a, singles_b, n_pairs, method='greedy'):
    r"""
    Largest :math:`J` compatible with features #1-#3 for given singles.

    Coincidences of (α, β), (α', β) and (α', β') are set to
    :math:`\min(N^A_i, N^B_i)` of their run and those of (α, β') to zero.

    Parameters
    ----------
    singles_a, singles_b : array, shape (4, K)
        Per-run (``PAIRS`` order), per-channel singles.
    n_pairs : int
    method : {'greedy', 'lp'}
        ``'lp'`` solves the box-constrained linear program with
        ``scipy.optimize.linprog`` instead of the closed form.

    Returns
    -------
    (CountTable, float)
    """
    if int(n_pairs) != n_pairs or n_pairs < 1:
        raise ValueError('N must be a positive integer, got {!r}'.format(n_pairs))
    n_pairs = int(n_pairs)
    singles_a, singles_b = _validate_singles(singles_a, singles_b, n_pairs)
    upper = np.minimum(singles_a, singles_b)
    signs = np.array([J_SIGNS[pair] for pair in PAIRS])

    if method == 'greedy':
        coinc = np.where(signs[:, None] > 0, upper, 0)
    elif method == 'lp':
        c = -np.repeat(signs, upper.shape[1]).astype(float)
        bounds = [(0, float(u)) for u in upper.ravel()]
        res = linprog(c, bounds=bounds, method='highs')
        if not res.success:
            raise RuntimeError('linprog failed: {}'.format(res.message))
        coinc = np.rint(res.x).astype(np.int64).reshape(upper.shape)
    else:
        raise ValueError("method must be 'greedy' or 'lp', got {!r}".format(method))

    runs = {pair: ChannelCounts(pair, singles_a[pair.index], singles_b[pair.index], coinc[pair.index])
            for pair in PAIRS}
    table = CountTable(upper.shape[1], n_pairs, runs)
    return table, _j_numerator(table) / n_pairs


_UNIFORM = re.compile(r'^uniform:K=(\d+),s=(\d+)$')


def uniform_singles(spec):
    """
    Parse ``uniform:K=<k>,s=<s>`` into identical (4, K) singles for both stations.

    >>> uniform_singles('uniform:K=2,s=3')[0].tolist()
    [[3, 3], [3, 3], [3, 3], [3, 3]]
    """
    match = _UNIFORM.match(spec.replace(' ', ''))
    if not match:
        raise ValueError('singles spec must look like uniform:K=<k>,s=<s>, got {!r}'.format(spec))
    k, s = int(match.group(1)), int(match.group(2))
    if k < 1:
        raise ValueError('K must be positive')
    singles = np.full((4, k), s, dtype=np.int64)
    return singles, singles.copy()


def random_count_table(rng, channel_count, n_pairs):
    r"""
    Random table satisfying features #1-#3: singles uniform in
    :math:`[0, \lfloor N/K \rfloor]` per channel, coincidences uniform in
    :math:`[0, \min(N^A_i, N^B_i)]`.

    Parameters
    ----------
    rng : numpy.random.Generator
    channel_count : int
    n_pairs : int
    """
    top = n_pairs // channel_count
    runs = {}
    for pair in PAIRS:
        singles_a = rng.integers(0, top + 1, channel_count)
        singles_b = rng.integers(0, top + 1, channel_count)
        coinc = rng.integers(0, np.minimum(singles_a, singles_b) + 1)
        runs[pair] = ChannelCounts(pair, singles_a, singles_b, coinc)
    return CountTable(channel_count, n_pairs, runs)


def factorization_gap(table, weights):
    r"""
    Departure from per-channel statistical independence,
    :math:`N^{AB}_i/N_i - N^A_i N^B_i / N_i^2` with :math:`N_i = N\rho_i`.

    Parameters
    ----------
    table : CountTable
    weights : array
        Channel weights :math:`\rho_i` of the generating model.

    Returns
    -------
    (gap, sigma) : arrays, shape (4, K)
        ``sigma`` is a conservative binomial scale (sum of the three
        frequency standard errors). Channels with :math:`\rho_i = 0` are NaN.
    """
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (table.channel_count,):
        raise ValueError('need one weight per channel')
    n_i = table.n_pairs * weights
    gap = np.full((4, table.channel_count), np.nan)
    sigma = np.full((4, table.channel_count), np.nan)
    ok = n_i > 0
    for pair in PAIRS:
        run = table[pair]
        f_ab = run.coincidences[ok] / n_i[ok]
        f_a = run.singles_a[ok] / n_i[ok]
        f_b = run.singles_b[ok] / n_i[ok]
        gap[pair.index, ok] = f_ab - f_a * f_b
        sigma[pair.index, ok] = sum(np.sqrt(np.clip(f * (1 - f), 0, None) / n_i[ok]) for f in (f_ab, f_a, f_b))
    return gap, sigma


def significance(report):
    """:math:`J / \\sigma_J`; ``None`` when :math:`\\sigma_J` is unknown or zero."""
    if not report.sigma:
        return None
    return report.j / report.sigma
