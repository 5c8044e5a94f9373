r"""
Hidden-variable models seen through a gedanken spectrograph.

The hidden variable :math:`\lambda` is discretized into :math:`K` channels of
width :math:`\Delta\lambda`. A model is a set of channel weights
:math:`\rho_i` plus, for every channel and every pair of analyzer settings,
the probabilities of the four detection outcomes (both stations click, only A,
only B, neither).
"""

import enum
import json
import math
from collections import namedtuple
from dataclasses import dataclass

import numpy as np

from .utils import atomic_write_json
from .utils import reject_unknown

PROB_TOL = 1e-12

# Outcome order used by every probability table
BOTH, A_ONLY, B_ONLY, NEITHER = range(4)


class ModelError(ValueError):
    """A hidden-variable model violates one of its probabilistic constraints."""


class Angle(float):
    """
    Analyzer angle in radians. Stored unreduced.

    >>> Angle(0.5) + 1
    1.5
    >>> Angle(float('nan'))
    Traceback (most recent call last):
    ...
    ValueError: angle must be finite, got nan
    """

    def __new__(cls, value):
        value = float(value)
        if not math.isfinite(value):
            raise ValueError('angle must be finite, got {!r}'.format(value))
        return super().__new__(cls, value)


@dataclass(frozen=True)
class SettingsQuad:
    r"""
    The four analyzer settings :math:`\{\alpha, \alpha', \beta, \beta'\}`.
    """
    alpha: float
    alpha_prime: float
    beta: float
    beta_prime: float

    def __post_init__(self):
        for name in ('alpha', 'alpha_prime', 'beta', 'beta_prime'):
            object.__setattr__(self, name, Angle(getattr(self, name)))

    def as_tuple(self):
        return (self.alpha, self.alpha_prime, self.beta, self.beta_prime)

    def to_dict(self):
        return {'alpha': self.alpha, 'alpha_prime': self.alpha_prime,
                'beta': self.beta, 'beta_prime': self.beta_prime}

    @classmethod
    def from_dict(cls, data):
        reject_unknown(data, ('alpha', 'alpha_prime', 'beta', 'beta_prime'), 'quad')
        return cls(**data)

    @classmethod
    def parse(cls, text):
        """
        Parse ``"a,ap,b,bp"`` (radians).

        >>> SettingsQuad.parse('0,1.5,0,-0.5').beta_prime
        -0.5
        """
        parts = [p for p in text.split(',') if p.strip()]
        if len(parts) != 4:
            raise ValueError('quad needs four comma separated angles, got {!r}'.format(text))
        return cls(*(float(p) for p in parts))


class SettingPair(enum.Enum):
    r"""
    One of the four setting pairs of a CH experiment. Each run is tagged with
    exactly one of them.
    """
    AB = ('alpha', 'beta')
    ABp = ('alpha', 'beta_prime')
    ApB = ('alpha_prime', 'beta')
    ApBp = ('alpha_prime', 'beta_prime')

    @property
    def a_index(self):
        """0 for :math:`\\alpha`, 1 for :math:`\\alpha'`"""
        return int(self.value[0] == 'alpha_prime')

    @property
    def b_index(self):
        """0 for :math:`\\beta`, 1 for :math:`\\beta'`"""
        return int(self.value[1] == 'beta_prime')

    @property
    def index(self):
        return PAIRS.index(self)

    def angles(self, quad):
        return getattr(quad, self.value[0]), getattr(quad, self.value[1])


PAIRS = tuple(SettingPair)


class CHTerms(namedtuple('CHTerms', ('p_ab', 'p_abp', 'p_apb', 'p_apbp', 'p_b', 'p_a_prime'))):
    r"""
    The six terms of the CH combination

    :math:`J = P_{AB}(\alpha,\beta) - P_{AB}(\alpha,\beta') + P_{AB}(\alpha',\beta)
    + P_{AB}(\alpha',\beta') - P_B(\beta) - P_A(\alpha')`
    """
    __slots__ = ()

    @property
    def j(self):
        return (self.p_ab - self.p_abp + self.p_apb + self.p_apbp
                - self.p_b - self.p_a_prime)

    def to_dict(self):
        return dict(self._asdict())


@dataclass(frozen=True)
class SpectrographConfig:
    r"""
    Geometry of the hidden-variables spectrograph.

    Parameters
    ----------
    channel_count : int
        Number of channels :math:`K`.
    lambda_min, lambda_max : float
        Range of the (abstract) hidden-variable coordinate.
        Default: [0, 1)

    Channel :math:`i` covers :math:`\lambda_i \pm \Delta\lambda/2` with
    :math:`\lambda_i = \lambda_{\min} + (i + 1/2)\Delta\lambda`.

    >>> SpectrographConfig(4).centers
    array([0.125, 0.375, 0.625, 0.875])
    """
    channel_count: int
    lambda_min: float = 0.0
    lambda_max: float = 1.0

    def __post_init__(self):
        if int(self.channel_count) != self.channel_count or self.channel_count < 1:
            raise ModelError('channel_count must be a positive integer, got {!r}'.format(self.channel_count))
        object.__setattr__(self, 'channel_count', int(self.channel_count))
        if not (math.isfinite(self.lambda_min) and math.isfinite(self.lambda_max)):
            raise ModelError('lambda range must be finite')
        if not self.lambda_max > self.lambda_min:
            raise ModelError('lambda_max ({}) must exceed lambda_min ({})'.format(self.lambda_max, self.lambda_min))

    @property
    def resolution(self):
        return (self.lambda_max - self.lambda_min) / self.channel_count

    @property
    def centers(self):
        return self.lambda_min + (np.arange(self.channel_count) + 0.5) * self.resolution

    def channel_of(self, lam):
        return channel_of(lam, self)


def channel_of(lam, config):
    r"""
    Index of the channel holding :math:`\lambda`.

    Parameters
    ----------
    lam : float, array
        Hidden-variable value(s) in :math:`[\lambda_{\min}, \lambda_{\max})`.
    config : SpectrographConfig

    >>> channel_of(0.5, SpectrographConfig(10))
    5
    """
    lam_arr = np.asarray(lam, dtype=float)
    if np.any(~(lam_arr >= config.lambda_min) | ~(lam_arr < config.lambda_max)):
        raise ValueError('lambda outside [{}, {})'.format(config.lambda_min, config.lambda_max))
    span = config.lambda_max - config.lambda_min
    idx = np.floor((lam_arr - config.lambda_min) * config.channel_count / span).astype(np.int64)
    idx = np.clip(idx, 0, config.channel_count - 1)
    if idx.ndim == 0:
        return int(idx)
    return idx


class ChannelDistribution(object):
    r"""
    Channel weights :math:`\rho_i \geq 0`, :math:`\sum_i \rho_i = 1`.
    """

    def __init__(self, weights):
        weights = np.array(weights, dtype=float)
        if weights.ndim != 1 or weights.size == 0:
            raise ModelError('weights must be a non-empty 1-d sequence')
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise ModelError('weights must be finite and non-negative')
        if abs(weights.sum() - 1.0) > PROB_TOL:
            raise ModelError('weights must sum to 1, got {!r}'.format(weights.sum()))
        weights.setflags(write=False)
        self.weights = weights

    def __len__(self):
        return self.weights.size

    @classmethod
    def uniform(cls, channel_count):
        return cls(np.full(channel_count, 1.0 / channel_count))


def _check_probabilities(values, name):
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)) or np.any(values < 0) or np.any(values > 1):
        raise ModelError('{} must lie in [0, 1]'.format(name))
    return values


class FactorizableResponse(object):
    r"""
    Local response :math:`P_{AB}(\alpha,\beta,\lambda) = P_A(\alpha,\lambda) P_B(\beta,\lambda)`.

    Parameters
    ----------
    p_a : array, shape (2, K)
        Detection probability in A; row 0 for :math:`\alpha`, row 1 for :math:`\alpha'`.
    p_b : array, shape (2, K)
        Detection probability in B; row 0 for :math:`\beta`, row 1 for :math:`\beta'`.
    """
    kind = 'factorizable'

    def __init__(self, p_a, p_b):
        p_a = _check_probabilities(p_a, 'p_a')
        p_b = _check_probabilities(p_b, 'p_b')
        if p_a.ndim != 2 or p_a.shape[0] != 2 or p_a.shape != p_b.shape:
            raise ModelError('p_a and p_b must both have shape (2, K), got {} and {}'.format(p_a.shape, p_b.shape))
        p_a.setflags(write=False)
        p_b.setflags(write=False)
        self.p_a = p_a
        self.p_b = p_b

    @property
    def channel_count(self):
        return self.p_a.shape[1]

    def outcome_table(self, pair):
        """Outcome probabilities, shape (K, 4), for one setting pair."""
        pa = self.p_a[pair.a_index]
        pb = self.p_b[pair.b_index]
        both = pa * pb
        a_only = pa * (1 - pb)
        b_only = (1 - pa) * pb
        return np.stack([both, a_only, b_only, (1 - pa) * (1 - pb)], axis=1)


class JointResponse(object):
    """
    General per-channel joint response, no factorization imposed.

    Parameters
    ----------
    table : array, shape (4, K, 4)
        Indexed by setting pair (in ``PAIRS`` order), channel and outcome
        (both, A only, B only, neither).
    """
    kind = 'joint'

    def __init__(self, table):
        table = _check_probabilities(table, 'joint response')
        if table.ndim != 3 or table.shape[0] != 4 or table.shape[2] != 4:
            raise ModelError('joint response must have shape (4, K, 4), got {}'.format(table.shape))
        if np.any(np.abs(table.sum(axis=2) - 1) > PROB_TOL):
            raise ModelError('joint outcome probabilities must sum to 1 per channel and setting pair')
        table.setflags(write=False)
        self.table = table

    @property
    def channel_count(self):
        return self.table.shape[1]

    def outcome_table(self, pair):
        return self.table[pair.index]


class HiddenVariableModel(object):
    r"""
    A spectrograph hidden-variable model.

    The channel distribution does not depend on the settings: the same
    :math:`\rho_i` is used for every setting pair.

    Parameters
    ----------
    config : SpectrographConfig
    distribution : ChannelDistribution
    response : FactorizableResponse or JointResponse
    kind : str, optional
        Label for serialization. Default: the response kind.
    """

    def __init__(self, config, distribution, response, kind=None, r=None, quad=None):
        if len(distribution) != config.channel_count:
            raise ModelError('{} weights for {} channels'.format(len(distribution), config.channel_count))
        if response.channel_count != config.channel_count:
            raise ModelError('response has {} channels, config {}'.format(response.channel_count,
                                                                         config.channel_count))
        self.config = config
        self.distribution = distribution
        self.response = response
        self.kind = kind or response.kind
        # Only set for the qm_channel construction
        self.r = r
        self.quad = quad

    @property
    def channel_count(self):
        return self.config.channel_count

    @property
    def weights(self):
        return self.distribution.weights

    @property
    def is_factorizable(self):
        return isinstance(self.response, FactorizableResponse)

    def outcome_table(self, pair):
        return self.response.outcome_table(pair)

    def cumulative_table(self, pair):
        """Thresholds (K, 3) splitting [0, 1) into the four outcomes."""
        return np.cumsum(self.outcome_table(pair)[:, :3], axis=1)

    def coincidence_probability(self, pair):
        r""":math:`P_{AB} = \sum_i \rho_i P_{AB}(\cdot, \lambda_i)`"""
        return float(self.weights @ self.outcome_table(pair)[:, BOTH])

    def single_probabilities(self, pair):
        """Marginal detection probabilities (P_A, P_B) in one run."""
        table = self.outcome_table(pair)
        return (float(self.weights @ (table[:, BOTH] + table[:, A_ONLY])),
                float(self.weights @ (table[:, BOTH] + table[:, B_ONLY])))

    def expected_terms(self):
        """
        Exact expectation of the six CH terms.

        :math:`P_B(\\beta)` comes from the (α, β) run and
        :math:`P_A(\\alpha')` from the (α', β) run.
        """
        p = {pair: self.coincidence_probability(pair) for pair in PAIRS}
        return CHTerms(p_ab=p[SettingPair.AB],
                       p_abp=p[SettingPair.ABp],
                       p_apb=p[SettingPair.ApB],
                       p_apbp=p[SettingPair.ApBp],
                       p_b=self.single_probabilities(SettingPair.AB)[1],
                       p_a_prime=self.single_probabilities(SettingPair.ApB)[0])

    def to_dict(self):
        data = {'channel_count': self.channel_count,
                'lambda_range': [self.config.lambda_min, self.config.lambda_max],
                'weights': self.weights.tolist(),
                'kind': self.kind}
        if self.kind == 'qm_channel':
            data['r'] = self.r
            data['quad'] = self.quad.to_dict()
        elif self.is_factorizable:
            data['p_a'] = {'alpha': self.response.p_a[0].tolist(),
                           'alpha_prime': self.response.p_a[1].tolist()}
            data['p_b'] = {'beta': self.response.p_b[0].tolist(),
                           'beta_prime': self.response.p_b[1].tolist()}
        else:
            data['table'] = {pair.name: self.response.table[pair.index].tolist() for pair in PAIRS}
        return data

    @classmethod
    def from_dict(cls, data, quad=None):
        """
        Build a model from its JSON description.

        Parameters
        ----------
        data : dict
        quad : SettingsQuad, optional
            Used by ``qm_channel`` descriptions that carry no ``quad`` of their own.
        """
        kind = data.get('kind')
        common = ('channel_count', 'lambda_range', 'weights', 'kind')
        extra = {'factorizable': ('p_a', 'p_b'),
                 'joint': ('table',),
                 'qm_channel': ('r', 'quad')}
        if kind not in extra:
            raise ModelError('model kind must be one of {}, got {!r}'.format(sorted(extra), kind))
        reject_unknown(data, common + extra[kind], 'model')
        missing = [key for key in common + extra[kind] if key not in data]
        if kind == 'qm_channel' and quad is not None and 'quad' in missing:
            missing.remove('quad')
        missing = [key for key in missing if key != 'lambda_range']
        if missing:
            raise ModelError('model description is missing {}'.format(', '.join(missing)))

        lam_min, lam_max = data.get('lambda_range', (0.0, 1.0))
        config = SpectrographConfig(data['channel_count'], float(lam_min), float(lam_max))
        weights = ChannelDistribution(data['weights'])

        if kind == 'factorizable':
            reject_unknown(data['p_a'], ('alpha', 'alpha_prime'), 'p_a')
            reject_unknown(data['p_b'], ('beta', 'beta_prime'), 'p_b')
            p_a = [data['p_a']['alpha'], data['p_a']['alpha_prime']]
            p_b = [data['p_b']['beta'], data['p_b']['beta_prime']]
            return make_factorizable_model(config, weights, p_a, p_b)
        if kind == 'joint':
            reject_unknown(data['table'], [pair.name for pair in PAIRS], 'table')
            table = [data['table'][pair.name] for pair in PAIRS]
            return make_joint_model(config, weights, table)
        if 'quad' in data:
            quad = SettingsQuad.from_dict(data['quad'])
        return make_qm_channel_model(config, weights, float(data['r']), quad)

    def save(self, file_name):
        atomic_write_json(file_name, self.to_dict())

    @classmethod
    def from_file(cls, file_name, quad=None):
        with open(file_name) as fh:
            return cls.from_dict(json.load(fh), quad=quad)


def _as_distribution(weights):
    if isinstance(weights, ChannelDistribution):
        return weights
    return ChannelDistribution(weights)


def make_factorizable_model(config, weights, p_a, p_b):
    r"""
    Local (factorizable) model, :math:`p(\mathrm{both}) = p_A p_B` per channel.

    Parameters
    ----------
    config : SpectrographConfig
    weights : ChannelDistribution or sequence
    p_a, p_b : array, shape (2, K)
        Per-setting, per-channel detection probabilities.

    >>> m = make_factorizable_model(SpectrographConfig(2), [0.5, 0.5],
    ...                             np.full((2, 2), 0.5), np.full((2, 2), 0.5))
    >>> m.outcome_table(SettingPair.AB)[:, BOTH]
    array([0.25, 0.25])
    """
    return HiddenVariableModel(config, _as_distribution(weights), FactorizableResponse(p_a, p_b))


def make_joint_model(config, weights, table):
    """General correlated model from a (4, K, 4) outcome table."""
    return HiddenVariableModel(config, _as_distribution(weights), JointResponse(table))


def make_qm_channel_model(config, weights, r, quad):
    r"""
    Correlated model whose every channel reproduces the Eberhardt-state
    quantum probabilities at the given settings.

    The hidden variable carries no information (all channels respond alike),
    so features #1-#3 hold at count level while the factorization of
    coincidences fails.

    Parameters
    ----------
    config : SpectrographConfig
    weights : ChannelDistribution or sequence
    r : float
        Eberhardt amplitude ratio, :math:`r \geq 0`.
    quad : SettingsQuad
    """
    from .qm_oracle import EberhardtState
    from .qm_oracle import prob_joint
    from .qm_oracle import prob_single_a
    from .qm_oracle import prob_single_b

    if not r >= 0:
        raise ModelError('r must be non-negative, got {!r}'.format(r))
    state = EberhardtState(r)
    k = config.channel_count
    table = np.empty((4, k, 4))
    for pair in PAIRS:
        a, b = pair.angles(quad)
        both = prob_joint(state, a, b)
        a_only = prob_single_a(state, a) - both
        b_only = prob_single_b(state, b) - both
        row = np.array([both, a_only, b_only, 0.0])
        # rounding can push an exact zero a few ulps below
        row[(row < 0) & (row > -PROB_TOL)] = 0.0
        row[NEITHER] = 1.0 - row[:3].sum()
        if -PROB_TOL < row[NEITHER] < 0:
            row[NEITHER] = 0.0
        if np.any(row < 0) or np.any(row > 1):
            raise ModelError('inconsistent quantum probabilities for {}: {}'.format(pair.name, row))
        table[pair.index] = row
    model = HiddenVariableModel(config, _as_distribution(weights), JointResponse(table),
                                kind='qm_channel', r=float(r), quad=quad)
    return model


def random_factorizable_model(rng, max_channels=16):
    r"""
    Draw a random local model: :math:`K` uniform in [1, max_channels],
    :math:`\rho` from a flat Dirichlet, every response uniform in [0, 1].

    Parameters
    ----------
    rng : numpy.random.Generator
    max_channels : int
    """
    k = int(rng.integers(1, max_channels + 1))
    weights = rng.dirichlet(np.ones(k))
    # Dirichlet draws sum to 1 only up to rounding
    weights = weights / weights.sum()
    p_a = rng.random((2, k))
    p_b = rng.random((2, k))
    return make_factorizable_model(SpectrographConfig(k), weights, p_a, p_b)
