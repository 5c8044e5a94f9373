r"""
Quantum predictions for the Eberhardt state

:math:`|\psi_E\rangle = (1+r^2)^{-1/2} \{|x_A, y_B\rangle + r |y_A, x_B\rangle\}`

and a search for analyzer settings that violate the CH inequality.
Only the transmitted port of each analyzer is modeled.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .model import CHTerms
from .model import SettingsQuad

logger = logging.getLogger(__name__)

# Known CH ceiling for a maximally entangled state
CH_CEILING = (math.sqrt(2) - 1) / 2


@dataclass(frozen=True)
class EberhardtState:
    """
    Parameters
    ----------
    r : float
        Amplitude ratio, :math:`r \\geq 0`. Loophole-free experiments use
        :math:`r^2 \\approx 0.1`.
    """
    r: float

    def __post_init__(self):
        if not (math.isfinite(self.r) and self.r >= 0):
            raise ValueError('r must be finite and non-negative, got {!r}'.format(self.r))
        object.__setattr__(self, 'r', float(self.r))

    @classmethod
    def from_r2(cls, r2):
        if not r2 >= 0:
            raise ValueError('r2 must be non-negative, got {!r}'.format(r2))
        return cls(math.sqrt(r2))

    @property
    def r2(self):
        return self.r * self.r

    @property
    def norm(self):
        return 1.0 / (1.0 + self.r2)


def prob_joint(state, a, b):
    r"""
    :math:`P_{AB}(\alpha,\beta) = (1+r^2)^{-1} [\cos\alpha \sin\beta + r \sin\alpha \cos\beta]^2`

    Accepts scalars or broadcastable arrays.

    >>> round(float(prob_joint(EberhardtState(0.0), 0.0, np.pi / 2)), 12)
    1.0
    """
    amp = np.cos(a) * np.sin(b) + state.r * np.sin(a) * np.cos(b)
    return state.norm * amp * amp


def prob_single_a(state, a):
    r""":math:`P_A(\alpha) = (1+r^2)^{-1} [\cos^2\alpha + r^2 \sin^2\alpha]`"""
    return state.norm * (np.cos(a) ** 2 + state.r2 * np.sin(a) ** 2)


def prob_single_b(state, b):
    r""":math:`P_B(\beta) = (1+r^2)^{-1} [r^2 \cos^2\beta + \sin^2\beta]`"""
    return state.norm * (state.r2 * np.cos(b) ** 2 + np.sin(b) ** 2)


def _j_array(state, a, ap, b, bp):
    return (prob_joint(state, a, b) - prob_joint(state, a, bp)
            + prob_joint(state, ap, b) + prob_joint(state, ap, bp)
            - prob_single_b(state, b) - prob_single_a(state, ap))


@dataclass(frozen=True)
class QmJReport:
    """CH statistic of the Eberhardt state at one settings quad."""
    state: EberhardtState
    quad: SettingsQuad
    terms: CHTerms

    @property
    def j(self):
        return self.terms.j

    def to_dict(self):
        return {'r2': self.state.r2,
                'quad': self.quad.to_dict(),
                'terms': self.terms.to_dict(),
                'J': self.j}


def j_value(state, quad):
    r"""
    Evaluate the six CH terms and :math:`J` for the Eberhardt state.

    Parameters
    ----------
    state : EberhardtState
    quad : SettingsQuad

    Example
    -------
    >>> state = EberhardtState.from_r2(0.1)
    >>> report = j_value(state, SettingsQuad(1.058306, np.pi / 2, 0, -0.512316))
    >>> print('{:.6f}'.format(report.j))
    0.047227
    """
    a, ap, b, bp = quad.as_tuple()
    terms = CHTerms(p_ab=float(prob_joint(state, a, b)),
                    p_abp=float(prob_joint(state, a, bp)),
                    p_apb=float(prob_joint(state, ap, b)),
                    p_apbp=float(prob_joint(state, ap, bp)),
                    p_b=float(prob_single_b(state, b)),
                    p_a_prime=float(prob_single_a(state, ap)))
    return QmJReport(state, quad, terms)


def restricted_family_quad(state, alpha):
    r"""
    Settings with :math:`\alpha' = \pi/2`, :math:`\beta = 0` and
    :math:`\tan\beta' = -r \tan\alpha`, which makes
    :math:`P_{AB}(\alpha, \beta')` vanish.
    """
    return SettingsQuad(alpha, math.pi / 2, 0.0, -math.atan(state.r * math.tan(alpha)))


def optimal_restricted_quad(state):
    r"""
    Best quad of the restricted family, where
    :math:`J = r^2 (1-r) / ((1+r)(1+r^2))`.

    Within the family :math:`J \propto \sin^2\alpha - \sin^2\beta'`, maximal at
    :math:`\tan^2\alpha = 1/r`.
    """
    if state.r == 0:
        return restricted_family_quad(state, 0.0)
    return restricted_family_quad(state, math.atan(state.r ** -0.5))


def restricted_family_j(state):
    r = state.r
    return r * r * (1 - r) / ((1 + r) * (1 + r * r))


def _refine(state, start, step, refine_steps, min_step=1e-6):
    """Coordinate ascent with a shrinking step; J never decreases."""
    x = np.array(start, dtype=float)
    best = float(_j_array(state, *x))
    trace = [best]
    for _ in range(refine_steps):
        if step < min_step:
            break
        improved = False
        for axis in range(4):
            for sign in (1.0, -1.0):
                trial = x.copy()
                trial[axis] += sign * step
                value = float(_j_array(state, *trial))
                if value > best:
                    x, best = trial, value
                    improved = True
                    break
        if not improved:
            step /= 2
        trace.append(best)
    return x, best, trace


def find_violation(state, grid=16, refine_steps=400, n_starts=4):
    r"""
    Search the settings quad maximizing :math:`J`.

    A coarse grid over :math:`[0, \pi)^4` is followed by coordinate ascent
    from the ``n_starts`` best grid points. The grid argmax is resolved in
    lexicographic order of (α, α', β, β').

    Parameters
    ----------
    state : EberhardtState
    grid : int
        Grid points per angle, at least 8.
        Default: 16
    refine_steps : int
        Maximum number of coordinate-ascent iterations per start.
        Default: 400
    n_starts : int
        Default: 4

    Returns
    -------
    QmJReport
    """
    grid = int(grid)
    if grid < 8:
        raise ValueError('grid needs at least 8 points per angle, got {}'.format(grid))
    axis = np.arange(grid) * (np.pi / grid)
    a, ap, b, bp = np.meshgrid(axis, axis, axis, axis, indexing='ij', sparse=True)
    values = _j_array(state, a, ap, b, bp).ravel()
    # stable sort keeps lexicographic order among ties
    order = np.argsort(-values, kind='stable')[:max(1, int(n_starts))]
    logger.info('grid %d^4: best J = %.6g', grid, values[order[0]])

    best_x, best_j = None, -np.inf
    for flat in order:
        start = axis[np.array(np.unravel_index(flat, (grid,) * 4))]
        x, value, _ = _refine(state, start, np.pi / grid, refine_steps)
        if value > best_j:
            best_x, best_j = x, value
    logger.info('refined J = %.9g', best_j)
    return j_value(state, SettingsQuad(*best_x))
