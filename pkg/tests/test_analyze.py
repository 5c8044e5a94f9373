import itertools
import json
import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import settings
from hypothesis import strategies as st

from hvspec.analyze import AuditError
from hvspec.analyze import CountTable
from hvspec.analyze import audit_features
from hvspec.analyze import ch_algebraic_check
from hvspec.analyze import ch_j_from_counts
from hvspec.analyze import channel_residuals
from hvspec.analyze import correction_term
from hvspec.analyze import factorization_gap
from hvspec.analyze import gamma_partition
from hvspec.analyze import j_standard_error
from hvspec.analyze import max_j_under_realism
from hvspec.analyze import random_count_table
from hvspec.analyze import significance
from hvspec.analyze import spectrograph_inequality
from hvspec.analyze import uniform_singles
from hvspec.coincidence import ChannelCounts
from hvspec.model import PAIRS
from hvspec.model import ChannelDistribution
from hvspec.model import SettingPair
from hvspec.model import SettingsQuad
from hvspec.model import SpectrographConfig
from hvspec.model import make_factorizable_model
from hvspec.model import make_qm_channel_model
from hvspec.qm_oracle import EberhardtState
from hvspec.qm_oracle import j_value
from hvspec.qm_oracle import optimal_restricted_quad
from hvspec.simulate import TimingConfig
from hvspec.simulate import run_full

STATE = EberhardtState.from_r2(0.1)
QUAD = optimal_restricted_quad(STATE)
TIMING = TimingConfig.default()

AB, ABp, ApB, ApBp = PAIRS


def make_table(n_pairs, coincidences, singles_a, singles_b):
    """Count table from (4, K) arrays in ``PAIRS`` order."""
    coincidences, singles_a, singles_b = (np.atleast_2d(np.asarray(v)) for v in
                                          (coincidences, singles_a, singles_b))
    runs = {pair: ChannelCounts(pair, singles_a[pair.index], singles_b[pair.index], coincidences[pair.index])
            for pair in PAIRS}
    return CountTable(coincidences.shape[1], n_pairs, runs)


def uniform_table(n_pairs, coincidences, singles):
    """Every run with the same singles on both stations; ``coincidences`` per run."""
    singles = np.tile(np.atleast_1d(singles), (4, 1))
    return make_table(n_pairs, np.asarray(coincidences).reshape(4, -1), singles, singles)


def test_audit_passes_on_valid_table():
    report = audit_features(uniform_table(10, [[1], [2], [3], [4]], [5]))
    assert report.passed
    assert report.emitted_pairs == 10
    assert report.detected_totals['AB'] == {'A': [5, 5], 'B': [5, 5]}


def test_audit_feature_3():
    table = make_table(10, [[5], [0], [0], [0]], [[3], [3], [3], [3]], [[6], [6], [6], [6]])
    report = audit_features(table)
    assert not report.passed
    assert [(v.feature, v.pair, v.channel) for v in report.violations] == [(3, 'AB', 0)]


def test_audit_feature_1():
    table = make_table(10, [[0, 0]] * 4, [[1, -1], [0, 0], [0, 0], [0, 0]], [[0, 0]] * 4)
    report = audit_features(table)
    assert (1, 'AB', 1) in [(v.feature, v.pair, v.channel) for v in report.violations]


def test_audit_feature_2():
    runs = {pair: ChannelCounts(pair, [2, 1], [1, 1], [1, 0]) for pair in PAIRS}
    runs[ApB] = ChannelCounts(ApB, [2, 1], [1, 1], [1, 0], total_a=4)
    report = audit_features(CountTable(2, 10, runs))
    assert [(v.feature, v.pair) for v in report.violations] == [(2, 'ApB')]
    report = audit_features(uniform_table(3, [[0, 0]] * 4, [2, 2]))
    assert {v.feature for v in report.violations} == {2}
    assert len(report.violations) == 8


def test_count_table_errors():
    runs = {pair: ChannelCounts(pair, [1], [1], [0]) for pair in PAIRS}
    with pytest.raises(ValueError):
        CountTable(2, 10, runs)
    with pytest.raises(ValueError):
        CountTable(1, -1, runs)
    del runs[ApBp]
    with pytest.raises(ValueError):
        CountTable(1, 10, runs)


def test_j_without_coincidences(tol=1e-15):
    singles_a = [[7], [0], [4], [0]]
    singles_b = [[3], [0], [9], [0]]
    report = ch_j_from_counts(make_table(20, [[0]] * 4, singles_a, singles_b))
    assert abs(report.j + (3 + 4) / 20) < tol
    assert report.j_numerator == -7
    assert report.verdicts == {'ch': True}
    assert abs(report.terms.j - report.j) < tol


def test_j_needs_pairs():
    with pytest.raises(ValueError):
        ch_j_from_counts(uniform_table(0, [[0]] * 4, [0]))


def test_j_standard_error():
    table = uniform_table(100, [[20], [10], [20], [30]], [50])
    f = np.array([30, 30, 10, 30]) / 100
    assert abs(j_standard_error(table) - math.sqrt(np.sum(f * (1 - f)) / 100)) < 1e-15
    assert j_standard_error(uniform_table(100, [[0]] * 4, [0])) == 0


@pytest.mark.parametrize('apbp, abp, gamma', [(3, 5, 1), (5, 5, 1), (6, 5, 2)])
def test_gamma_partition(apbp, abp, gamma):
    table = uniform_table(100, [[0], [abp], [0], [apbp]], [10])
    partition = gamma_partition(table)
    assert (partition.gamma1, partition.gamma2) == (((0,), ()) if gamma == 1 else ((), (0,)))


def test_gamma_partition_covers_channels():
    table = random_count_table(np.random.default_rng(4), 12, 600)
    partition = gamma_partition(table)
    assert sorted(partition.gamma1 + partition.gamma2) == list(range(12))
    assert not set(partition.gamma1) & set(partition.gamma2)


def test_correction_term():
    table = uniform_table(100, [[0, 0], [2, 4], [0, 0], [5, 1]], [10, 10])
    partition = gamma_partition(table)
    assert partition.gamma2 == (0,)
    assert abs(correction_term(table, partition) - 0.06) < 1e-15
    table = uniform_table(100, [[0, 0], [4, 4], [0, 0], [1, 4]], [10, 10])
    assert correction_term(table, gamma_partition(table)) == 0


def test_all_zero_table():
    table = make_table(50, [[0, 0]] * 4, [[0, 0], [0, 0], [4, 1], [0, 0]], [[2, 3], [0, 0], [0, 0], [0, 0]])
    report = spectrograph_inequality(table)
    assert report.partition.gamma2 == ()
    assert abs(report.j + 10 / 50) < 1e-15
    assert report.correction == 0
    assert report.verdicts == {'ch': True, 'audit': True, 'spectrograph_bound': True, 'residuals': True}


def test_spectrograph_inequality_rejects_unaudited_table():
    table = make_table(10, [[5], [0], [0], [0]], [[3], [3], [3], [3]], [[6], [6], [6], [6]])
    with pytest.raises(AuditError):
        spectrograph_inequality(table)


def test_bound_theorem_on_random_tables():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        k = int(rng.integers(1, 9))
        n = int(rng.integers(1, 1000))
        table = random_count_table(rng, k, n)
        assert audit_features(table).passed
        report = spectrograph_inequality(table)
        assert report.verdicts['spectrograph_bound'] and report.verdicts['residuals']
        assert report.correction >= 0
        assert (report.correction == 0) == (not report.partition.gamma2)
        res1, res2 = channel_residuals(table, report.partition)
        assert report.j_numerator == (sum(res1.values()) + sum(res2.values()) + report.correction_numerator)


def test_algebraic_check_examples():
    assert ch_algebraic_check(1, 1, 1, 1, 1, 1) == (0.0, True, True)
    assert ch_algebraic_check(0, 0, 0, 0, 1, 1) == (0.0, True, True)
    value, lower, upper = ch_algebraic_check(0, 1, 1, 0, 1, 1)
    assert (value, lower, upper) == (-1.0, True, True)


def test_algebraic_check_corners():
    for x_max, y_max in itertools.product((0.0, 1.0), repeat=2):
        for x, xp, y, yp in itertools.product((0.0, x_max), (0.0, x_max), (0.0, y_max), (0.0, y_max)):
            _, lower, upper = ch_algebraic_check(x, xp, y, yp, x_max, y_max)
            assert lower and upper


def test_algebraic_check_random():
    rng = np.random.default_rng(100000)
    size = 100000
    big_x = rng.uniform(0, 10, size)
    big_y = rng.uniform(0, 10, size)
    x, xp = (big_x * rng.random(size) for _ in range(2))
    y, yp = (big_y * rng.random(size) for _ in range(2))
    value, lower, upper = ch_algebraic_check(x, xp, y, yp, big_x, big_y)
    assert value.shape == (size,)
    assert lower.all() and upper.all()


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 100), st.floats(0, 100), st.lists(st.floats(0, 1), min_size=4, max_size=4))
def test_algebraic_check_property(big_x, big_y, fractions):
    x, xp = (big_x * f for f in fractions[:2])
    y, yp = (big_y * f for f in fractions[2:])
    x, xp = min(x, big_x), min(xp, big_x)
    y, yp = min(y, big_y), min(yp, big_y)
    _, lower, upper = ch_algebraic_check(x, xp, y, yp, big_x, big_y)
    assert lower and upper


def test_algebraic_check_errors():
    with pytest.raises(ValueError):
        ch_algebraic_check(2, 0, 0, 0, 1, 1)
    with pytest.raises(ValueError):
        ch_algebraic_check(0, 0, -0.5, 0, 1, 1)
    with pytest.raises(ValueError):
        ch_algebraic_check(0, 0, 0, float('nan'), 1, 1)


def test_max_j_uniform_singles():
    singles_a, singles_b = uniform_singles('uniform:K=4,s=25')
    table, j_max = max_j_under_realism(singles_a, singles_b, 100)
    assert j_max == 1
    assert table.coincidences(ABp).tolist() == [0, 0, 0, 0]
    assert table.coincidences(ApBp).tolist() == [25, 25, 25, 25]
    report = spectrograph_inequality(table)
    assert report.j == 1 and report.correction == 2
    assert report.verdicts['spectrograph_bound'] and not report.verdicts['ch']


def test_max_j_zero_singles():
    zeros = np.zeros((4, 3), dtype=int)
    table, j_max = max_j_under_realism(zeros, zeros, 10)
    assert j_max == 0
    assert spectrograph_inequality(table).passed


def test_max_j_exhaustive_single_channel():
    n = 4
    for s_a, s_b in itertools.product(range(4), repeat=2):
        singles_a = np.full((4, 1), s_a)
        singles_b = np.full((4, 1), s_b)
        best = None
        for counts in itertools.product(range(min(s_a, s_b) + 1), repeat=4):
            value = make_table(n, np.reshape(counts, (4, 1)), singles_a, singles_b)
            j = ch_j_from_counts(value).j
            best = j if best is None else max(best, j)
        assert max_j_under_realism(singles_a, singles_b, n)[1] == best


def test_max_j_lp_agrees_with_greedy():
    rng = np.random.default_rng(9)
    for _ in range(20):
        k = int(rng.integers(1, 6))
        table = random_count_table(rng, k, 300)
        singles_a = [table[p].singles_a for p in PAIRS]
        singles_b = [table[p].singles_b for p in PAIRS]
        greedy_table, greedy = max_j_under_realism(singles_a, singles_b, 300)
        lp_table, lp = max_j_under_realism(singles_a, singles_b, 300, method='lp')
        assert abs(lp - greedy) < 1e-12
        assert audit_features(lp_table).passed and audit_features(greedy_table).passed
        assert greedy >= ch_j_from_counts(table).j


def test_max_j_errors():
    singles = np.full((4, 2), 3)
    with pytest.raises(ValueError):
        max_j_under_realism(singles, singles, 5)
    with pytest.raises(ValueError):
        max_j_under_realism(-singles, singles, 10)
    with pytest.raises(ValueError):
        max_j_under_realism(singles[:3], singles[:3], 10)
    with pytest.raises(ValueError):
        max_j_under_realism(singles, singles, 10, method='simplex')
    with pytest.raises(ValueError):
        uniform_singles('uniform:K=0,s=1')
    with pytest.raises(ValueError):
        uniform_singles('flat:K=2,s=1')


def test_qm_channel_experiment():
    model = make_qm_channel_model(SpectrographConfig(4), ChannelDistribution.uniform(4), STATE.r, QUAD)
    table = run_full(model, QUAD, 1000000, TIMING, seed=2023)
    assert audit_features(table).passed
    report = spectrograph_inequality(table)
    expected = j_value(STATE, QUAD).j
    assert abs(expected - 0.047227) < 1e-6
    assert report.j > 5 * report.sigma
    assert abs(report.j - expected) < 5 * report.sigma
    assert significance(report) > 5
    assert report.correction > 0 and report.partition.gamma2
    assert report.verdicts['spectrograph_bound'] and report.verdicts['residuals']
    assert not report.verdicts['ch']
    # features #1-#3 alone allow the violation and more
    singles_a = [table[p].singles_a for p in PAIRS]
    singles_b = [table[p].singles_b for p in PAIRS]
    assert max_j_under_realism(singles_a, singles_b, table.n_pairs)[1] >= report.j
    gap, sigma = factorization_gap(table, model.weights)
    assert np.any(np.abs(gap[ApBp.index]) > 5 * sigma[ApBp.index])


def test_qm_channel_experiment_is_reproducible(tmp_path):
    model = make_qm_channel_model(SpectrographConfig(4), ChannelDistribution.uniform(4), STATE.r, QUAD)
    files = []
    for name in ('one', 'two'):
        table = run_full(model, QUAD, 1000000, TIMING, seed=2023)
        table.save(str(tmp_path / (name + '-counts.json')))
        spectrograph_inequality(table).save(str(tmp_path / (name + '-report.json')))
        files.append([(tmp_path / (name + suffix)).read_bytes() for suffix in ('-counts.json', '-report.json')])
    assert files[0] == files[1]


def test_factorizable_experiment():
    rng = np.random.default_rng(31)
    model = make_factorizable_model(SpectrographConfig(3), [0.2, 0.3, 0.5],
                                    rng.uniform(0.2, 0.8, (2, 3)), rng.uniform(0.2, 0.8, (2, 3)))
    n = 1000000
    table = run_full(model, QUAD, n, TIMING, seed=77)
    report = spectrograph_inequality(table)
    assert report.j <= 5 * report.sigma
    assert report.verdicts['spectrograph_bound']
    singles_a = [table[p].singles_a for p in PAIRS]
    singles_b = [table[p].singles_b for p in PAIRS]
    assert max_j_under_realism(singles_a, singles_b, n)[1] >= report.j
    gap, sigma = factorization_gap(table, model.weights)
    assert np.all(np.abs(gap) <= 5 * sigma)
    for pair in PAIRS:
        expected = n * model.weights * model.outcome_table(pair)[:, 0]
        spread = np.sqrt(expected)
        assert np.all(np.abs(table.coincidences(pair) - expected) <= 5 * spread)


def test_factorization_gap_zero_weight():
    table = uniform_table(10, [[1, 0]] * 4, [2, 0])
    gap, sigma = factorization_gap(table, [1.0, 0.0])
    assert np.isnan(gap[:, 1]).all()
    np.testing.assert_allclose(gap[:, 0], 0.1 - 0.04)
    with pytest.raises(ValueError):
        factorization_gap(table, [1.0])


def test_significance_without_noise():
    report = spectrograph_inequality(uniform_table(4, [[0]] * 4, [0]))
    assert report.sigma == 0
    assert significance(report) is None
    table = max_j_under_realism(np.full((4, 4), 25), np.full((4, 4), 25), 100)[0]
    report = spectrograph_inequality(table)
    assert report.sigma == 0 and report.j == 1
    assert significance(report) is None


def test_count_table_file(tmp_path):
    table = random_count_table(np.random.default_rng(8), 5, 500)
    path = str(tmp_path / 'counts.json')
    table.save(path)
    with open(path) as fh:
        data = json.load(fh)
    assert set(data) == {'K', 'N', 'AB', 'ABp', 'ApB', 'ApBp'}
    assert set(data['AB']) == {'singles_A', 'singles_B', 'coincidences', 'noise', 'total_A', 'total_B'}
    assert CountTable.from_file(path) == table


def test_count_table_rejects_unknown_fields():
    data = uniform_table(10, [[0]] * 4, [1]).to_dict()
    data['ABp']['dark_counts'] = 3
    with pytest.raises(ValueError):
        CountTable.from_dict(data)
    data = uniform_table(10, [[0]] * 4, [1]).to_dict()
    del data['ApB']
    with pytest.raises(ValueError):
        CountTable.from_dict(data)


def test_count_table_rejects_fractional_counts():
    data = uniform_table(10, [[1]] * 4, [3]).to_dict()
    data['AB']['coincidences'] = [2.0]
    assert CountTable.from_dict(data)[AB].coincidences.tolist() == [2]
    for run, key, value in (('AB', 'coincidences', [2.7]), ('ApB', 'singles_A', [2.5]),
                              ('ABp', 'noise', 0.5), ('ApBp', 'total_B', 3.2)):
        data = uniform_table(10, [[1]] * 4, [3]).to_dict()
        data[run][key] = value
        with pytest.raises(ValueError):
            CountTable.from_dict(data)
    data = uniform_table(10, [[1]] * 4, [3]).to_dict()
    data['N'] = 10.5
    with pytest.raises(ValueError):
        CountTable.from_dict(data)


def test_spectrum(tmp_path):
    table = uniform_table(10, [[1, 2], [0, 1], [2, 2], [1, 0]], [3, 4])
    frame = table.spectrum()
    assert list(frame.columns) == ['pair', 'channel', 'N_A', 'N_B', 'N_AB']
    assert len(frame) == 8
    path = str(tmp_path / 'spectrum.csv')
    table.save_spectrum(path)
    loaded = pd.read_csv(path)
    assert loaded[loaded.pair == 'ApB'].N_AB.tolist() == [2, 2]


def test_report_dict():
    table = uniform_table(100, [[0, 0], [2, 4], [0, 0], [5, 1]], [10, 10])
    data = spectrograph_inequality(table).to_dict()
    for key in ('J', 'terms', 'correction', 'gamma2', 'verdicts', 'residuals'):
        assert key in data
    assert data['gamma2'] == [0]
    assert data['residuals']['gamma2'] == {'0': -10 - 10 + 2 - 5}
    assert set(data['terms']) == {'p_ab', 'p_abp', 'p_apb', 'p_apbp', 'p_b', 'p_a_prime'}


def test_pair_order():
    assert [pair.name for pair in PAIRS] == ['AB', 'ABp', 'ApB', 'ApBp']
    assert SettingPair.ApB.angles(SettingsQuad(1, 2, 3, 4)) == (2, 3)
