"""
test_stats.py - Wilcoxon符号秩检验
"""

import numpy as np
import pytest
from scipy import stats as sps

from lfbnet.evaluation import compare_paired, wilcoxon_signed_rank
from lfbnet.utils.errors import ShapeError


def test_all_positive_differences():
    a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
    b = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0]
    result = wilcoxon_signed_rank(a, b)
    assert result.method == "exact"
    assert result.statistic == 0.0
    assert result.p_value == pytest.approx(0.03125)
    assert result.significant()


def test_all_zero_differences_are_insufficient():
    result = wilcoxon_signed_rank([0.5] * 8, [0.5] * 8)
    assert result.insufficient
    assert result.p_value is None and result.n == 0


def test_fewer_than_five_nonzero_is_insufficient():
    result = wilcoxon_signed_rank([1, 2, 3, 4, 5, 6], [0, 1, 2, 3, 5, 6])
    assert result.n == 4 and result.insufficient
    assert not result.significant()


def test_antithetic_pairs_give_p_one():
    d = np.array([1.0, -1.0, 2.0, -2.0, 3.0, -3.0])
    result = wilcoxon_signed_rank(d, np.zeros_like(d))
    assert result.p_value == pytest.approx(1.0)
    assert result.mean_difference == 0.0


def test_identical_groups_report_p_one():
    values = [0.8, 0.7, 0.9, 0.85, 0.75, 0.6]
    result = compare_paired(values, values)
    assert result.method == "identical" and result.p_value == 1.0


def test_exact_p_matches_scipy(rng):
    for n in (6, 9, 12):
        d = rng.permutation(np.arange(1, n + 1)) * rng.choice([-1.0, 1.0], size=n) + rng.random(n) * 0.1
        result = wilcoxon_signed_rank(d, np.zeros(n))
        reference = sps.wilcoxon(d, method="exact")
        assert result.statistic == pytest.approx(reference.statistic)
        assert result.p_value == pytest.approx(reference.pvalue, rel=1e-9)


def test_normal_approximation_for_large_samples(rng):
    a = rng.normal(loc=0.3, size=40)
    b = rng.normal(size=40)
    result = wilcoxon_signed_rank(a, b)
    assert result.method == "normal" and result.n == 40
    assert 0.0 <= result.p_value <= 1.0
    assert result.statistic <= 40 * 41 / 4


def test_rejects_unequal_lengths():
    with pytest.raises(ShapeError):
        wilcoxon_signed_rank([1, 2, 3], [1, 2])
