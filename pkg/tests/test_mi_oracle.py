import dataclasses
import math

import numpy as np
import pytest

from semisup.contrast.exc import DomainError, EnumerationTooLarge, InvalidJoint
from semisup.contrast.mi_oracle import (
    BoundCase,
    BoundSweep,
    DiscreteJoint,
    critic_matrix,
    critic_value,
    exact_infonce,
    first_failure,
    monte_carlo_infonce,
    mutual_information,
    verify_bound,
)
from semisup.contrast.numerics import Rng


def double_sum_mi(probs):
    """Plain loop reference: sum p log p / (p_r p_s)."""
    probs = np.asarray(probs)
    p_r = [sum(row) for row in probs]
    p_s = [sum(probs[i][j] for i in range(len(probs))) for j in range(len(probs[0]))]
    total = 0.0
    for i, row in enumerate(probs):
        for j, p in enumerate(row):
            if p > 0:
                total += p * math.log(p / (p_r[i] * p_s[j]))
    return total


@pytest.fixture
def rng():
    return Rng(7)


class TestDiscreteJoint:
    def test_prunes_zero_marginals(self):
        j = DiscreteJoint([[0.5, 0.0, 0.0], [0.0, 0.0, 0.5], [0.0, 0.0, 0.0]])
        assert (j.m_r, j.m_s) == (2, 2)
        assert np.all(j.p_r > 0) and np.all(j.p_s > 0)

    @pytest.mark.parametrize(
        "table",
        [
            [[0.5, 0.4]],
            [[1.2, -0.2]],
            [[np.nan, 1.0]],
            [0.5, 0.5],
            np.zeros((0, 0)),
        ],
    )
    def test_invalid_tables(self, table):
        with pytest.raises(InvalidJoint):
            DiscreteJoint(table)

    def test_table_is_read_only(self):
        j = DiscreteJoint.diagonal_uniform(2)
        with pytest.raises(ValueError):
            j.probs[0, 0] = 1.0


class TestMutualInformation:
    def test_independent_is_zero(self):
        j = DiscreteJoint.independent([0.2, 0.8], [0.5, 0.25, 0.25])
        assert mutual_information(j) == pytest.approx(0.0, abs=1e-12)

    def test_diagonal_uniform(self):
        assert mutual_information(DiscreteJoint.diagonal_uniform(4)) == pytest.approx(
            math.log(4), abs=1e-12
        )

    def test_matches_double_sum(self, rng):
        for trial in range(10):
            j = DiscreteJoint.random(rng.derive(trial), 4, 3)
            assert mutual_information(j) == pytest.approx(double_sum_mi(j.probs), abs=1e-12)

    def test_bounded_by_entropies(self, rng):
        for trial in range(20):
            j = DiscreteJoint.random(rng.derive(trial), 5, 3, concentration=0.3)
            mi = mutual_information(j)
            assert -1e-12 <= mi <= min(j.entropies()) + 1e-12

    def test_symmetric(self, rng):
        j = DiscreteJoint.random(rng, 3, 5)
        assert mutual_information(j.transpose()) == pytest.approx(
            mutual_information(j), abs=1e-12
        )


class TestCritic:
    def test_independent_is_k(self):
        j = DiscreteJoint.independent([0.3, 0.7], [0.6, 0.4])
        assert np.allclose(critic_matrix(j, 2.5), 2.5, atol=1e-12)

    def test_diagonal_pair(self):
        assert critic_value(DiscreteJoint.diagonal_uniform(2), 1, 1) == pytest.approx(2.0)

    def test_expectation_over_marginal_is_k(self, rng):
        j = DiscreteJoint.random(rng, 4, 4)
        f = critic_matrix(j, 3.0)
        assert np.allclose(f @ j.p_s, 3.0, atol=1e-12)

    def test_bad_k(self):
        with pytest.raises(DomainError):
            critic_matrix(DiscreteJoint.diagonal_uniform(2), 0.0)

    def test_bad_index(self):
        with pytest.raises(IndexError):
            critic_value(DiscreteJoint.diagonal_uniform(2), 2, 0)


class TestExactInfoNCE:
    @pytest.mark.parametrize("n", [2, 3, 5])
    def test_independent_is_log_n(self, n):
        j = DiscreteJoint.independent([0.1, 0.9], [0.5, 0.3, 0.2])
        assert exact_infonce(j, n) == pytest.approx(math.log(n), abs=1e-12)

    def test_diagonal_uniform_two(self):
        # Negative matches the anchor with probability 1/2 (ratio 2/4), else ratio 2/2.
        expected = 0.5 * math.log(2.0)
        assert exact_infonce(DiscreteJoint.diagonal_uniform(2), 2) == pytest.approx(
            expected, abs=1e-12
        )

    def test_range(self, rng):
        for trial in range(10):
            n = 2 + trial % 3
            value = exact_infonce(DiscreteJoint.random(rng.derive(trial), 3, 4), n)
            assert -1e-12 <= value <= math.log(n) + 1e-12

    def test_invariant_to_k(self, rng):
        j = DiscreteJoint.random(rng, 3, 3)
        base = exact_infonce(j, 3, k=1.0)
        for k in (0.1, 10.0):
            assert exact_infonce(j, 3, k=k) == pytest.approx(base, abs=1e-12)

    def test_matches_monte_carlo(self):
        j = DiscreteJoint.diagonal_uniform(2)
        mean, stderr = monte_carlo_infonce(j, 2, samples=10**6, rng=Rng(3))
        assert abs(mean - exact_infonce(j, 2)) <= 3 * stderr

    def test_enumeration_guard(self):
        j = DiscreteJoint.diagonal_uniform(10)
        with pytest.raises(EnumerationTooLarge) as err:
            exact_infonce(j, 9)
        assert err.value.terms == 10**8
        assert "monte_carlo_infonce" in str(err.value)

    def test_needs_two_samples(self):
        with pytest.raises(DomainError):
            exact_infonce(DiscreteJoint.diagonal_uniform(2), 1)


class TestVerifyBound:
    def test_independent_is_tight(self):
        report = verify_bound(DiscreteJoint.independent([0.5, 0.5], [0.25, 0.75]), 3)
        assert report.passed
        assert abs(report.gap) <= 1e-12

    def test_diagonal_uniform(self):
        report = verify_bound(DiscreteJoint.diagonal_uniform(8), 4)
        assert report.mi == pytest.approx(math.log(8))
        assert report.lhs >= 0
        assert report.gap > 0
        assert report.approx_constant == pytest.approx(math.log(3))

    def test_sweep(self):
        cases = list(BoundSweep(joints=200, max_outcomes=5, max_n=4, seed=0).run())
        assert len(cases) == 200
        assert first_failure(cases) is None
        assert min(c.report.gap for c in cases) >= -1e-9
        for index, case in enumerate(cases):
            assert case.m_r <= 5 and case.m_s <= 5 and 2 <= case.n <= 4
            if index % 5 == 4:
                assert abs(case.report.gap) <= 1e-12

    def test_sweep_is_reproducible(self):
        first = [c.report.gap for c in BoundSweep(joints=10, seed=4).run()]
        second = [c.report.gap for c in BoundSweep(joints=10, seed=4).run()]
        assert first == second

    def test_first_failure(self):
        report = verify_bound(DiscreteJoint.diagonal_uniform(2), 2)
        bad = BoundCase(1, 2, 2, 2, dataclasses.replace(report, passed=False))
        good = BoundCase(0, 2, 2, 2, report)
        assert first_failure([good, bad]) is bad

    def test_csv_row(self):
        case = BoundCase(5, 2, 2, 2, verify_bound(DiscreteJoint.diagonal_uniform(2), 2))
        row = case.csv_row()
        assert len(row) == len(BoundCase.CSV_HEADER)
        assert row[0] == 5
        assert row[-1] == "true"
