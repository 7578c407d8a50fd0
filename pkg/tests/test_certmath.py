from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ame.certmath import (
    ActionKind,
    EnsembleConfig,
    adversarial_vote_bound,
    binomial,
    dominating_benign_holds,
    feasibility_table,
    max_certifiable_C,
    max_certifiable_k,
    partial_sample_curve,
    partial_sample_prob_continuous,
    partial_sample_prob_discrete,
)
from ame.errors import ConditionViolatedError, InvalidRangeError


def test_binomial():
    assert binomial(8, 2) == 28
    assert binomial(5, 7) == 0
    for n in range(6):
        assert binomial(n, 0) == 1


def test_binomial_rejects_negative():
    with pytest.raises(InvalidRangeError):
        binomial(-1, 2)


def test_dominating_benign():
    assert dominating_benign_holds(10, 2, 2)
    assert dominating_benign_holds(10, 4, 1)
    assert not dominating_benign_holds(5, 1, 2)


@pytest.mark.parametrize("n, c, k", [
    (10, 1, 4), (10, 2, 2), (10, 3, 1), (10, 4, 1),
    (15, 1, 6), (15, 2, 3), (15, 3, 2),
    (30, 3, 5), (5, 1, 1),
])
def test_max_certifiable_k_table(n, c, k):
    assert max_certifiable_k(n, c) == k


def test_max_certifiable_k_none_when_assumption_breaks():
    assert max_certifiable_k(5, 2) is None


def test_max_certifiable_C():
    assert max_certifiable_C(10, 1) == 4
    assert max_certifiable_C(30, 2) == 8
    for n in range(3, 12):
        assert max_certifiable_C(n, n - 1) == 0


def test_adversarial_vote_bound():
    assert adversarial_vote_bound(9, 2, 2) == 13
    assert adversarial_vote_bound(10, 2, 2) == 15
    assert adversarial_vote_bound(7, 0, 3) == 0


def test_single_message_samples_certify_under_the_assumption():
    for n in range(2, 65):
        for c in range(0, n):
            if 2 * c < n - 1:
                assert dominating_benign_holds(n, c, 1), (n, c)
                assert max_certifiable_k(n, c) >= 1


def test_adversarial_vote_share_grows_with_k():
    for n in range(2, 31):
        for c in range(0, n):
            shares = [Fraction(adversarial_vote_bound(n, c, k), binomial(n - 1, k)) for k in range(1, n - c)]
            assert shares == sorted(shares), (n, c)


@given(n=st.integers(3, 25), data=st.data())
def test_condition_is_downward_closed_in_k(n, data):
    c = data.draw(st.integers(0, (n - 2) // 2))
    k = data.draw(st.integers(1, n - 1))
    if dominating_benign_holds(n, c, k):
        assert all(dominating_benign_holds(n, c, j) for j in range(1, k + 1))


@given(n=st.integers(3, 25), data=st.data())
def test_max_k_satisfies_and_next_fails(n, data):
    c = data.draw(st.integers(0, n - 1))
    k = max_certifiable_k(n, c)
    if k is None:
        return
    assert dominating_benign_holds(n, c, k)
    if k < n - 1:
        assert not dominating_benign_holds(n, c, k + 1)


def test_partial_discrete_examples():
    assert partial_sample_prob_discrete(9, 2, 2, 1, 1, exact=True) == Fraction(15, 28)
    assert partial_sample_prob_discrete(9, 2, 2, 28, 14) == 1.0
    assert partial_sample_prob_discrete(9, 2, 2, 5, 0) == 0.0


def test_partial_continuous_examples():
    assert partial_sample_prob_continuous(9, 2, 2, 1, exact=True) == Fraction(15, 28)
    assert partial_sample_prob_continuous(9, 2, 2, 28, exact=True) == 1
    n1, n2 = binomial(8, 2), binomial(6, 2)
    assert partial_sample_prob_continuous(9, 2, 2, 2, exact=True) == Fraction(binomial(n2, 2), binomial(n1, 2))


def test_partial_continuous_requires_dominating_benign():
    with pytest.raises(ConditionViolatedError):
        partial_sample_prob_continuous(5, 1, 3, 2)


def test_partial_rejects_bad_sample_size():
    with pytest.raises(InvalidRangeError):
        partial_sample_prob_discrete(9, 2, 2, 29, 1)


def test_partial_sample_curve_ends_at_one():
    rows = partial_sample_curve(9, 2, 2)
    assert [r["D"] for r in rows] == list(range(1, 29))
    assert rows[-1]["p_D"] == pytest.approx(1.0)


def test_feasibility_c_vs_k_for_ten_agents():
    rows = feasibility_table("c_vs_k", 10)
    assert [(r["C"], r["k"]) for r in rows] == [(1, 4), (2, 2), (3, 1), (4, 1)]


def test_feasibility_other_layouts():
    n_vs_c = feasibility_table("n_vs_c", n_values=[10, 30], fixed_values=(1, 2))
    assert {"k": 1, "N": 10, "C": 4} in n_vs_c
    assert {"k": 2, "N": 30, "C": 8} in n_vs_c
    n_vs_k = feasibility_table("n_vs_k", n_values=[30], fixed_values=(3,))
    assert n_vs_k == [{"C": 3, "N": 30, "k": 5}]
    with pytest.raises(InvalidRangeError):
        feasibility_table("k_vs_n")


def test_ensemble_config_derived_counts():
    config = EnsembleConfig(10, 2, 2)
    assert (config.n1, config.n2, config.u_adv) == (36, 21, 15)
    assert config.is_full
    assert config.dominating_benign
    partial = config.with_changes(sample_size=5)
    assert not partial.is_full
    assert partial.with_changes(sample_size=None).is_full


def test_ensemble_config_validates():
    with pytest.raises(InvalidRangeError):
        EnsembleConfig(5, 1, 5)
    with pytest.raises(InvalidRangeError):
        EnsembleConfig(5, 1, 2, sample_size=7)
    assert EnsembleConfig(5, 1, 2, action_kind="continuous").action_kind == ActionKind.CONTINUOUS
