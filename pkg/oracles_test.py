import numpy as np
import pytest

from config import reset_config
from errors import CapExceeded, OracleRefusal
from free_group import ReducedWord, enumerate_sphere, letter_counts, sphere_size
from oracles import (RadialChain, WordTrie, _ball_profile, _count_from, ball_dp, conditional_profile,
                     count_words_by_counts, empirical_measure_rate, expected_level_count, free_energy,
                     length_distribution, letter_count_vectors, log_partition_function, partition_function,
                     sphere_count_check)
from perron import rho_star, varrho


def test_return_probability_two_steps(iso2):
    assert abs(length_distribution(iso2, 2).probability(0) - 0.25) < 1e-15


@pytest.mark.parametrize("n", [1, 5, 12])
def test_straight_line_probability(iso2, n):
    assert abs(length_distribution(iso2, n).probability(n) - 0.75 ** (n - 1)) < 1e-14


def test_length_law_parity(iso2, aniso2):
    for mu in (iso2, aniso2):
        law = length_distribution(mu, 7)
        assert np.all(law.probabilities[0::2] == 0.0)
        assert abs(law.probabilities.sum() - 1.0) < 1e-12


def test_lazy_walk_holds(lazy2):
    law = length_distribution(lazy2, 1)
    assert abs(law.probability(0) - 0.2) < 1e-15
    assert abs(law.probability(1) - 0.8) < 1e-15


def test_ball_matches_radial_chain(iso2):
    table = ball_dp(iso2, 8, 8)
    law = length_distribution(iso2, 8)
    np.testing.assert_allclose(table.sphere_marginal(), law.probabilities, atol=1e-14)
    assert abs(table.total - 1.0) < 1e-12


def test_ball_internal_radius_is_enough(iso2):
    table = ball_dp(iso2, 6, 2)
    law = length_distribution(iso2, 6)
    np.testing.assert_allclose(table.sphere_marginal(), law.probabilities[:3], atol=1e-14)


def test_ball_straight_word_probability(aniso2):
    table = ball_dp(aniso2, 3, 3)
    word = ReducedWord.parse(2, "abA")
    assert abs(table.probability(word) - 0.35 * 0.15 * 0.35) < 1e-15
    items = table.sphere_items(3)
    assert len(items) == sphere_size(2, 3)


@pytest.mark.parametrize("n,L", [(4, 4), (6, 4)])
def test_ball_probability_depends_only_on_letter_counts(aniso2, n, L):
    table = ball_dp(aniso2, n, L)
    for m in range(L + 1):
        by_counts = {}
        for word, p in table.sphere_items(m):
            by_counts.setdefault(letter_counts(word).counts, []).append(p)
        for values in by_counts.values():
            assert max(values) - min(values) <= 1e-14


def test_ball_probability_equal_on_relabeled_words(iso2):
    table = ball_dp(iso2, 5, 3)
    # swapping a <-> b is a symmetry of the isotropic law
    for word, p in table.sphere_items(3):
        swapped = ReducedWord(2, tuple(a ^ 2 for a in word.letters))
        assert abs(table.probability(swapped) - p) <= 1e-14


def test_ball_probability_beyond_radius(aniso2):
    table = ball_dp(aniso2, 3, 1)
    with pytest.raises(ValueError):
        table.probability(ReducedWord.parse(2, "ab"))


def test_ball_respects_cap(iso2):
    reset_config(None, {"caps": {"ball": 10}})
    with pytest.raises(CapExceeded):
        ball_dp(iso2, 4, 4)


def test_anisotropic_length_law_mean(aniso2):
    law = length_distribution(aniso2, 10)
    assert 0.0 < law.mean() <= 10.0
    assert law.variance() > 0.0
    assert abs(law.rate(10) + np.log(law.probability(10)) / 10) < 1e-12


def test_word_trie_addresses():
    trie = WordTrie(3, 3)
    assert len(trie) == 1 + 6 + 30 + 150
    word = ReducedWord.parse(3, "aCb")
    x = trie.node(word)
    assert trie.depth[x] == 3
    assert trie.word(x) == word
    assert trie.node(ReducedWord.parse(3, "abcA")) == -1


def test_radial_chain_refuses_anisotropic(aniso2):
    with pytest.raises(OracleRefusal):
        RadialChain(aniso2)


def test_expected_level_count(iso2):
    assert abs(expected_level_count(iso2, 1.1, 4, 4) - 1.1 ** 4 * 0.75 ** 3) < 1e-12
    assert expected_level_count(iso2, 1.1, 4, 3) == 0.0
    assert expected_level_count(iso2, 1.1, 4, 9) == 0.0


@pytest.mark.parametrize("mu_name", ["iso2", "aniso2"])
def test_straight_conditional_profile(request, mu_name):
    mu = request.getfixturevalue(mu_name)
    profile = conditional_profile(mu, 6, 6, deltas=(0.1,))
    np.testing.assert_allclose(profile.matrix, np.eye(7), atol=1e-12)
    assert profile.exceedance[0.1] < 1e-12


def test_conditional_profile_rows_are_laws(aniso2):
    profile = conditional_profile(aniso2, 8, 4, deltas=(0.1, 0.3))
    np.testing.assert_allclose(profile.matrix.sum(axis=1), 1.0, atol=1e-12)
    assert profile.matrix[0, 0] == pytest.approx(1.0)
    assert profile.matrix[8, 4] == pytest.approx(1.0)
    assert profile.exceedance[0.3] <= profile.exceedance[0.1]


def test_conditional_profile_routes_agree(iso2):
    radial = conditional_profile(iso2, 8, 2)
    ball = _ball_profile(iso2, 8, 2, (0.2,))
    np.testing.assert_allclose(radial.matrix, ball.matrix, atol=1e-12)
    assert abs(radial.exceedance[0.2] - ball.exceedance[0.2]) < 1e-12


def test_conditioning_on_null_event(iso2):
    with pytest.raises(ValueError):
        conditional_profile(iso2, 5, 2)


def test_partition_function_counts_sphere():
    for n in (1, 4, 9):
        assert partition_function(np.zeros(4), 1.0, n) == pytest.approx(sphere_size(2, n), rel=1e-13)


def test_partition_function_brute_force(rng):
    lam = rng.normal(size=4)
    expected = sum(np.exp(np.dot(lam, letter_counts(w).counts)) for w in enumerate_sphere(2, 5))
    assert log_partition_function(lam, 1.0, 5) == pytest.approx(np.log(expected), rel=1e-12)


def test_free_energy_converges_to_varrho():
    lam = np.array([0.3, -0.4, 0.8, 0.1])
    assert abs(free_energy(lam, 2000) - varrho(lam)) < 5e-3
    assert abs(free_energy(lam, 2000, beta=0.5) - varrho(0.5 * lam)) < 5e-3


def test_count_words_by_counts():
    assert count_words_by_counts(2, (1, 0, 1, 0)) == 2
    assert count_words_by_counts(2, (1, 1, 0, 0)) == 0
    assert count_words_by_counts(2, (3, 0, 0, 0)) == 1
    assert count_words_by_counts(2, (0, 0, 0, 0)) == 1


@pytest.mark.parametrize("n", [1, 3, 5])
def test_counts_partition_the_sphere(n):
    total, size = sphere_count_check(2, n)
    assert total == size


def test_count_vectors():
    vectors = letter_count_vectors(2, 3)
    assert len(vectors) == 20
    assert all(sum(v) == 3 for v in vectors)


def test_count_cap():
    with pytest.raises(CapExceeded):
        count_words_by_counts(2, (10, 0, 15, 0))


def test_empirical_measure_rate():
    assert empirical_measure_rate(2, (1, 0, 1, 0)) == pytest.approx(0.5 * np.log(6.0))


@pytest.mark.parametrize("counts", [(8, 8, 4, 4), (6, 6, 6, 6), (7, 7, 5, 5)])
def test_empirical_measure_rate_approaches_rho_star(counts):
    n = sum(counts)
    xi = np.array(counts, dtype=float) / n
    assert abs(empirical_measure_rate(2, counts) - rho_star(xi)) <= 4 * np.log(n) / n


def test_count_memo_is_released():
    assert count_words_by_counts(2, (5, 5, 4, 4)) == count_words_by_counts(2, (5, 5, 4, 4))
    assert _count_from.cache_info().currsize == 0
