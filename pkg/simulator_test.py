import numpy as np
import pytest

from errors import CapExceeded
from first_passage import f_word
from free_group import ReducedWord
from simulator import (GroupTrie, OffspringDistribution, first_passage_estimate, level_stats, level_stream,
                       max_multiplicity, ray_speeds, run_brw, run_replicates, rw_sample_lengths,
                       speed_histogram)


@pytest.fixture
def binary():
    return OffspringDistribution.deterministic(2)


def test_first_generation(iso2, binary):
    arena = run_brw(iso2, binary, 1, seed=7)
    assert arena.population(1) == 2
    np.testing.assert_array_equal(arena.lengths(1), [1, 1])
    assert arena.node_count == 3


def test_deterministic_population(iso2, binary):
    arena = run_brw(iso2, binary, 10, seed=7)
    assert [arena.population(k) for k in range(11)] == [2 ** k for k in range(11)]


def test_level_stats_invariants(aniso2):
    offspring = OffspringDistribution.truncated_geometric(1.8, 12)
    arena = run_brw(aniso2, offspring, 12, seed=11)
    stats = level_stats(arena, 12)
    assert stats.population == arena.population(12)
    assert np.all(stats.distinct <= stats.counts)
    assert np.all(stats.counts[1::2] == 0)
    assert stats.max_multiplicity == max_multiplicity(arena, 12)
    assert stats.max_multiplicity >= 1
    assert len(stats.rows()) == 13


def test_lazy_walk_fills_every_parity(lazy2, binary):
    stats = level_stats(run_brw(lazy2, binary, 9, seed=3), 9)
    assert stats.counts[0::2].sum() > 0 and stats.counts[1::2].sum() > 0


def test_level_rate(iso2, binary):
    stats = level_stats(run_brw(iso2, binary, 8, seed=5), 8)
    assert stats.level_rate(7) == -np.inf
    m = int(np.argmax(stats.counts))
    assert stats.level_rate(m) == pytest.approx(np.log(stats.counts[m]) / 8)


def test_same_seed_same_tree(aniso2, binary):
    a = run_brw(aniso2, binary, 8, seed=99, replicate=4)
    b = run_brw(aniso2, binary, 8, seed=99, replicate=4)
    np.testing.assert_array_equal(a.lengths(8), b.lengths(8))
    c = run_brw(aniso2, binary, 8, seed=99, replicate=5)
    assert not np.array_equal(a.steps[8], c.steps[8])


def test_replicates_do_not_depend_on_threads(iso2):
    offspring = OffspringDistribution.binomial(4, 0.5)
    one = run_replicates(iso2, offspring, 8, 12, seed=2024, threads=1)
    many = run_replicates(iso2, offspring, 8, 12, seed=2024, threads=4)
    np.testing.assert_array_equal(one.count_matrix(), many.count_matrix())
    assert one.rows() == many.rows()


def test_replicate_summary(iso2, binary):
    summary = run_replicates(iso2, binary, 6, 10, seed=1)
    assert summary.count_matrix().shape == (10, 7)
    np.testing.assert_allclose(summary.mean_counts().sum(), 64.0)
    assert np.all(summary.standard_errors() >= 0)
    assert summary.median_max_multiplicity_rate() >= 0


def test_level_streams_are_distinct():
    a = level_stream(5, 0, 1).random(4)
    b = level_stream(5, 0, 2).random(4)
    c = level_stream(5, 1, 1).random(4)
    assert not np.array_equal(a, b) and not np.array_equal(a, c)
    np.testing.assert_array_equal(a, level_stream(5, 0, 1).random(4))


def test_level_draws_come_from_one_stream(aniso2):
    offspring = OffspringDistribution.binomial(4, 0.5)
    arena = run_brw(aniso2, offspring, 5, seed=31, replicate=2)
    step_law = np.append(aniso2.mu, aniso2.mu_e)
    for k in range(1, 6):
        rng = level_stream(31, 2, k)
        counts = offspring.sample(rng, arena.population(k - 1))
        letters = rng.choice(len(step_law), size=int(counts.sum()), p=step_law)
        np.testing.assert_array_equal(arena.parents[k], np.repeat(np.arange(len(counts)), counts))
        np.testing.assert_array_equal(arena.steps[k], letters)


def test_mean_population_grows_like_offspring_mean(iso2):
    offspring = OffspringDistribution.truncated_geometric(1.8, 12)
    summary = run_replicates(iso2, offspring, 8, 400, seed=17)
    populations = np.array([s.population for s in summary.stats], dtype=float)
    stderr = populations.std(ddof=1) / np.sqrt(len(populations))
    assert abs(populations.mean() - offspring.mean ** 8) < 4 * stderr


def test_node_cap(iso2, binary):
    with pytest.raises(CapExceeded) as info:
        run_brw(iso2, binary, 12, seed=1, node_cap=100)
    # levels 0..5 hold 63 particles; level 6 would bring 127
    assert info.value.partial_depth == 5


def test_group_trie_merges_equal_words():
    trie = GroupTrie(2)
    start = np.zeros(3, dtype=np.int64)
    once = trie.step(start, np.array([0, 0, 2]))
    assert once[0] == once[1] != once[2]
    back = trie.step(once, np.array([1, 1, 4]))
    np.testing.assert_array_equal(back, [0, 0, once[2]])
    again = trie.step(np.zeros(1, dtype=np.int64), np.array([0]))
    assert again[0] == once[0]
    assert trie.word_letters(int(trie.step(once[2:], np.array([0]))[0])) == [2, 0]


def test_offspring_laws():
    assert OffspringDistribution.deterministic(3).mean == 3.0
    assert OffspringDistribution.truncated_geometric(1.8, 12).mean == pytest.approx(1.8, abs=1e-10)
    assert OffspringDistribution.binomial(5, 0.5).mean == pytest.approx(3.0)
    assert OffspringDistribution([0.5, 0.5]).k_max == 2


@pytest.mark.parametrize("weights", [[1.0], [0.5, 0.6], [-0.1, 1.1], []])
def test_offspring_validation(weights):
    with pytest.raises(ValueError):
        OffspringDistribution(weights)


def test_offspring_constructor_limits():
    with pytest.raises(ValueError):
        OffspringDistribution.deterministic(1)
    with pytest.raises(ValueError):
        OffspringDistribution.truncated_geometric(12.0, 12)
    with pytest.raises(ValueError):
        OffspringDistribution.binomial(1, 0.5)


def test_offspring_sample(rng):
    law = OffspringDistribution([0.25, 0.25, 0.5])
    draws = law.sample(rng, 20000)
    assert draws.min() >= 1 and draws.max() <= 3
    assert abs(draws.mean() - law.mean) < 0.03


def test_ray_speeds(iso2, binary):
    arena = run_brw(iso2, binary, 10, seed=8)
    speeds = ray_speeds(arena, 500, seed=8)
    assert speeds.shape == (500,)
    assert np.all((speeds >= 0) & (speeds <= 1))
    histogram = speed_histogram(speeds, bins=10)
    assert sum(row[2] for row in histogram) == 500


def test_walk_speed_matches_escape_rate(iso2):
    sample = rw_sample_lengths(iso2, 200, 4000, seed=3)
    assert abs(sample.mean_speed - 0.5) < 0.02
    assert sample.speed_standard_error < 0.005
    assert sample.frequencies().sum() == pytest.approx(1.0)


def test_first_passage_monte_carlo(iso2):
    estimate = first_passage_estimate(iso2, 1.0, 0, 4000, 200, seed=4)
    assert abs(estimate["estimate"] - 1 / 3) < 5 * estimate["stderr"] + 0.01


@pytest.mark.parametrize("r", [1.0, 0.8])
def test_first_passage_monte_carlo_two_letters(iso2, r):
    word = ReducedWord.parse(2, "ab")
    estimate = first_passage_estimate(iso2, r, word, 4000, 200, seed=5)
    exact = f_word(iso2, r, word)
    if r == 1.0:
        assert exact == pytest.approx(1 / 9, abs=1e-12)
    assert abs(estimate["estimate"] - exact) < 5 * estimate["stderr"] + 0.01
