#!/usr/bin/env python3
"""
Exact desk-scale oracles for the walk on the free group

- ball_dp: p_n(e, x) for every reduced word of length <= L, by forward recursion on a word trie
- length_distribution: law of |Z_n| (radial birth-death chain for isotropic mu, ball recursion otherwise)
- conditional_profile: law of |Z_k| given |Z_n| = l, and the probability of leaving the straight-line band
- partition_function: sum over the sphere of exp(beta <lam, Xi(x)>) by transfer vectors
- count_words_by_counts: number of reduced words with a given letter-count vector
"""
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import get_config
from errors import CapExceeded, OracleRefusal
from free_group import ReducedWord, StepDistribution, ball_size, inv, sphere_size

logger = logging.getLogger(__name__)

LENGTH_COLUMNS = ["m", "probability", "log_probability"]
BALL_COLUMNS = ["word", "length", "probability"]


# ---------------------------------------------------------------------------
# word trie and ball recursion
# ---------------------------------------------------------------------------

class WordTrie:
    """All reduced words of length <= radius, one node per word

    neighbours[x, a] is the node of the word x*a, or -1 when that word lies outside the ball.
    """

    def __init__(self, rank: int, radius: int):
        self.rank = rank
        self.radius = radius
        size = 2 * rank
        total = ball_size(rank, radius)
        self.depth = np.zeros(total, dtype=np.int32)
        self.last = np.full(total, -1, dtype=np.int32)
        self.parent = np.full(total, -1, dtype=np.int32)
        self.neighbours = np.full((total, size), -1, dtype=np.int32)
        self.level_start = [0]

        letters = np.arange(size, dtype=np.int32)
        frontier = np.array([0], dtype=np.int32)
        next_free = 1
        for k in range(1, radius + 1):
            last = self.last[frontier]
            allowed = letters[None, :] != (last[:, None] ^ 1)
            parents = np.repeat(frontier, allowed.sum(axis=1))
            steps = np.broadcast_to(letters, allowed.shape)[allowed]
            children = np.arange(next_free, next_free + len(parents), dtype=np.int32)
            self.depth[children] = k
            self.last[children] = steps
            self.parent[children] = parents
            self.neighbours[parents, steps] = children
            self.neighbours[children, steps ^ 1] = parents
            self.level_start.append(next_free)
            next_free += len(parents)
            frontier = children
        self.level_start.append(next_free)

    def __len__(self) -> int:
        return len(self.depth)

    def node(self, word: ReducedWord) -> int:
        if word.length > self.radius:
            return -1
        x = 0
        for a in word.letters:
            x = int(self.neighbours[x, a])
        return x

    def word(self, x: int) -> ReducedWord:
        letters = []
        while x > 0:
            letters.append(int(self.last[x]))
            x = int(self.parent[x])
        return ReducedWord(self.rank, tuple(reversed(letters)))

    def sphere(self, m: int) -> range:
        return range(self.level_start[m], self.level_start[m + 1])


def _walk_step(mu: StepDistribution, trie: WordTrie, p: np.ndarray) -> np.ndarray:
    """One step of the walk operator; symmetric mu makes it its own adjoint"""
    padded = np.append(p, 0.0)
    out = mu.mu_e * p
    for a in range(mu.alphabet.size):
        out = out + mu.mu[a] * padded[trie.neighbours[:, a]]
    return out


def _internal_radius(n: int, L: int) -> int:
    # a path that leaves radius K cannot come back to radius L within n steps
    return min(n, (n + L) // 2)


def _check_ball(rank: int, radius: int, copies: int = 1) -> int:
    size = ball_size(rank, radius)
    cap = int(get_config().get_caps()["ball"])
    if size * copies > cap:
        raise CapExceeded("ball", size * copies, cap)
    return size


@dataclass
class BallTable:
    """p_n(e, x) for every |x| <= L, with the mass outside the internal radius"""
    rank: int
    n: int
    L: int
    trie: WordTrie = field(repr=False)
    probabilities: np.ndarray = field(repr=False)
    overflow: float = 0.0

    @property
    def size(self) -> int:
        return self.trie.level_start[self.L + 1]

    @property
    def values(self) -> np.ndarray:
        """Dense vector over the words of length <= L in trie order"""
        return self.probabilities[:self.size]

    @property
    def total(self) -> float:
        return float(self.probabilities.sum() + self.overflow)

    def probability(self, word: ReducedWord) -> float:
        if word.length > self.L:
            raise ValueError(f"|x| = {word.length} exceeds the table radius {self.L}")
        return float(self.probabilities[self.trie.node(word)])

    def sphere_marginal(self) -> np.ndarray:
        """P(|Z_n| = m) for m = 0..L"""
        return np.bincount(self.trie.depth[:self.size], weights=self.values, minlength=self.L + 1)

    def sphere_items(self, m: int) -> List[Tuple[ReducedWord, float]]:
        return [(self.trie.word(x), float(self.probabilities[x])) for x in self.trie.sphere(m)]


def ball_dp(mu: StepDistribution, n: int, L: int) -> BallTable:
    if n < 0 or L < 0 or L > n:
        raise ValueError(f"need 0 <= L <= n, got n={n}, L={L}")
    radius = _internal_radius(n, L)
    size = _check_ball(mu.rank, radius)
    trie = WordTrie(mu.rank, radius)
    p = np.zeros(size)
    p[0] = 1.0
    for _ in range(n):
        p = _walk_step(mu, trie, p)
    overflow = max(0.0, 1.0 - float(p.sum()))
    logger.debug(f"ball_dp n={n} L={L} radius={radius} nodes={size} overflow={overflow:.3e}")
    return BallTable(mu.rank, n, L, trie, p, overflow)


# ---------------------------------------------------------------------------
# length law
# ---------------------------------------------------------------------------

class RadialChain:
    """|Z_n| as a birth-death chain on 0..n, valid for isotropic mu, in log space"""

    def __init__(self, mu: StepDistribution):
        if not mu.is_isotropic:
            raise OracleRefusal("the radial chain is exact only for isotropic mu")
        size = mu.alphabet.size
        move = 1.0 - mu.mu_e
        with np.errstate(divide="ignore"):
            self.log_hold = float(np.log(mu.mu_e))
            self.log_up = float(np.log((size - 1) / size * move))
            self.log_up_origin = float(np.log(move))
            self.log_down = float(np.log(move / size))

    def _up(self, states: int) -> np.ndarray:
        up = np.full(states, self.log_up)
        up[0] = self.log_up_origin
        return up

    def forward(self, log_p: np.ndarray) -> np.ndarray:
        up = self._up(len(log_p))
        out = self.log_hold + log_p
        out[1:] = np.logaddexp(out[1:], up[:-1] + log_p[:-1])
        out[:-1] = np.logaddexp(out[:-1], self.log_down + log_p[1:])
        return out

    def backward(self, log_b: np.ndarray) -> np.ndarray:
        up = self._up(len(log_b))
        out = self.log_hold + log_b
        out[:-1] = np.logaddexp(out[:-1], up[:-1] + log_b[1:])
        out[1:] = np.logaddexp(out[1:], self.log_down + log_b[:-1])
        return out


@dataclass
class LengthDistribution:
    """P(|Z_n| = m) for m = 0..n"""
    n: int
    log_probabilities: np.ndarray

    @property
    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_probabilities)

    def probability(self, m: int) -> float:
        if m < 0 or m > self.n:
            return 0.0
        return float(np.exp(self.log_probabilities[m]))

    def rate(self, m: int) -> float:
        """-(1/n) ln P(|Z_n| = m)"""
        return float(-self.log_probabilities[m] / self.n)

    def mean(self) -> float:
        return float(np.dot(np.arange(self.n + 1), self.probabilities))

    def variance(self) -> float:
        m = np.arange(self.n + 1)
        p = self.probabilities
        return float(np.dot(m * m, p) - np.dot(m, p) ** 2)

    def rows(self) -> List[List[float]]:
        return [[m, float(np.exp(lp)), float(lp)] for m, lp in enumerate(self.log_probabilities)]


def _log(values: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(values)


def length_distribution(mu: StepDistribution, n: int) -> LengthDistribution:
    if n < 0:
        raise ValueError(f"n must be nonnegative, got {n}")
    if mu.is_isotropic:
        chain = RadialChain(mu)
        log_p = np.full(n + 1, -np.inf)
        log_p[0] = 0.0
        for _ in range(n):
            log_p = chain.forward(log_p)
        return LengthDistribution(n, log_p)
    table = ball_dp(mu, n, n)
    return LengthDistribution(n, _log(table.sphere_marginal()))


def expected_level_count(mu: StepDistribution, r: float, n: int, m: int) -> float:
    """E N_{n,m} = r^n P(|Z_n| = m)"""
    law = length_distribution(mu, n)
    if m < 0 or m > n:
        return 0.0
    return float(np.exp(n * np.log(r) + law.log_probabilities[m]))


# ---------------------------------------------------------------------------
# conditional profile
# ---------------------------------------------------------------------------

@dataclass
class ConditionalProfile:
    """Row k holds P(|Z_k| = j | |Z_n| = l) for j = 0..n"""
    n: int
    l: int
    matrix: np.ndarray
    log_endpoint: float
    exceedance: Dict[float, float] = field(default_factory=dict)

    def mean_path(self) -> np.ndarray:
        return self.matrix @ np.arange(self.n + 1)


def _band_mask(k: int, n: int, l: int, delta: float, lengths: np.ndarray) -> np.ndarray:
    return np.abs(lengths - k * l / n) <= delta * n


def _radial_profile(mu: StepDistribution, n: int, l: int,
                    deltas: Sequence[float]) -> ConditionalProfile:
    chain = RadialChain(mu)
    states = n + 1
    backward = np.full((n + 1, states), -np.inf)
    backward[0, l] = 0.0
    for m in range(1, n + 1):
        backward[m] = chain.backward(backward[m - 1])

    log_end = backward[n, 0]
    if not np.isfinite(log_end):
        raise ValueError(f"P(|Z_{n}| = {l}) = 0; cannot condition on it")

    matrix = np.zeros((n + 1, states))
    forward = np.full(states, -np.inf)
    forward[0] = 0.0
    for k in range(n + 1):
        matrix[k] = np.exp(forward + backward[n - k] - log_end)
        if k < n:
            forward = chain.forward(forward)

    lengths = np.arange(states)
    exceedance = {}
    for delta in deltas:
        inside = np.full(states, -np.inf)
        inside[0] = 0.0
        for k in range(1, n + 1):
            inside = chain.forward(inside)
            inside[~_band_mask(k, n, l, delta, lengths)] = -np.inf
        stay = inside[l] - log_end
        exceedance[float(delta)] = float(-np.expm1(min(stay, 0.0)))
    return ConditionalProfile(n, l, matrix, float(log_end), exceedance)


def _ball_profile(mu: StepDistribution, n: int, l: int,
                  deltas: Sequence[float]) -> ConditionalProfile:
    radius = _internal_radius(n, l)
    size = _check_ball(mu.rank, radius, copies=n + 1)
    trie = WordTrie(mu.rank, radius)
    lengths = trie.depth.astype(float)

    backward = np.zeros((n + 1, size))
    backward[0] = trie.depth == l
    for m in range(1, n + 1):
        backward[m] = _walk_step(mu, trie, backward[m - 1])

    endpoint = float(backward[n, 0])
    if endpoint <= 0.0:
        raise ValueError(f"P(|Z_{n}| = {l}) = 0; cannot condition on it")

    matrix = np.zeros((n + 1, n + 1))
    forward = np.zeros(size)
    forward[0] = 1.0
    for k in range(n + 1):
        joint = np.bincount(trie.depth, weights=forward * backward[n - k], minlength=radius + 1)
        width = min(n + 1, len(joint))
        matrix[k, :width] = joint[:width] / endpoint
        if k < n:
            forward = _walk_step(mu, trie, forward)

    exceedance = {}
    for delta in deltas:
        inside = np.zeros(size)
        inside[0] = 1.0
        for k in range(1, n + 1):
            inside = _walk_step(mu, trie, inside)
            inside[~_band_mask(k, n, l, delta, lengths)] = 0.0
        stay = float(inside[trie.depth == l].sum())
        exceedance[float(delta)] = max(0.0, 1.0 - stay / endpoint)
    return ConditionalProfile(n, l, matrix, float(np.log(endpoint)), exceedance)


def conditional_profile(mu: StepDistribution, n: int, l: int,
                        deltas: Sequence[float] = (0.2,)) -> ConditionalProfile:
    if not 0 <= l <= n:
        raise ValueError(f"need 0 <= l <= n, got l={l}, n={n}")
    if mu.is_isotropic:
        profile = _radial_profile(mu, n, l, deltas)
    else:
        profile = _ball_profile(mu, n, l, deltas)
    logger.debug(f"conditional_profile n={n} l={l} exceedance={profile.exceedance}")
    return profile


# ---------------------------------------------------------------------------
# transfer partition function and word counting
# ---------------------------------------------------------------------------

def log_partition_function(lam: Sequence[float], beta: float, n: int) -> float:
    """ln sum_{|x| = n} exp(beta <lam, Xi(x)>), renormalising the transfer vector each step"""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    weights = beta * np.asarray(lam, dtype=float)
    size = len(weights)
    inverse = np.arange(size) ^ 1
    shift = float(weights.max())
    base = np.exp(weights - shift)
    log_scale = shift
    v = base
    for _ in range(n - 1):
        # next[b] = e^{w_b} (sum_a v[a] - v[b^-1])
        v = base * (v.sum() - v[inverse])
        top = float(v.max())
        log_scale += shift + np.log(top)
        v = v / top
    return float(log_scale + np.log(v.sum()))


def partition_function(lam: Sequence[float], beta: float, n: int) -> float:
    return float(np.exp(log_partition_function(lam, beta, n)))


def count_words_by_counts(d: int, counts: Sequence[int]) -> int:
    """Number of reduced words of the free group of rank d with letter counts `counts`"""
    counts = tuple(int(c) for c in counts)
    if len(counts) != 2 * d:
        raise ValueError(f"expected {2 * d} counts, got {len(counts)}")
    if any(c < 0 for c in counts):
        raise ValueError(f"counts must be nonnegative: {counts}")
    total = sum(counts)
    cap = int(get_config().get_caps()["count_total"])
    if total > cap:
        raise CapExceeded("count_total", total, cap)
    try:
        return _count_from(counts, -1)
    finally:
        # per-call memo
        _count_from.cache_clear()


@lru_cache(maxsize=None)
def _count_from(remaining: Tuple[int, ...], last: int) -> int:
    if not any(remaining):
        return 1
    ways = 0
    forbidden = inv(last) if last >= 0 else -1
    for a, c in enumerate(remaining):
        if c == 0 or a == forbidden:
            continue
        nxt = remaining[:a] + (c - 1,) + remaining[a + 1:]
        ways += _count_from(nxt, a)
    return ways


def log_count_words_by_counts(d: int, counts: Sequence[int]) -> float:
    return float(np.log(count_words_by_counts(d, counts)))


def letter_count_vectors(d: int, n: int) -> List[Tuple[int, ...]]:
    """All nonnegative integer vectors of length 2d summing to n"""
    size = 2 * d
    out: List[Tuple[int, ...]] = []

    def extend(prefix, left):
        if len(prefix) == size - 1:
            out.append(tuple(prefix) + (left,))
            return
        for c in range(left + 1):
            extend(prefix + [c], left - c)

    extend([], n)
    return out


def sphere_count_check(d: int, n: int) -> Tuple[int, int]:
    """(sum over count vectors of count_words_by_counts, 2d(2d-1)^(n-1))"""
    total = sum(count_words_by_counts(d, xi) for xi in letter_count_vectors(d, n))
    return total, sphere_size(d, n)


def empirical_measure_rate(d: int, counts: Sequence[int]) -> float:
    """-(1/n) ln P(xi(X_n) = counts/n) for X_n uniform on the sphere"""
    n = sum(counts)
    return float(-(log_count_words_by_counts(d, counts) - np.log(sphere_size(d, n))) / n)


def free_energy(lam: Sequence[float], n: int, beta: float = 1.0) -> float:
    """(1/n) ln Z_{n, beta}(lam)"""
    return log_partition_function(lam, beta, n) / n

