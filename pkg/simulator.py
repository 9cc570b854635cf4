#!/usr/bin/env python3
"""
Monte Carlo branching random walks on the free group

A Galton-Watson tree with offspring law p (p_0 = 0, mean r > 1) is grown level
by level; every child moves from its parent's position by an independent
mu-distributed step. Positions are stored as nodes of a group trie, so equal
group elements share one node and distinct-element counts are exact.

Randomness is counter based: level k of replicate j draws from
Philox(SeedSequence(seed, spawn_key=(j, k))), which makes every replicate
independent of how replicates are scheduled across threads. One stream
serves a whole level: offspring counts are drawn first for the parents in
index order, then one step per child in birth order, so there is no
separate stream per parent or per child.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from scipy import optimize
from scipy.stats import binom

from config import get_config
from errors import CapExceeded
from free_group import ReducedWord, StepDistribution

logger = logging.getLogger(__name__)

STATS_COLUMNS = ["replicate", "n", "m", "N", "NF", "max_multiplicity", "population"]
RAY_COLUMNS = ["bin_left", "bin_right", "count"]


def level_stream(seed: int, replicate: int, depth: int) -> np.random.Generator:
    """Generator for one (replicate, depth) cell"""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(replicate, depth))))


class OffspringDistribution:
    """Offspring law p_1..p_K with p_0 = 0 and mean above 1"""

    def __init__(self, weights: Sequence[float], tol: float = 1e-9):
        p = np.asarray(weights, dtype=float)
        if p.ndim != 1 or len(p) == 0:
            raise ValueError("offspring weights must be a nonempty list p_1..p_K")
        if np.any(p < 0):
            raise ValueError(f"offspring weights must be nonnegative: {list(p)}")
        if abs(p.sum() - 1.0) > tol:
            raise ValueError(f"offspring weights sum to {p.sum()!r}, not 1")
        self.weights = p / p.sum()
        self.mean = float(np.dot(np.arange(1, len(p) + 1), self.weights))
        if self.mean <= 1.0:
            raise ValueError(f"offspring mean must exceed 1, got {self.mean!r}")

    @classmethod
    def deterministic(cls, k: int) -> "OffspringDistribution":
        if k < 2:
            raise ValueError(f"deterministic offspring count must be >= 2, got {k}")
        weights = np.zeros(k)
        weights[-1] = 1.0
        return cls(weights)

    @classmethod
    def truncated_geometric(cls, mean: float, k_max: int) -> "OffspringDistribution":
        """p_k proportional to theta^(k-1) on 1..k_max, theta tuned to the requested mean"""
        if not 1.0 < mean < k_max:
            raise ValueError(f"mean {mean} not reachable on 1..{k_max}")
        ks = np.arange(1, k_max + 1)

        def law(theta):
            w = theta ** (ks - 1)
            return w / w.sum()

        def gap(log_theta):
            return float(np.dot(ks, law(np.exp(log_theta)))) - mean

        log_theta = optimize.brentq(gap, -50.0, 50.0, xtol=1e-14)
        return cls(law(np.exp(log_theta)))

    @classmethod
    def binomial(cls, k_max: int, p: float) -> "OffspringDistribution":
        """1 + Binomial(k_max - 1, p)"""
        if k_max < 2 or not 0.0 < p <= 1.0:
            raise ValueError(f"binomial offspring needs k_max >= 2 and 0 < p <= 1, got {k_max}, {p}")
        return cls(binom.pmf(np.arange(k_max), k_max - 1, p))

    @property
    def k_max(self) -> int:
        return len(self.weights)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.choice(self.k_max, size=size, p=self.weights) + 1

    def __repr__(self) -> str:
        return f"OffspringDistribution(mean={self.mean:.6g}, k_max={self.k_max})"


class GroupTrie:
    """Growing trie of reduced words; node 0 is the identity"""

    def __init__(self, rank: int):
        self.rank = rank
        self.size = 2 * rank
        self.parent = np.array([-1], dtype=np.int64)
        self.last = np.array([-1], dtype=np.int64)
        self.depth = np.array([0], dtype=np.int64)
        # sorted child keys node * 2d + letter, with the child node of each key
        self._keys = np.empty(0, dtype=np.int64)
        self._children = np.empty(0, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.parent)

    def step(self, nodes: np.ndarray, letters: np.ndarray) -> np.ndarray:
        """Right-multiply each node by its letter; letter 2d stands for the identity step"""
        result = nodes.copy()
        moving = letters < self.size
        back = moving & (letters == (self.last[nodes] ^ 1))
        result[back] = self.parent[nodes[back]]
        forward = moving & ~back
        if not forward.any():
            return result

        keys = nodes[forward] * self.size + letters[forward]
        unique, inverse = np.unique(keys, return_inverse=True)
        pos = np.searchsorted(self._keys, unique)
        if len(self._keys):
            clipped = np.minimum(pos, len(self._keys) - 1)
            found = (pos < len(self._keys)) & (self._keys[clipped] == unique)
        else:
            clipped = pos
            found = np.zeros(len(unique), dtype=bool)
        ids = np.empty(len(unique), dtype=np.int64)
        ids[found] = self._children[clipped[found]]

        fresh = unique[~found]
        start = len(self.parent)
        new_ids = np.arange(start, start + len(fresh), dtype=np.int64)
        ids[~found] = new_ids
        fresh_parent = fresh // self.size
        self.parent = np.concatenate([self.parent, fresh_parent])
        self.last = np.concatenate([self.last, fresh % self.size])
        self.depth = np.concatenate([self.depth, self.depth[fresh_parent] + 1])

        merged_keys = np.concatenate([self._keys, fresh])
        merged_children = np.concatenate([self._children, new_ids])
        order = np.argsort(merged_keys, kind="mergesort")
        self._keys = merged_keys[order]
        self._children = merged_children[order]

        result[forward] = ids[inverse]
        return result

    def word_letters(self, node: int) -> List[int]:
        letters = []
        while node > 0:
            letters.append(int(self.last[node]))
            node = int(self.parent[node])
        return letters[::-1]


@dataclass
class BrwArena:
    """One realised BRW: per level, each particle's trie node, parent index and step"""
    rank: int
    seed: int
    replicate: int
    trie: GroupTrie = field(repr=False)
    positions: List[np.ndarray] = field(default_factory=list, repr=False)
    parents: List[np.ndarray] = field(default_factory=list, repr=False)
    steps: List[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def depth(self) -> int:
        return len(self.positions) - 1

    @property
    def node_count(self) -> int:
        return int(sum(len(level) for level in self.positions))

    def population(self, n: int) -> int:
        return len(self.positions[n])

    def lengths(self, n: int) -> np.ndarray:
        return self.trie.depth[self.positions[n]]


def run_brw(mu: StepDistribution, offspring: OffspringDistribution, n: int, seed: int,
            replicate: int = 0, node_cap: Optional[int] = None) -> BrwArena:
    if n < 0:
        raise ValueError(f"depth must be nonnegative, got {n}")
    node_cap = int(get_config().get_caps()["nodes"]) if node_cap is None else node_cap
    step_law = np.append(mu.mu, mu.mu_e)
    trie = GroupTrie(mu.rank)
    arena = BrwArena(mu.rank, seed, replicate, trie)
    arena.positions.append(np.zeros(1, dtype=np.int64))
    arena.parents.append(np.full(1, -1, dtype=np.int64))
    arena.steps.append(np.full(1, -1, dtype=np.int64))
    total = 1

    for k in range(1, n + 1):
        rng = level_stream(seed, replicate, k)
        previous = arena.positions[-1]
        counts = offspring.sample(rng, len(previous))
        born = int(counts.sum())
        if total + born > node_cap:
            raise CapExceeded("nodes", total + born, node_cap, partial_depth=k - 1)
        parents = np.repeat(np.arange(len(previous), dtype=np.int64), counts)
        letters = rng.choice(len(step_law), size=born, p=step_law).astype(np.int64)
        arena.positions.append(trie.step(previous[parents], letters))
        arena.parents.append(parents)
        arena.steps.append(letters)
        total += born

    logger.debug(f"run_brw replicate={replicate} depth={n} nodes={total} trie={len(trie)}")
    return arena


@dataclass
class LevelSetStats:
    """N_{n,m}, N^F_{n,m} and max_x N_{n,x} for one replicate"""
    n: int
    replicate: int
    counts: np.ndarray
    distinct: np.ndarray
    max_multiplicity: int

    @property
    def population(self) -> int:
        return int(self.counts.sum())

    def rows(self) -> List[List[int]]:
        return [[self.replicate, self.n, m, int(c), int(f), self.max_multiplicity, self.population]
                for m, (c, f) in enumerate(zip(self.counts, self.distinct))]

    def level_rate(self, m: int) -> float:
        """(1/n) ln N_{n,m}, -inf when the level is empty"""
        c = self.counts[m] if m < len(self.counts) else 0
        return float(np.log(c) / self.n) if c > 0 else -np.inf


def level_stats(arena: BrwArena, n: int) -> LevelSetStats:
    if n > arena.depth:
        raise ValueError(f"arena has depth {arena.depth}, asked for level {n}")
    nodes = arena.positions[n]
    lengths = arena.trie.depth[nodes]
    counts = np.bincount(lengths, minlength=n + 1)
    occupied, multiplicity = np.unique(nodes, return_counts=True)
    distinct = np.bincount(arena.trie.depth[occupied], minlength=n + 1)
    return LevelSetStats(n, arena.replicate, counts, distinct, int(multiplicity.max()))


def max_multiplicity(arena: BrwArena, n: int) -> int:
    _, multiplicity = np.unique(arena.positions[n], return_counts=True)
    return int(multiplicity.max())


def ray_speeds(arena: BrwArena, count: int, seed: int) -> np.ndarray:
    """|V(t_n)|/n along `count` rays, each choosing a uniform child at every level"""
    n = arena.depth
    if n == 0:
        return np.zeros(count)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(arena.replicate,))))
    current = np.zeros(count, dtype=np.int64)
    for k in range(1, n + 1):
        parents = arena.parents[k]
        # children of particle i at level k-1 occupy parents == i, contiguous by construction
        first = np.searchsorted(parents, current, side="left")
        last = np.searchsorted(parents, current, side="right")
        current = first + (rng.random(count) * (last - first)).astype(np.int64)
    return arena.trie.depth[arena.positions[n][current]] / n


def speed_histogram(speeds: np.ndarray, bins: int = 50) -> List[List[float]]:
    counts, edges = np.histogram(speeds, bins=bins, range=(0.0, 1.0))
    return [[float(edges[i]), float(edges[i + 1]), int(counts[i])] for i in range(bins)]


def _walk_paths(mu: StepDistribution, n: int, reps: int, rng: np.random.Generator,
                target: Optional[Sequence[int]] = None, chunk_cells: int = 20_000_000):
    """Simulate reps plain walks of n steps on explicit word stacks

    Returns final lengths, and the first time each walk equals the reduced word `target`
    (n + 1 when it never does) when a target is given.
    """
    step_law = np.append(mu.mu, mu.mu_e)
    size = mu.alphabet.size
    chunk = max(1, chunk_cells // max(n, 1))
    finals = np.empty(reps, dtype=np.int64)
    hits = np.full(reps, n + 1, dtype=np.int64)
    for lo in range(0, reps, chunk):
        hi = min(reps, lo + chunk)
        m = hi - lo
        stack = np.zeros((m, n + 1), dtype=np.int8)
        length = np.zeros(m, dtype=np.int64)
        rows = np.arange(m)
        hit = np.full(m, n + 1, dtype=np.int64)
        for t in range(1, n + 1):
            letters = rng.choice(len(step_law), size=m, p=step_law)
            moving = letters < size
            top = np.where(length > 0, stack[rows, np.maximum(length - 1, 0)], -1)
            back = moving & (length > 0) & (letters == (top ^ 1))
            push = moving & ~back
            length[back] -= 1
            stack[rows[push], length[push]] = letters[push]
            length[push] += 1
            if target is not None:
                now = (length == len(target)) & (hit > n)
                if len(target):
                    now &= np.all(stack[:, :len(target)] == target, axis=1)
                hit[now] = t
        finals[lo:hi] = length
        hits[lo:hi] = hit
    return finals, hits


@dataclass
class LengthSample:
    n: int
    lengths: np.ndarray

    @property
    def mean_speed(self) -> float:
        return float(self.lengths.mean() / self.n)

    @property
    def speed_standard_error(self) -> float:
        return float(self.lengths.std(ddof=1) / self.n / np.sqrt(len(self.lengths)))

    def frequencies(self) -> np.ndarray:
        return np.bincount(self.lengths, minlength=self.n + 1) / len(self.lengths)

    def tail_rate(self, q: float) -> float:
        """-(1/n) ln freq(|Z_n| >= qn)"""
        freq = float(np.mean(self.lengths >= q * self.n))
        return float(-np.log(freq) / self.n) if freq > 0 else np.inf


def rw_sample_lengths(mu: StepDistribution, n: int, reps: int, seed: int) -> LengthSample:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(0,))))
    finals, _ = _walk_paths(mu, n, reps, rng)
    return LengthSample(n, finals)


def first_passage_estimate(mu: StepDistribution, r: float, target: Union[int, ReducedWord], reps: int,
                           horizon: int, seed: int) -> Dict[str, float]:
    """Monte Carlo E[r^T(x); T(x) <= horizon] with its standard error

    `target` is a letter index or a reduced word x; T(x) is the first time the walk sits at x.
    """
    letters = (target,) if isinstance(target, (int, np.integer)) else target.letters
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(1,))))
    _, hits = _walk_paths(mu, horizon, reps, rng, target=np.asarray(letters, dtype=np.int8))
    values = np.where(hits <= horizon, np.power(r, hits.astype(float)), 0.0)
    return {"estimate": float(values.mean()), "stderr": float(values.std(ddof=1) / np.sqrt(reps))}


@dataclass
class ReplicateSummary:
    """Stats of many replicates at one depth, ordered by replicate id"""
    n: int
    stats: List[LevelSetStats]
    config: Dict[str, Any] = field(default_factory=dict)

    def count_matrix(self) -> np.ndarray:
        return np.vstack([s.counts for s in self.stats])

    def mean_counts(self) -> np.ndarray:
        return self.count_matrix().mean(axis=0)

    def standard_errors(self) -> np.ndarray:
        counts = self.count_matrix()
        return counts.std(axis=0, ddof=1) / np.sqrt(len(self.stats))

    def median_level_rate(self, m: int) -> float:
        return float(np.median([s.level_rate(m) for s in self.stats]))

    def median_max_multiplicity_rate(self) -> float:
        return float(np.median([np.log(s.max_multiplicity) / self.n for s in self.stats]))

    def rows(self) -> List[List[int]]:
        out: List[List[int]] = []
        for s in self.stats:
            out.extend(s.rows())
        return out


def run_replicates(mu: StepDistribution, offspring: OffspringDistribution, n: int, replicates: int,
                   seed: int, threads: int = 1) -> ReplicateSummary:
    def one(replicate):
        return level_stats(run_brw(mu, offspring, n, seed, replicate), n)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        stats = list(pool.map(one, range(replicates)))
    logger.info(f"simulated {replicates} replicates to depth {n} (seed {seed}, {threads} threads)")
    return ReplicateSummary(n, stats, {"mu": mu.to_mapping(), "offspring_mean": offspring.mean, "seed": seed})
