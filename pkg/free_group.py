#!/usr/bin/env python3
"""
Free group arithmetic for the multifractal BRW toolkit

Letters of the rank-d alphabet are the integers 0..2d-1; generator i is 2i and
its inverse is 2i+1, so inverse(a) == a ^ 1. Printed words use lowercase for
generators and uppercase for inverses ("aB" is a b^-1).
"""
import itertools
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from errors import CapExceeded, ConfigError

logger = logging.getLogger(__name__)

IDENTITY = -1
DEFAULT_SPHERE_CAP = 5_000_000
_NAMES = "abcdefghijklmnopqrstuvwxyz"


def inv(a: int) -> int:
    """Inverse letter"""
    return a ^ 1


@dataclass(frozen=True)
class Alphabet:
    """Symmetric generating set of the free group of rank d"""
    rank: int

    def __post_init__(self):
        if self.rank < 2:
            raise ValueError(f"rank must be >= 2, got {self.rank}")

    @property
    def size(self) -> int:
        return 2 * self.rank

    @property
    def letters(self) -> range:
        return range(2 * self.rank)

    def inverse_index(self) -> np.ndarray:
        """Array mapping each letter to its inverse"""
        return np.arange(self.size) ^ 1

    def name(self, a: int) -> str:
        base = _NAMES[a >> 1] if self.rank <= len(_NAMES) else f"g{a >> 1}"
        return base if a % 2 == 0 else base.upper()

    def parse_letter(self, ch: str) -> int:
        idx = _NAMES.find(ch.lower())
        if idx < 0 or idx >= self.rank:
            raise ValueError(f"letter {ch!r} not in alphabet of rank {self.rank}")
        return 2 * idx + (1 if ch.isupper() else 0)


@dataclass(frozen=True)
class ReducedWord:
    """Group element as its reduced word"""
    rank: int
    letters: Tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        for prev, cur in zip(self.letters, self.letters[1:]):
            if cur == inv(prev):
                raise ValueError(f"word {self.letters} is not reduced")
        bound = 2 * self.rank
        if any(a < 0 or a >= bound for a in self.letters):
            raise ValueError(f"letters {self.letters} outside alphabet of rank {self.rank}")

    @classmethod
    def empty(cls, rank: int) -> "ReducedWord":
        return cls(rank, ())

    @classmethod
    def parse(cls, rank: int, text: str) -> "ReducedWord":
        """Parse and freely reduce a word such as "abB" (gives "a")"""
        alphabet = Alphabet(rank)
        word = cls.empty(rank)
        for ch in text.strip():
            word = word.step(alphabet.parse_letter(ch))
        return word

    @property
    def length(self) -> int:
        return len(self.letters)

    def __len__(self) -> int:
        return len(self.letters)

    def step(self, a: int) -> "ReducedWord":
        """Right multiplication by one letter (identity step leaves the word alone)"""
        if a == IDENTITY:
            return self
        if self.letters and self.letters[-1] == inv(a):
            return ReducedWord(self.rank, self.letters[:-1])
        return ReducedWord(self.rank, self.letters + (a,))

    def inverse(self) -> "ReducedWord":
        return ReducedWord(self.rank, tuple(inv(a) for a in reversed(self.letters)))

    def __mul__(self, other: "ReducedWord") -> "ReducedWord":
        return multiply(self, other)

    def __str__(self) -> str:
        alphabet = Alphabet(self.rank)
        return "".join(alphabet.name(a) for a in self.letters) or "e"


@dataclass(frozen=True)
class LetterCounts:
    """Occurrence vector of the letters of a word"""
    counts: Tuple[int, ...]

    def __post_init__(self):
        if any(c < 0 for c in self.counts):
            raise ValueError(f"letter counts must be nonnegative: {self.counts}")

    @property
    def total(self) -> int:
        return sum(self.counts)

    def frequencies(self, n: Optional[int] = None) -> np.ndarray:
        """xi(x) = counts/|x|, or xi(n, x) = counts/n when n is given"""
        denom = self.total if n is None else n
        if denom == 0:
            return np.zeros(len(self.counts))
        return np.asarray(self.counts, dtype=float) / denom


def multiply(x: ReducedWord, y: ReducedWord) -> ReducedWord:
    """Reduced concatenation x*y"""
    if x.rank != y.rank:
        raise ValueError(f"rank mismatch: {x.rank} vs {y.rank}")
    stack = list(x.letters)
    for a in y.letters:
        if stack and stack[-1] == inv(a):
            stack.pop()
        else:
            stack.append(a)
    return ReducedWord(x.rank, tuple(stack))


def letter_counts(x: ReducedWord) -> LetterCounts:
    counts = [0] * (2 * x.rank)
    for a in x.letters:
        counts[a] += 1
    return LetterCounts(tuple(counts))


def sphere_size(d: int, m: int) -> int:
    """|F_m| = 2d(2d-1)^(m-1)"""
    if m < 0:
        raise ValueError("radius must be nonnegative")
    if m == 0:
        return 1
    return 2 * d * (2 * d - 1) ** (m - 1)


def ball_size(d: int, m: int) -> int:
    """Number of reduced words of length <= m"""
    return sum(sphere_size(d, k) for k in range(m + 1))


def enumerate_sphere(d: int, m: int, cap: int = DEFAULT_SPHERE_CAP) -> Iterator[ReducedWord]:
    """Yield every reduced word of length m exactly once"""
    size = sphere_size(d, m)
    if size > cap:
        raise CapExceeded("sphere", size, cap)
    logger.debug(f"enumerate_sphere d={d} m={m} size={size}")
    if m == 0:
        yield ReducedWord.empty(d)
        return
    q = 2 * d - 1
    for first in range(2 * d):
        # each later letter is one of the 2d-1 letters that do not cancel the previous one
        for choices in itertools.product(range(q), repeat=m - 1):
            letters = [first]
            for c in choices:
                forbidden = inv(letters[-1])
                letters.append(c if c < forbidden else c + 1)
            yield ReducedWord(d, tuple(letters))


def in_lattice_simplex(xi: Sequence[float], n: int, tol: float = 1e-12) -> bool:
    """True when some reduced word of length n has letter frequencies xi

    A letter and its inverse can only both occur when some third letter separates them.
    """
    xi = np.asarray(xi, dtype=float)
    if np.any(xi < -tol) or abs(xi.sum() - 1.0) > tol:
        return False
    scaled = xi * n
    if np.any(np.abs(scaled - np.round(scaled)) > 1e-9):
        return False
    partner = xi[np.arange(len(xi)) ^ 1]
    both = (xi > tol) & (partner > tol)
    return bool(np.all(~both | (xi + partner < 1.0 - tol)))


class StepDistribution:
    """Symmetric step law mu on the letters plus the identity"""

    def __init__(self, rank: int, mu: Sequence[float], mu_e: float = 0.0, tol: float = 1e-12):
        weights = np.asarray(mu, dtype=float)
        if weights.shape != (2 * rank,):
            raise ConfigError(f"expected {2 * rank} letter weights, got {weights.shape[0]}", "walk.mu")
        if not 0.0 <= mu_e < 1.0:
            raise ConfigError(f"identity weight must lie in [0, 1), got {mu_e}", "walk.mu_e")
        if np.any(weights <= 0.0):
            raise ConfigError("every generator weight must be positive", "walk.mu")
        if np.any(np.abs(weights - weights[np.arange(2 * rank) ^ 1]) > tol):
            raise ConfigError("asymmetric weights: mu(a) must equal mu(a^-1)", "walk.mu")
        total = weights.sum() + mu_e
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"weights sum to {total!r}, not 1", "walk.mu")
        self.alphabet = Alphabet(rank)
        self.rank = rank
        self.mu_e = float(mu_e)
        self.mu = weights.copy()
        self.mu.setflags(write=False)

    @classmethod
    def isotropic(cls, rank: int, mu_e: float = 0.0) -> "StepDistribution":
        return cls(rank, np.full(2 * rank, (1.0 - mu_e) / (2 * rank)), mu_e)

    @classmethod
    def from_generator_weights(cls, rank: int, weights: Sequence[float], mu_e: float = 0.0,
                               normalize: bool = False) -> "StepDistribution":
        """Mirror d generator weights onto their inverses"""
        gen = np.asarray(weights, dtype=float)
        if gen.shape != (rank,):
            raise ConfigError(f"expected {rank} generator weights, got {gen.shape[0]}", "walk.mu")
        if normalize:
            gen = gen * (1.0 - mu_e) / (2.0 * gen.sum())
        return cls(rank, np.repeat(gen, 2), mu_e)

    @classmethod
    def from_mapping(cls, data: Dict[str, Any]) -> "StepDistribution":
        """Build from the `walk` config section: keys rank, mu_e, mu"""
        unknown = set(data) - {"rank", "mu_e", "mu"}
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}", "walk")
        try:
            rank = int(data["rank"])
        except KeyError:
            raise ConfigError("missing rank", "walk.rank")
        if rank < 2:
            raise ConfigError(f"rank must be >= 2, got {rank}", "walk.rank")
        mu_e = float(data.get("mu_e", 0.0))
        mu = data.get("mu")
        if mu is None or len(mu) == 0:
            return cls.isotropic(rank, mu_e)
        if len(mu) == rank:
            return cls.from_generator_weights(rank, mu, mu_e)
        return cls(rank, mu, mu_e)

    @classmethod
    def random_symmetric(cls, rank: int, rng: np.random.Generator, mu_e: float = 0.0,
                         floor: float = 0.05) -> "StepDistribution":
        """Random symmetric law with every generator weight bounded away from zero"""
        raw = floor + rng.random(rank)
        return cls.from_generator_weights(rank, raw, mu_e, normalize=True)

    def with_laziness(self, mu_e: float) -> "StepDistribution":
        """Same generator proportions, identity weight replaced by mu_e"""
        scale = (1.0 - mu_e) / self.mu.sum()
        return StepDistribution(self.rank, self.mu * scale, mu_e)

    def to_mapping(self) -> Dict[str, Any]:
        return {"rank": self.rank, "mu_e": self.mu_e, "mu": [float(w) for w in self.mu[::2]]}

    @property
    def key(self) -> Tuple[Any, ...]:
        """Hashable identity used for solver caches"""
        return (self.rank, round(self.mu_e, 15)) + tuple(round(float(w), 15) for w in self.mu)

    @property
    def log_mu(self) -> np.ndarray:
        return np.log(self.mu)

    @property
    def is_isotropic(self) -> bool:
        return bool(np.allclose(self.mu, self.mu[0], rtol=0.0, atol=1e-14))

    def generator_orbits(self) -> List[List[int]]:
        """Groups of generator indices with equal weight (relabeling symmetries of mu)"""
        orbits: Dict[float, List[int]] = {}
        for i in range(self.rank):
            orbits.setdefault(round(float(self.mu[2 * i]), 14), []).append(i)
        return list(orbits.values())

    def __hash__(self) -> int:
        return hash(self.key)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, StepDistribution) and self.key == other.key

    def __repr__(self) -> str:
        gens = ", ".join(f"{w:.6g}" for w in self.mu[::2])
        return f"StepDistribution(rank={self.rank}, mu_e={self.mu_e:.6g}, mu=[{gens}])"
