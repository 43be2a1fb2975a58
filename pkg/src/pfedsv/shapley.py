"""Coalition games and Shapley values, exact and Monte-Carlo approximated.

A game is a set of players plus a utility function over player subsets. The
empty coalition is worth exactly 0 and the user callback never sees it.
Utilities are memoized per game instance: permutation scans revisit the same
subsets many times and the callback is typically expensive.
"""

import itertools
import math
import threading
from dataclasses import dataclass

import numpy as np

from pfedsv.errors import PlayerLimitExceeded

MAX_PLAYERS_PERMUTATION = 10
MAX_PLAYERS_SUBSET = 16
MAX_PLAYERS_MASK = 63


class CoalitionGame:
    """Player set plus a memoized real-valued utility over subsets.

    `utility` receives a tuple of player identifiers (subset, in player
    order) and must be deterministic. Each distinct subset is computed at
    most once per instance, even under concurrent evaluation.
    """

    def __init__(self, players, utility):
        self.players = tuple(players)
        m = len(self.players)
        if m < 1:
            raise ValueError("a coalition game needs at least one player")
        if m > MAX_PLAYERS_MASK:
            raise PlayerLimitExceeded(f"{m} players exceed the {MAX_PLAYERS_MASK}-bit subset keys")
        if len(set(self.players)) != m:
            raise ValueError("player identifiers must be unique")
        self._utility = utility
        self._cache = {}
        self._lock = threading.Lock()
        self._hits = 0
        self._misses = 0

    @property
    def num_players(self):
        return len(self.players)

    def _members(self, mask):
        return tuple(p for j, p in enumerate(self.players) if mask >> j & 1)

    def utility_of_mask(self, mask):
        """Utility of the subset encoded as a bitmask over the player order."""
        if mask == 0:
            return 0.0
        try:
            value = self._cache[mask]
        except KeyError:
            pass
        else:
            self._hits += 1
            return value
        with self._lock:
            if mask in self._cache:
                self._hits += 1
                return self._cache[mask]
            value = float(self._utility(self._members(mask)))
            self._cache[mask] = value
            self._misses += 1
            return value

    def value(self, subset):
        """Utility of a subset given as an iterable of player identifiers."""
        index = {p: j for j, p in enumerate(self.players)}
        mask = 0
        for p in subset:
            mask |= 1 << index[p]
        return self.utility_of_mask(mask)

    def utility_eval_count(self):
        """Number of distinct subsets whose utility was actually computed."""
        return self._misses

    @property
    def cache_stats(self):
        return {"hits": self._hits, "misses": self._misses}

    def dump_cache_csv(self, path):
        """Debug audit dump of (subset bitmask, utility) pairs."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("bitmask,utility\n")
            for mask in sorted(self._cache):
                fh.write(f"{mask},{self._cache[mask]!r}\n")


@dataclass(frozen=True)
class ShapleyResult:
    """Per-player values plus bookkeeping about how they were obtained."""

    players: tuple
    values: np.ndarray
    method: str  # "exact-permutation" | "exact-subset" | "monte-carlo"
    samples_used: int  # permutation sample count; 0 for exact methods
    utility_evaluations: int  # distinct subset utilities computed for this call

    def as_dict(self):
        return {p: float(v) for p, v in zip(self.players, self.values)}


def exact_shapley_permutation(game: CoalitionGame) -> ShapleyResult:
    """Average marginal contribution over all m! join orders."""
    m = game.num_players
    if m > MAX_PLAYERS_PERMUTATION:
        raise PlayerLimitExceeded(
            f"permutation enumeration capped at {MAX_PLAYERS_PERMUTATION} players, got {m}"
        )
    before = game.utility_eval_count()
    acc = np.zeros(m)
    for perm in itertools.permutations(range(m)):
        mask = 0
        prev = 0.0
        for j in perm:
            mask |= 1 << j
            cur = game.utility_of_mask(mask)
            acc[j] += cur - prev
            prev = cur
    acc /= math.factorial(m)
    return ShapleyResult(
        players=game.players,
        values=acc,
        method="exact-permutation",
        samples_used=0,
        utility_evaluations=game.utility_eval_count() - before,
    )


def exact_shapley_subset(game: CoalitionGame) -> ShapleyResult:
    """Subset-sum form: sum over S not containing i of |S|!(m-|S|-1)!/m! marginals."""
    m = game.num_players
    if m > MAX_PLAYERS_SUBSET:
        raise PlayerLimitExceeded(
            f"subset enumeration capped at {MAX_PLAYERS_SUBSET} players, got {m}"
        )
    before = game.utility_eval_count()
    weight = [
        math.factorial(s) * math.factorial(m - s - 1) / math.factorial(m) for s in range(m)
    ]
    acc = np.zeros(m)
    for i in range(m):
        bit = 1 << i
        others = [j for j in range(m) if j != i]
        for size in range(m):
            w = weight[size]
            for combo in itertools.combinations(others, size):
                mask = 0
                for j in combo:
                    mask |= 1 << j
                acc[i] += w * (game.utility_of_mask(mask | bit) - game.utility_of_mask(mask))
    return ShapleyResult(
        players=game.players,
        values=acc,
        method="exact-subset",
        samples_used=0,
        utility_evaluations=game.utility_eval_count() - before,
    )


def monte_carlo_shapley(game: CoalitionGame, samples: int, rng) -> ShapleyResult:
    """Estimate values from `samples` join orders drawn uniformly with replacement.

    Each sampled permutation is scanned left to right, crediting every player
    its marginal contribution; the estimate is the mean over permutations.
    Deterministic given (rng state, samples, game).
    """
    if samples < 1:
        raise ValueError("sample count must be >= 1")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    m = game.num_players
    before = game.utility_eval_count()
    acc = np.zeros(m)
    for _ in range(samples):
        perm = rng.permutation(m).tolist()
        mask = 0
        prev = 0.0
        for j in perm:
            mask |= 1 << j
            cur = game.utility_of_mask(mask)
            acc[j] += cur - prev
            prev = cur
    acc /= samples
    return ShapleyResult(
        players=game.players,
        values=acc,
        method="monte-carlo",
        samples_used=samples,
        utility_evaluations=game.utility_eval_count() - before,
    )
