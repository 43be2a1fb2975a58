import numpy as np

from pfedsv.shapley import CoalitionGame


def make_table_game(table, players):
    """Game backed by a frozenset->value lookup table (missing subsets -> 0)."""
    return CoalitionGame(players, lambda subset: table.get(frozenset(subset), 0.0))


def random_game(rng, m):
    """Random game with utilities drawn uniform in [0, 1] for every nonempty subset."""
    players = tuple(range(m))
    table = {}
    # enumerate subsets via bitmasks so the table is complete
    for mask in range(1, 1 << m):
        subset = frozenset(p for j, p in enumerate(players) if mask >> j & 1)
        table[subset] = float(rng.random())
    return make_table_game(table, players)


def permutation_scan_oracle(players, utility):
    """Independent Shapley oracle: literal scan of every join order.

    Kept free of CoalitionGame/caching so it can vouch for the library paths.
    """
    import itertools

    m = len(players)
    totals = {p: 0.0 for p in players}
    count = 0
    for perm in itertools.permutations(players):
        seen = []
        prev = 0.0
        for p in perm:
            seen.append(p)
            cur = float(utility(tuple(seen)))
            totals[p] += cur - prev
            prev = cur
        count += 1
    return np.array([totals[p] / count for p in players])
