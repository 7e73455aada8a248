"""Cooperative games over subjects or instances and their Shapley-type values.

A :class:`Game` wraps a payoff ``coalition -> loss`` with a memo keyed by the
coalition bitmask, so each distinct coalition is evaluated once no matter how
many estimators or players ask for it.
"""

import itertools
import math
import threading
from dataclasses import dataclass

import numpy as np

from psgt._random import generator

__all__ = [
    "CapacityError",
    "Game",
    "ShapleyVector",
    "CoalitionFamily",
    "EXACT_MAX_PLAYERS",
    "EXHAUSTIVE_MAX_PLAYERS",
    "BRUTE_FORCE_MAX_PLAYERS",
    "exact_shapley",
    "brute_force_shapley",
    "squash",
    "normalize_weights",
    "build_family",
    "simplified_shapley",
]

EXACT_MAX_PLAYERS = 20
EXHAUSTIVE_MAX_PLAYERS = 14
BRUTE_FORCE_MAX_PLAYERS = 10


class CapacityError(ValueError):
    """Player count exceeds what an enumeration is allowed to visit."""


def _mask(coalition):
    m = 0
    for p in coalition:
        m |= 1 << int(p)
    return m


class Game:
    """Memoized cooperative game.

    Parameters
    ----------
    n_players : int
        Players are ``0 .. n_players - 1``.
    payoff : callable
        Maps a sorted tuple of player indices to a real loss. Must be pure.
    """

    def __init__(self, n_players, payoff):
        if int(n_players) < 1:
            raise ValueError(f"a game needs at least one player, got {n_players}")
        self.n_players = int(n_players)
        self.payoff = payoff
        self.memo = {}
        self._lock = threading.Lock()

    @property
    def n_evaluations(self):
        return len(self.memo)

    def value_of_mask(self, mask):
        with self._lock:
            if mask in self.memo:
                return self.memo[mask]
            coalition = tuple(i for i in range(self.n_players) if mask >> i & 1)
            value = float(self.payoff(coalition))
            if not math.isfinite(value):
                raise FloatingPointError(
                    f"payoff of coalition {coalition} is not finite: {value}")
            self.memo[mask] = value
            return value

    def __call__(self, coalition):
        return self.value_of_mask(_mask(coalition))


def exact_shapley(game):
    """Shapley values by enumerating all ``2^n`` coalitions.

    Each coalition is evaluated once (ascending bitmask order); the marginal
    sums are reduced in that same order for bit-reproducible output.
    """
    n = game.n_players
    if n > EXACT_MAX_PLAYERS:
        raise CapacityError(
            f"exact Shapley enumerates 2^n coalitions; n={n} exceeds {EXACT_MAX_PLAYERS}")
    masks = np.arange(1 << n, dtype=np.int64)
    values = np.array([game.value_of_mask(int(m)) for m in masks])
    sizes = np.zeros(1 << n, dtype=np.int64)
    for i in range(n):
        sizes += (masks >> i) & 1
    weight = np.array([math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n)
                       if s < n else 0.0 for s in range(n + 1)])
    phi = np.empty(n)
    for i in range(n):
        without = masks[(masks >> i) & 1 == 0]
        marginal = values[without | (1 << i)] - values[without]
        phi[i] = float(np.sum(weight[sizes[without]] * marginal))
    return phi


def brute_force_shapley(game):
    """Average marginal contribution over all ``n!`` orderings (test oracle)."""
    n = game.n_players
    if n > BRUTE_FORCE_MAX_PLAYERS:
        raise CapacityError(
            f"permutation oracle visits n! orderings; n={n} exceeds {BRUTE_FORCE_MAX_PLAYERS}")
    totals = [0.0] * n
    count = 0
    for order in itertools.permutations(range(n)):
        mask = 0
        before = game.value_of_mask(0)
        for p in order:
            mask |= 1 << p
            after = game.value_of_mask(mask)
            totals[p] += after - before
            before = after
        count += 1
    return np.array([t / count for t in totals])


def squash(phi):
    """``1 - sigmoid(phi)``: maps any real to (0, 1), reversing the order.

    Accepts scalars or arrays and never overflows.
    """
    scalar = np.ndim(phi) == 0
    x = np.atleast_1d(np.asarray(phi, dtype=np.float64))
    out = np.empty_like(x)
    pos = x >= 0
    e = np.exp(-x[pos])
    out[pos] = e / (1.0 + e)
    out[~pos] = 1.0 / (1.0 + np.exp(x[~pos]))
    return float(out[0]) if scalar else out


def normalize_weights(phi_pos):
    phi_pos = np.asarray(phi_pos, dtype=np.float64)
    if phi_pos.size == 0:
        raise ValueError("normalize_weights needs at least one value")
    if not np.all(phi_pos > 0):
        raise ValueError("normalize_weights requires strictly positive inputs")
    return phi_pos / phi_pos.sum()


@dataclass(frozen=True, eq=False)
class ShapleyVector:
    phi: np.ndarray
    phi_pos: np.ndarray
    psi: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, ShapleyVector):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in
                   ((self.phi, other.phi), (self.phi_pos, other.phi_pos), (self.psi, other.psi)))

    __hash__ = None

    @classmethod
    def from_phi(cls, phi):
        phi = np.asarray(phi, dtype=np.float64)
        phi_pos = np.atleast_1d(squash(phi))
        return cls(phi, phi_pos, normalize_weights(phi_pos))


@dataclass(frozen=True)
class CoalitionFamily:
    n_players: int
    coalitions: tuple
    generation: str
    seed: int | None = None

    def __len__(self):
        return len(self.coalitions)


def build_family(m, policy="exhaustive", count=256, seed=0):
    """Coalitions over ``m`` players on which instance values are estimated.

    ``policy="exhaustive"`` lists all ``2^m`` subsets (``m <= 14``).
    ``policy="sampled"`` draws ``count`` coalitions: a size uniform on
    ``0..m``, then a uniform subset of that size. Duplicates are kept.
    """
    m = int(m)
    if m < 1:
        raise ValueError(f"a family needs at least one player, got m={m}")
    if policy == "exhaustive":
        if m > EXHAUSTIVE_MAX_PLAYERS:
            raise CapacityError(
                f"exhaustive family has 2^m members; m={m} exceeds {EXHAUSTIVE_MAX_PLAYERS}")
        coalitions = tuple(tuple(i for i in range(m) if mask >> i & 1)
                           for mask in range(1 << m))
        return CoalitionFamily(m, coalitions, "exhaustive")
    if policy == "sampled":
        if int(count) < 1:
            raise ValueError(f"count must be >= 1, got {count}")
        rng = generator(seed, "family", m)
        coalitions = []
        for _ in range(int(count)):
            size = int(rng.integers(0, m + 1))
            members = rng.choice(m, size=size, replace=False)
            coalitions.append(tuple(sorted(int(p) for p in members)))
        return CoalitionFamily(m, tuple(coalitions), "sampled", int(seed))
    raise ValueError(f"unknown family policy {policy!r}")


def simplified_shapley(game, family):
    """Coalition-sum attribution of each player.

    For player ``j`` this is the mean, over family coalitions ``C`` that
    contain ``j``, of ``game(C) / |C|``. On the exhaustive family that is the
    full sum ``sum_{S not containing j} game(S + j) / (|S| + 1)`` divided by
    ``2^(m-1)``, so order and sign are unchanged.

    Players absent from every coalition get ``nan``.
    """
    if len(family) == 0:
        raise ValueError("coalition family is empty")
    if family.n_players != game.n_players:
        raise ValueError(
            f"family has {family.n_players} players, game has {game.n_players}")
    total = np.zeros(game.n_players)
    hits = np.zeros(game.n_players, dtype=np.int64)
    for coalition in family.coalitions:
        if not coalition:
            continue
        share = game(coalition) / len(coalition)
        for p in coalition:
            total[p] += share
            hits[p] += 1
    phi = np.full(game.n_players, np.nan)
    covered = hits > 0
    phi[covered] = total[covered] / hits[covered]
    return phi
