"""Closed-form collision and migration-round formulas.

These mirror what the simulator measures, so runs can be cross-checked
against expectations: the birthday probability of two same-signature SYNs
inside one delta window, the chance a signature is migrated during its
lifetime, and the expected geometry of the iterative migration rounds.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError, NoConvergence


def birthday_collision_prob(n: float, d: float, exact: bool = False) -> float:
    """Probability that n draws from d values contain at least one repeat.

    ``exact`` evaluates the full product in log space (safe up to n ~ 1e7);
    otherwise the 1 - exp(-n^2 / 2d) approximation is used.
    """
    if d <= 0:
        raise DomainError("d must be positive")
    if n < 0 or n > d:
        raise DomainError("need 0 <= n <= d")
    if n < 2:
        return 0.0
    if not exact:
        return -math.expm1(-(n * n) / (2.0 * d))
    k = np.arange(1, int(n), dtype=np.float64)
    log_no_collision = np.log1p(-k / d).sum()
    return float(-math.expm1(log_no_collision))


def time_between_collisions(n: float, d: float, delta: float = 1.0) -> float:
    """Expected spacing of same-signature coincidences, in delta windows.

    Each delta window is one Bernoulli trial with success probability
    p(n; d).  The conventional quote normalizes the window to one unit, so
    the default ``delta=1`` reproduces the headline "seconds" figure; pass
    the real window length to get wall-clock spacing instead.
    """
    p = birthday_collision_prob(n, d)
    if p <= 0.0:
        return math.inf
    return delta / p


def migration_prob(m: float, s: int) -> float:
    """Probability a signature's bin is rewritten at least once in m updates.

    Each update touches one of ``s`` DIPs uniformly at random.
    """
    if s < 1:
        raise DomainError("s must be >= 1")
    if m < 0:
        raise DomainError("m must be >= 0")
    return -math.expm1(m * math.log1p(-1.0 / s))


def expected_broken_connection_hours(n: float, d: float, m: float, s: int) -> float:
    """Expected hours until a collision coincides with a migration."""
    t_collision = time_between_collisions(n, d)
    p_mig = migration_prob(m, s)
    if p_mig <= 0.0:
        return math.inf
    return t_collision / p_mig / 3600.0


def expected_rounds_and_times(
    c1: float, rho: float, delta: float
) -> tuple[int, list[float], list[float]]:
    """Expected migration-round geometry for an initial bin occupancy.

    Returns (rounds, [T_1..T_rounds], [C_1..C_{rounds+1}]) where round i
    copies C_i signatures in T_i = C_i / rho and C_{i+1} = (delta/rho) * C_i
    arrive meanwhile.  The final copy round is the first whose expected
    successor count drops below one signature.
    """
    if rho <= 0 or delta <= 0:
        raise DomainError("rates must be positive")
    if delta >= rho:
        raise NoConvergence("migration requires delta < rho")
    if c1 < 0:
        raise DomainError("C_1 must be >= 0")
    if c1 == 0:
        return 0, [], [0.0]
    ratio = delta / rho
    rounds = 0
    c_list = [float(c1)]
    t_list: list[float] = []
    c = float(c1)
    while c >= 1.0:
        rounds += 1
        t_list.append(c / rho)
        c *= ratio
        c_list.append(c)
    return rounds, t_list, c_list
