"""Closed-form oracles and Taylor expansions in the discount factor.

Everything here is linear algebra on an :class:`~dtx.mdp.InducedChain`.
Inverses such as ``(I - gamma P)^{-1}`` are never formed; they are applied
through a cached LU factorization (transposed solves reuse the same factors).
Expansions are accumulated increment by increment,

    delta_0 = V_gamma,   delta_k = (g' - g) (I - g P)^{-1} P delta_{k-1},

so order ``K`` costs ``K`` triangular solve pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import (
    DomainError,
    IllConditionedError,
    InfiniteBoundError,
    ParameterError,
    RangeError,
    UndefinedWeightError,
)
from .mdp import AbsorbingDecomposition, InducedChain

COND_LIMIT = 1e12
INT64_MAX = 2**63 - 1


@dataclass(frozen=True)
class ExpansionConfig:
    """Discount pair ``gamma <= gamma_prime`` and expansion order ``K``.

    ``gamma_prime == gamma`` is accepted as the degenerate zero-gap case;
    ``gamma_prime == 1`` only makes sense on absorbing chains, which the
    consuming operations check.
    """

    gamma: float
    gamma_prime: float
    order_k: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise DomainError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not self.gamma <= self.gamma_prime <= 1.0:
            raise DomainError(f"gamma_prime must lie in [gamma, 1], got {self.gamma_prime}")
        if int(self.order_k) != self.order_k or self.order_k < 0:
            raise DomainError(f"order_k must be a non-negative integer, got {self.order_k}")
        object.__setattr__(self, "order_k", int(self.order_k))

    @property
    def gap(self) -> float:
        return self.gamma_prime - self.gamma

    @property
    def ratio(self) -> float:
        """Per-order contraction ``(g' - g) / (1 - g)``."""
        return (self.gamma_prime - self.gamma) / (1.0 - self.gamma)

    def with_order(self, order_k: int) -> "ExpansionConfig":
        return ExpansionConfig(self.gamma, self.gamma_prime, order_k)


class _TaggedVector:
    def __array__(self, dtype=None, copy=None):
        return np.asarray(self._data(), dtype=dtype)

    def __len__(self):
        return len(self._data())

    def __getitem__(self, item):
        return self._data()[item]


@dataclass(frozen=True, eq=False)
class ValueVector(_TaggedVector):
    values: np.ndarray
    gamma: float
    gamma_prime: float | None = None
    order_k: int | None = None

    def _data(self):
        return self.values


@dataclass(frozen=True, eq=False)
class QVector(_TaggedVector):
    values: np.ndarray
    num_actions: int
    policy_probs: np.ndarray
    gamma: float
    gamma_prime: float | None = None
    order_k: int | None = None

    def _data(self):
        return self.values

    @property
    def table(self) -> np.ndarray:
        return self.values.reshape(-1, self.num_actions)

    @property
    def state_values(self) -> np.ndarray:
        return np.einsum("xa,xa->x", self.policy_probs, self.table)

    @property
    def advantage(self) -> np.ndarray:
        return self.table - self.state_values[:, None]


@dataclass(frozen=True, eq=False)
class VisitationVector(_TaggedVector):
    """Discounted state occupancy from ``start``.

    Truncated expansions (``order_k`` set) need not sum to one.
    """

    probs: np.ndarray
    start: int
    gamma: float
    gamma_prime: float | None = None
    order_k: int | None = None

    def _data(self):
        return self.probs


@dataclass(frozen=True, eq=False)
class RhoWeightVector(_TaggedVector):
    """Signed state weights with ``weights @ V_gamma == V_gamma_prime[start]``."""

    weights: np.ndarray
    start: int
    gamma: float
    gamma_prime: float
    order_k: int | None = None

    def _data(self):
        return self.weights


# ---------------------------------------------------------------------------
# factorized solves


def _matrix(chain: InducedChain, kind: str) -> np.ndarray:
    return chain.p_pi if kind == "state" else chain.p_bar


def _factor(chain: InducedChain, kind: str, gamma: float):
    key = (kind, float(gamma))
    with chain._lock:
        cached = chain._factors.get(key)
        if cached is None:
            p = _matrix(chain, kind)
            lhs = np.eye(p.shape[0]) - gamma * p
            cond = np.linalg.cond(lhs)
            if not cond < COND_LIMIT:
                raise IllConditionedError(f"I - {gamma} P has condition number {cond:.3g}")
            cached = lu_factor(lhs)
            chain._factors[key] = cached
    return cached


def solve_discounted(chain: InducedChain, rhs, gamma: float, kind: str = "state", transpose: bool = False):
    """Apply ``(I - gamma P)^{-1}`` (or its transpose) to ``rhs``."""
    _check_gamma(gamma)
    return lu_solve(_factor(chain, kind, gamma), np.asarray(rhs, dtype=float), trans=1 if transpose else 0)


def _check_gamma(gamma: float):
    if not 0.0 <= gamma < 1.0:
        raise DomainError(f"discount must lie in [0, 1) for a discounted solve, got {gamma}")


def _check_state(chain: InducedChain, start: int) -> int:
    if int(start) != start or not 0 <= start < chain.num_states:
        raise ParameterError(f"start state {start} out of range")
    return int(start)


def _check_absorbing(cfg: ExpansionConfig, absorbing: AbsorbingDecomposition | None):
    if cfg.gamma_prime >= 1.0 and absorbing is None:
        raise DomainError("gamma_prime == 1 requires an absorbing decomposition")


# ---------------------------------------------------------------------------
# exact values


def value(chain: InducedChain, gamma: float) -> ValueVector:
    """Solve ``V = r_pi + gamma P_pi V``."""
    return ValueVector(solve_discounted(chain, chain.r_pi, gamma), gamma)


def value_undiscounted(dec: AbsorbingDecomposition) -> ValueVector:
    """Expected total reward before absorption; zero on absorbing states."""
    values = np.zeros(dec.num_states)
    if dec.transient_states:
        values[list(dec.transient_states)] = dec.fundamental_matrix @ dec.transient_rewards
    return ValueVector(values, 1.0)


def q_value(chain: InducedChain, gamma: float) -> QVector:
    q = solve_discounted(chain, chain.r_sa, gamma, kind="sa")
    return QVector(q, chain.num_actions, chain.policy.probs, gamma)


def visitation(chain: InducedChain, start: int, gamma: float) -> VisitationVector:
    """Solve ``d = (1 - gamma) delta_x + gamma P^T d``."""
    start = _check_state(chain, start)
    delta = np.zeros(chain.num_states)
    delta[start] = 1.0
    d = (1.0 - gamma) * solve_discounted(chain, delta, gamma, transpose=True)
    return VisitationVector(d, start, gamma)


# ---------------------------------------------------------------------------
# expansions


def _increments(chain, base, gamma, gap, order_k, kind="state", transpose=False):
    """Yield ``((g'-g) (I - g M)^{-1} M)^k base`` for k = 0..K (dual form if transposed)."""
    p = _matrix(chain, kind)
    delta = base
    yield delta
    for _ in range(order_k):
        if transpose:
            delta = gap * (p.T @ solve_discounted(chain, delta, gamma, kind, transpose=True))
        else:
            delta = gap * solve_discounted(chain, p @ delta, gamma, kind)
        yield delta


def taylor_increments(chain: InducedChain, cfg: ExpansionConfig, absorbing: AbsorbingDecomposition | None = None):
    """List of primal increments ``V_k - V_{k-1}`` for k = 0..K (``V_{-1} = 0``)."""
    _check_absorbing(cfg, absorbing)
    base = value(chain, cfg.gamma).values
    return list(_increments(chain, base, cfg.gamma, cfg.gap, cfg.order_k))


def taylor_value(
    chain: InducedChain, cfg: ExpansionConfig, absorbing: AbsorbingDecomposition | None = None
) -> ValueVector:
    """K-th order expansion of ``V_{gamma'}`` around ``V_gamma``.

    With ``gamma_prime == 1`` pass the chain's absorbing decomposition; the
    series then converges to :func:`value_undiscounted`.
    """
    _check_absorbing(cfg, absorbing)
    base = value(chain, cfg.gamma).values
    total = base.copy()
    for delta in _increments(chain, base, cfg.gamma, cfg.gap, cfg.order_k):
        if delta is not base:
            total += delta
    return ValueVector(total, cfg.gamma, cfg.gamma_prime, cfg.order_k)


def taylor_q(chain: InducedChain, cfg: ExpansionConfig, absorbing: AbsorbingDecomposition | None = None) -> QVector:
    _check_absorbing(cfg, absorbing)
    base = q_value(chain, cfg.gamma).values
    total = base.copy()
    for delta in _increments(chain, base, cfg.gamma, cfg.gap, cfg.order_k, kind="sa"):
        if delta is not base:
            total += delta
    return QVector(total, chain.num_actions, chain.policy.probs, cfg.gamma, cfg.gamma_prime, cfg.order_k)


def taylor_visitation(chain: InducedChain, start: int, cfg: ExpansionConfig) -> VisitationVector:
    if cfg.gamma_prime >= 1.0:
        raise DomainError("dual expansion requires gamma_prime < 1")
    d = visitation(chain, start, cfg.gamma).probs
    total = np.zeros_like(d)
    for delta in _increments(chain, d, cfg.gamma, cfg.gap, cfg.order_k, transpose=True):
        total += delta
    total *= (1.0 - cfg.gamma_prime) / (1.0 - cfg.gamma)
    return VisitationVector(total, int(start), cfg.gamma, cfg.gamma_prime, cfg.order_k)


def rho_weight(chain: InducedChain, start: int, gamma: float, gamma_prime: float) -> RhoWeightVector:
    """Mixture weights ``(I - g P^T)(I - g' P^T)^{-1} delta_x``."""
    start = _check_state(chain, start)
    if gamma_prime >= 1.0:
        raise UndefinedWeightError("mixture weights are undefined for gamma_prime == 1")
    if not 0.0 <= gamma <= gamma_prime:
        raise DomainError("need 0 <= gamma <= gamma_prime < 1")
    delta = np.zeros(chain.num_states)
    delta[start] = 1.0
    y = solve_discounted(chain, delta, gamma_prime, transpose=True)
    rho = y - gamma * (chain.p_pi.T @ y)
    return RhoWeightVector(rho, start, gamma, gamma_prime)


def taylor_rho(chain: InducedChain, start: int, cfg: ExpansionConfig) -> RhoWeightVector:
    start = _check_state(chain, start)
    if cfg.gamma_prime >= 1.0:
        raise UndefinedWeightError("mixture weights are undefined for gamma_prime == 1")
    delta = np.zeros(chain.num_states)
    delta[start] = 1.0
    total = np.zeros(chain.num_states)
    for inc in _increments(chain, delta, cfg.gamma, cfg.gap, cfg.order_k, transpose=True):
        total += inc
    return RhoWeightVector(total, start, cfg.gamma, cfg.gamma_prime, cfg.order_k)


def residual_bound(cfg: ExpansionConfig, r_max: float) -> float:
    """Worst-case ``|V_{g'} - V_K|``: ``ratio^(K+1) * r_max / (1 - g')``."""
    if cfg.gamma_prime >= 1.0:
        raise InfiniteBoundError("the truncation bound is vacuous for gamma_prime == 1")
    return cfg.ratio ** (cfg.order_k + 1) * r_max / (1.0 - cfg.gamma_prime)


# ---------------------------------------------------------------------------
# analytic weight schedules


def _binomial(n: int, k: int) -> float:
    c = math.comb(n, k)
    try:
        return float(c)
    except OverflowError:
        return math.inf


def _weighted_binomial_sum(n_choose, terms, gap, gamma, t):
    """sum_u C(n(u), m(u)) gap^u gamma^(t-u), falling back to log space for huge binomials."""
    total = 0.0
    for u, (n, k) in zip(terms, n_choose):
        c = _binomial(n, k)
        if math.isfinite(c) and c < 1e300:
            total += c * gap**u * gamma ** (t - u)
        elif gap > 0.0 and gamma > 0.0:
            log_c = math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)
            total += math.exp(log_c + u * math.log(gap) + (t - u) * math.log(gamma))
        elif (gamma == 0.0 and u == t) and gap > 0.0:
            total += c * gap**u
    return total


def f_weight(k_order: int, t: int, gamma: float, gamma_prime: float) -> float:
    """Weight on ``V_gamma(x_t)`` in the trajectory form of the K-th expansion.

    ``V_K(x) = V_gamma(x) + E[sum_{t>=1} f(K, t) V_gamma(x_t)]`` with
    ``f(K, t) = sum_{u=1}^{min(K,t)} (g'-g)^u g^(t-u) C(t-1, t-u)``.
    """
    if t < 1 or k_order < 0:
        raise ParameterError("f_weight needs t >= 1 and K >= 0")
    us = range(1, min(k_order, t) + 1)
    return _weighted_binomial_sum([(t - 1, t - u) for u in us], us, gamma_prime - gamma, gamma, t)


def update_weight(k_order: int, t: int, gamma: float, gamma_prime: float) -> float:
    """Weight on the time-``t`` local gradient for the K-th order partial gradient.

    Binomial truncation of ``(g + (g' - g))^t``: ``gamma^t`` at K = 0 and
    exactly ``gamma_prime^t`` once ``K >= t``.
    """
    if t < 0 or k_order < 0:
        raise ParameterError("update_weight needs t >= 0 and K >= 0")
    if k_order == 0:
        return gamma**t
    if k_order >= t:
        return gamma_prime**t
    ks = range(0, k_order + 1)
    return _weighted_binomial_sum([(t, k) for k in ks], ks, gamma_prime - gamma, gamma, t)


def update_weights(k_order: int, horizon: int, gamma: float, gamma_prime: float) -> np.ndarray:
    """Vector ``[w_K(0), ..., w_K(horizon - 1)]``."""
    return np.array([update_weight(k_order, t, gamma, gamma_prime) for t in range(horizon)])


def combination_count(n: int, k: int) -> int:
    """Number of ways to write ``n`` as an ordered sum of ``k`` non-negative integers."""
    if int(n) != n or int(k) != k or n < 0 or k < 1:
        raise ParameterError("combination_count needs n >= 0 and k >= 1")
    count = math.comb(int(n) + int(k) - 1, int(k) - 1)
    if count > INT64_MAX:
        raise RangeError(f"F({n}, {k}) exceeds the 64-bit integer range")
    return count
