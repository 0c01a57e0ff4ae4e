"""Seeded rollouts and Monte-Carlo estimators of Taylor expansions.

Base estimators are callables ``base(traj, t) -> float`` returning an
estimate of ``V_gamma(x_t)`` (or ``Q_gamma(x_t, a_t)``) for step ``t`` of a
trajectory. :func:`mc_base`, :func:`exact_value_base`, :func:`exact_q_base`
and :func:`noisy_exact_values` build the usual ones.

Seed splitting: replica ``i`` of a run seeded with ``seed`` uses
``child_seed(seed, i)``; batch helpers follow the same rule, so batched and
one-at-a-time execution produce identical trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.signal import lfilter

from .errors import ParameterError, TruncationError
from .exact import ExpansionConfig
from .mdp import PolicyTable, TabularMdp

DEFAULT_REPLICATES = 8


def child_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(index)])


def default_horizon(gamma_prime: float) -> int:
    return int(max(1000, np.ceil(20.0 / (1.0 - gamma_prime)))) if gamma_prime < 1 else 1000


@dataclass(frozen=True, eq=False)
class Trajectory:
    """``horizon`` transitions; ``states[t]``, ``actions[t]``, ``rewards[t]`` for t < horizon."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    seed: object = None
    clamp_count: int = 0
    _returns: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not len(self.states) == len(self.actions) == len(self.rewards):
            raise ParameterError("states, actions and rewards must have equal length")

    @property
    def horizon(self) -> int:
        return len(self.states)

    def __len__(self):
        return len(self.states)

    def discounted_returns(self, gamma: float) -> np.ndarray:
        """All tail sums ``sum_{s>=t} gamma^(s-t) r_s`` truncated at the trajectory end."""
        cached = self._returns.get(gamma)
        if cached is None:
            cached = lfilter([1.0], [1.0, -gamma], np.asarray(self.rewards, dtype=float)[::-1])[::-1]
            self._returns[gamma] = cached
        return cached

    def to_csv_rows(self):
        yield ("t", "state", "action", "reward")
        for t in range(self.horizon):
            yield (t, int(self.states[t]), int(self.actions[t]), float(self.rewards[t]))


@dataclass(frozen=True)
class EstimatorOutput:
    point: float
    std_error: float
    num_samples: int
    estimator_id: str
    excluded: int = 0

    def to_record(self, cfg: ExpansionConfig | None = None) -> dict:
        rec = {
            "estimator_id": self.estimator_id,
            "point": self.point,
            "std_error": self.std_error,
            "n": self.num_samples,
            "excluded": self.excluded,
        }
        if cfg is not None:
            rec.update(K=cfg.order_k, gamma=cfg.gamma, gamma_prime=cfg.gamma_prime)
        return rec


def _summarize(samples, estimator_id: str, excluded: int) -> EstimatorOutput:
    samples = np.asarray(samples, dtype=float)
    n = len(samples)
    if n == 0:
        raise TruncationError(f"{estimator_id}: every sampled time fell beyond the trajectory")
    se = float(np.std(samples, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return EstimatorOutput(float(samples.mean()), se, n, estimator_id, excluded)


# ---------------------------------------------------------------------------
# simulation


class _Sampler:
    """Inverse-CDF tables for a policy on an MDP."""

    def __init__(self, mdp: TabularMdp, policy: PolicyTable):
        if policy.probs.shape != (mdp.num_states, mdp.num_actions):
            raise ParameterError("policy does not match the MDP dimensions")
        self.mdp = mdp
        self.policy_cdf = self._cdf(policy.probs)
        self.transition_cdf = self._cdf(mdp.transition)

    @staticmethod
    def _cdf(probs: np.ndarray) -> np.ndarray:
        cdf = np.cumsum(probs, axis=-1)
        # snap everything from the last supported outcome on to exactly 1 so
        # zero-probability tail outcomes can never be drawn
        last = probs.shape[-1] - 1 - np.argmax((probs > 0.0)[..., ::-1], axis=-1)
        idx = np.arange(probs.shape[-1])
        cdf[idx >= last[..., None]] = 1.0
        return cdf

    def draws(self, seed, horizon: int):
        rng = np.random.default_rng(seed)
        u = 1.0 - rng.random((horizon, 2))  # in (0, 1]
        z = rng.standard_normal(horizon) if self.mdp.reward_noise_std > 0 else np.zeros(horizon)
        return u, z

    def rollout(self, start: np.ndarray, u: np.ndarray, z: np.ndarray):
        """Vectorized rollout of ``len(start)`` chains; ``u`` is (n, T, 2), ``z`` is (n, T)."""
        n, horizon = u.shape[:2]
        states = np.empty((n, horizon), dtype=np.int64)
        actions = np.empty((n, horizon), dtype=np.int64)
        x = start.astype(np.int64)
        for t in range(horizon):
            a = (self.policy_cdf[x] < u[:, t, 0, None]).sum(axis=1)
            y = (self.transition_cdf[x, a] < u[:, t, 1, None]).sum(axis=1)
            states[:, t] = x
            actions[:, t] = a
            x = y
        mean = self.mdp.reward_mean[states, actions]
        rewards = mean * (1.0 + self.mdp.reward_noise_std * z)
        clamped = (rewards < 0.0) | (rewards > self.mdp.r_max)
        rewards = np.clip(rewards, 0.0, self.mdp.r_max)
        return states, actions, rewards, clamped.sum(axis=1)


def _check_start(mdp: TabularMdp, start: int):
    if int(start) != start or not 0 <= start < mdp.num_states:
        raise ParameterError(f"start state {start} out of range")


def simulate(mdp: TabularMdp, policy: PolicyTable, start: int, horizon: int, seed) -> Trajectory:
    """Roll out ``horizon`` steps from ``start``; deterministic in ``seed``.

    Rewards carry multiplicative Gaussian noise when the MDP has
    ``reward_noise_std > 0`` and are clamped to ``[0, r_max]``; the number of
    clamp events is kept on the trajectory.
    """
    _check_start(mdp, start)
    if horizon < 1:
        raise ParameterError("horizon must be >= 1")
    sampler = _Sampler(mdp, policy)
    u, z = sampler.draws(seed, horizon)
    s, a, r, clamps = sampler.rollout(np.array([start]), u[None], z[None])
    return Trajectory(s[0], a[0], r[0], seed=seed, clamp_count=int(clamps[0]))


def simulate_batch(
    mdp: TabularMdp, policy: PolicyTable, start: int, horizon: int, num: int, seed: int, offset: int = 0
) -> list[Trajectory]:
    """``num`` trajectories; trajectory ``i`` equals ``simulate(..., seed=child_seed(seed, offset + i))``."""
    _check_start(mdp, start)
    if horizon < 1 or num < 1:
        raise ParameterError("horizon and num must be >= 1")
    sampler = _Sampler(mdp, policy)
    seeds = [child_seed(seed, offset + i) for i in range(num)]
    draws = [sampler.draws(sd, horizon) for sd in seeds]
    u = np.stack([d[0] for d in draws])
    z = np.stack([d[1] for d in draws])
    s, a, r, clamps = sampler.rollout(np.full(num, start), u, z)
    return [Trajectory(s[i], a[i], r[i], seed=seeds[i], clamp_count=int(clamps[i])) for i in range(num)]


# ---------------------------------------------------------------------------
# base estimators


def mc_return(traj: Trajectory, t: int, gamma: float) -> float:
    """Discounted tail return from step ``t``.

    The sum stops at the trajectory end, which biases it low by at most
    ``gamma^(L - t) * r_max / (1 - gamma)``.
    """
    if not 0 <= t < traj.horizon:
        raise IndexError(f"step {t} outside trajectory of length {traj.horizon}")
    return float(traj.discounted_returns(gamma)[t])


def mc_base(gamma: float) -> Callable:
    return lambda traj, t: mc_return(traj, t, gamma)


def exact_value_base(values) -> Callable:
    values = np.asarray(values, dtype=float)
    return lambda traj, t: float(values[traj.states[t]])


def exact_q_base(q_values) -> Callable:
    """Base returning ``Q[x_t, a_t]`` from an (S, A) table or a ``QVector``."""
    table = np.asarray(getattr(q_values, "table", q_values), dtype=float)
    if table.ndim != 2:
        raise ParameterError("exact_q_base expects an (S, A) table")
    return lambda traj, t: float(table[traj.states[t], traj.actions[t]])


class NoisyValues:
    """Exact values plus fresh ``N(0, sigma^2)`` noise on every query.

    Query ``k`` uses the ``k``-th normal draw of a PCG64 stream seeded by
    ``seed``, so outputs depend only on ``(seed, call index)``.
    """

    def __init__(self, values, sigma: float, seed: int):
        if sigma < 0:
            raise ParameterError("sigma must be non-negative")
        self.values = np.asarray(values, dtype=float)
        self.sigma = float(sigma)
        self._rng = np.random.default_rng(seed)
        self.calls = 0

    def query(self, state: int) -> float:
        self.calls += 1
        if self.sigma == 0.0:
            return float(self.values[state])
        return float(self.values[state] + self.sigma * self._rng.standard_normal())

    def __call__(self, traj: Trajectory, t: int) -> float:
        return self.query(traj.states[t])


def noisy_exact_values(values, sigma: float, seed: int) -> NoisyValues:
    return NoisyValues(values, sigma, seed)


# ---------------------------------------------------------------------------
# random times


class GeometricTimeSampler:
    """Draws ``tau >= 1`` with ``P(tau = t) = (1 - gamma) gamma^(t - 1)``."""

    def __init__(self, gamma: float, rng=None):
        if not 0.0 <= gamma < 1.0:
            raise ParameterError("gamma must lie in [0, 1)")
        self.gamma = float(gamma)
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)

    def sample(self, size=None):
        return self.rng.geometric(1.0 - self.gamma, size=size)


def sample_geometric_time(sampler: GeometricTimeSampler) -> int:
    return int(sampler.sample())


# ---------------------------------------------------------------------------
# Taylor expansion estimators


def taylor_value_estimate(
    traj: Trajectory,
    cfg: ExpansionConfig,
    base: Callable,
    seed,
    replicates: int = DEFAULT_REPLICATES,
    start_step: int = 0,
) -> EstimatorOutput:
    """Estimate ``V_K(x_0)`` by sub-sampling the trajectory at geometric times.

    Each replicate draws ``tau_1..tau_K`` and returns
    ``sum_k ratio^k * base(x_{t_k})`` with ``t_k = tau_1 + ... + tau_k``.
    Replicates whose times run past the trajectory end are excluded and
    counted in ``excluded``.
    """
    if replicates < 1:
        raise ParameterError("replicates must be >= 1")
    k = cfg.order_k
    t0 = start_step
    if k == 0:
        # no random times: every replicate is the same base estimate
        return EstimatorOutput(float(base(traj, t0)), 0.0, 1, "taylor_value", 0)
    ratio = cfg.ratio
    coeffs = ratio ** np.arange(k + 1)
    times = GeometricTimeSampler(cfg.gamma, seed).sample(size=(replicates, k))
    offsets = t0 + np.concatenate([np.zeros((replicates, 1), dtype=np.int64), np.cumsum(times, axis=1)], axis=1)
    samples = []
    excluded = 0
    head = float(base(traj, t0))
    for row in offsets:
        if row[-1] >= traj.horizon:
            excluded += 1
            continue
        est = head
        for j in range(1, k + 1):
            if coeffs[j] != 0.0:
                est += coeffs[j] * base(traj, int(row[j]))
        samples.append(est)
    return _summarize(samples, "taylor_value", excluded)


def taylor_value_estimate_path(
    traj: Trajectory, cfg: ExpansionConfig, base: Callable, seed, replicates: int = DEFAULT_REPLICATES
) -> np.ndarray:
    """Estimates of ``V_k(x_0)`` for every k = 0..K sharing one set of random times.

    Returns an array of shape (K + 1,); entry k is the replicate average of
    the order-k partial sums. Replicates truncated before order k are dropped
    from that order's average only.
    """
    k = cfg.order_k
    head = float(base(traj, 0))
    out = np.full(k + 1, head)
    if k == 0:
        return out
    coeffs = cfg.ratio ** np.arange(k + 1)
    times = GeometricTimeSampler(cfg.gamma, seed).sample(size=(replicates, k))
    offsets = np.cumsum(times, axis=1)
    sums = np.zeros((replicates, k + 1))
    valid = np.ones((replicates, k + 1), dtype=bool)
    for i in range(replicates):
        acc = head
        sums[i, 0] = acc
        for j in range(1, k + 1):
            t = int(offsets[i, j - 1])
            if t >= traj.horizon:
                valid[i, j:] = False
                break
            acc += coeffs[j] * base(traj, t)
            sums[i, j] = acc
    counts = valid.sum(axis=0)
    if np.any(counts == 0):
        raise TruncationError("trajectory too short for the requested order")
    out = (sums * valid).sum(axis=0) / counts
    return out


def taylor_q_term_estimate(
    traj: Trajectory,
    t: int,
    cfg: ExpansionConfig,
    base: Callable,
    seed,
    replicates: int = 1,
) -> EstimatorOutput:
    """Estimate the order-K term ``Q_K - Q_{K-1}`` at ``(x_t, a_t)``.

    Returns ``ratio^K * base(x_{t+tau}, a_{t+tau})`` with ``tau`` the sum of
    K geometric times.
    """
    k = cfg.order_k
    if not 0 <= t < traj.horizon:
        raise IndexError(f"step {t} outside trajectory of length {traj.horizon}")
    if k == 0:
        return EstimatorOutput(float(base(traj, t)), 0.0, 1, "taylor_q_term", 0)
    coeff = cfg.ratio**k
    taus = GeometricTimeSampler(cfg.gamma, seed).sample(size=(replicates, k)).sum(axis=1)
    samples = []
    excluded = 0
    for tau in taus:
        if t + tau >= traj.horizon:
            excluded += 1
            continue
        samples.append(coeff * base(traj, int(t + tau)) if coeff != 0.0 else 0.0)
    return _summarize(samples, "taylor_q_term", excluded)


def taylor_q_estimate(
    traj: Trajectory, t: int, cfg: ExpansionConfig, base: Callable, seed, replicates: int = 1
) -> EstimatorOutput:
    """Full K-th order Q estimate: the order-k terms summed along shared random times."""
    k = cfg.order_k
    if not 0 <= t < traj.horizon:
        raise IndexError(f"step {t} outside trajectory of length {traj.horizon}")
    head = float(base(traj, t))
    if k == 0:
        return EstimatorOutput(head, 0.0, 1, "taylor_q", 0)
    coeffs = cfg.ratio ** np.arange(k + 1)
    offsets = t + np.cumsum(GeometricTimeSampler(cfg.gamma, seed).sample(size=(replicates, k)), axis=1)
    samples = []
    excluded = 0
    for row in offsets:
        if row[-1] >= traj.horizon:
            excluded += 1
            continue
        samples.append(head + sum(coeffs[j + 1] * base(traj, int(s)) for j, s in enumerate(row)))
    return _summarize(samples, "taylor_q", excluded)


def marginal_weights(gamma: float, h: int) -> np.ndarray:
    """Normalized geometric weights ``gamma^s / sum_{s'} gamma^{s'}`` for s = 1..h."""
    if gamma == 0.0:
        w = np.zeros(h)
        w[0] = 1.0
        return w
    w = gamma ** np.arange(1, h + 1, dtype=float)
    return w / w.sum()


def truncated_q_estimate(traj: Trajectory, t: int, cfg: ExpansionConfig, h: int, base: Callable) -> float:
    """First-order Q estimate with the random time averaged out over ``h`` steps.

    ``Q(x_t,a_t) + ratio * sum_{s=1}^{h} w_s Q(x_{t+s}, a_{t+s})`` with
    :func:`marginal_weights`; lower variance than a single random time.
    """
    if cfg.order_k != 1:
        raise ParameterError("truncated_q_estimate is defined for K = 1 only")
    if h < 1:
        raise ParameterError("h must be >= 1")
    if t + h >= traj.horizon:
        raise TruncationError(f"need steps up to {t + h}, trajectory has {traj.horizon}")
    w = marginal_weights(cfg.gamma, h)
    tail = sum(w[s - 1] * base(traj, t + s) for s in range(1, h + 1))
    return float(base(traj, t) + cfg.ratio * tail)
