"""Policy gradients for tabular softmax policies.

For softmax logits ``theta[x, b]`` the local gradient of state ``x`` is
``pi(b|x) * A(x, b)``, so every exact gradient here is one visitation-style
solve times the advantage table:

    d V_g(start) / d theta[x, b] = [(I - g P)^{-1}]_{start, x} pi(b|x) A_g(x, b)

The first partial gradient swaps the outer discount for ``gamma_prime``
while keeping ``A_gamma`` inside.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import exact
from .errors import AssumptionError, DivergenceError, DomainError, ParameterError
from .exact import ExpansionConfig
from .mdp import PolicyTable, TabularMdp, absorbing_decompose, induce
from .sampling import GeometricTimeSampler, Trajectory, child_seed, simulate_batch

DIVERGENCE_LIMIT = 1e4
VARIANTS = ("q-expansion", "update-weighting", "vanilla", "heuristic")


@dataclass(frozen=True, eq=False)
class SoftmaxPolicyParams:
    logits: np.ndarray

    def __post_init__(self):
        logits = np.array(self.logits, dtype=float)
        if logits.ndim != 2:
            raise ParameterError("logits must be an (S, A) table")
        object.__setattr__(self, "logits", logits)

    @classmethod
    def zeros(cls, num_states: int, num_actions: int) -> "SoftmaxPolicyParams":
        return cls(np.zeros((num_states, num_actions)))

    def probs(self) -> np.ndarray:
        z = self.logits - self.logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def policy(self) -> PolicyTable:
        return PolicyTable(self.probs())


@dataclass(frozen=True, eq=False)
class GradientTable:
    """``partials[x, a]`` is the derivative with respect to ``theta[x, a]``."""

    partials: np.ndarray
    objective: str
    std_error: np.ndarray | None = None

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.partials, dtype=dtype)

    def __sub__(self, other: "GradientTable") -> "GradientTable":
        return GradientTable(self.partials - other.partials, f"{self.objective}-{other.objective}")

    def __add__(self, other: "GradientTable") -> "GradientTable":
        return GradientTable(self.partials + other.partials, f"{self.objective}+{other.objective}")

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.partials))


def _delta(n: int, start: int) -> np.ndarray:
    if int(start) != start or not 0 <= start < n:
        raise ParameterError(f"start state {start} out of range")
    d = np.zeros(n)
    d[start] = 1.0
    return d


def _local_gradients(chain, gamma: float) -> np.ndarray:
    q = exact.q_value(chain, gamma)
    return chain.policy.probs * q.advantage


def exact_policy_gradient(mdp: TabularMdp, params: SoftmaxPolicyParams, gamma: float, start: int) -> GradientTable:
    """Exact ``grad V_gamma(start)``."""
    chain = induce(mdp, params.policy())
    occupancy = exact.solve_discounted(chain, _delta(mdp.num_states, start), gamma, transpose=True)
    return GradientTable(occupancy[:, None] * _local_gradients(chain, gamma), f"vanilla(gamma={gamma})")


def exact_first_partial(
    mdp: TabularMdp,
    params: SoftmaxPolicyParams,
    gamma: float,
    gamma_prime: float,
    start: int,
    absorbing_states=None,
) -> GradientTable:
    """``(I - g' P)^{-1} G_g`` at ``start``: differentiate ``V_{g'}`` only through ``V_g``.

    ``gamma_prime == 1`` needs ``absorbing_states``; the solve is then
    restricted to transient states, where it is the fundamental matrix.
    """
    if not 0.0 <= gamma <= gamma_prime <= 1.0 or gamma >= 1.0:
        raise DomainError("need 0 <= gamma <= gamma_prime <= 1 and gamma < 1")
    chain = induce(mdp, params.policy())
    local = _local_gradients(chain, gamma)
    delta = _delta(mdp.num_states, start)
    if gamma_prime < 1.0:
        occupancy = exact.solve_discounted(chain, delta, gamma_prime, transpose=True)
    else:
        if absorbing_states is None:
            raise AssumptionError("gamma_prime == 1 requires declared absorbing states")
        dec = absorbing_decompose(chain, absorbing_states)
        occupancy = np.zeros(mdp.num_states)
        transient = list(dec.transient_states)
        if start in dec.transient_states:
            occupancy[transient] = dec.fundamental_matrix[transient.index(start)]
    return GradientTable(occupancy[:, None] * local, f"first-partial(gamma={gamma},gamma_prime={gamma_prime})")


def exact_gradient_decomposition(
    mdp: TabularMdp, params: SoftmaxPolicyParams, gamma: float, gamma_prime: float, start: int
) -> tuple[GradientTable, GradientTable, GradientTable]:
    """``(full, first, second)`` with ``full = grad V_{g'}(start)`` and ``second = full - first``."""
    if not 0.0 <= gamma <= gamma_prime < 1.0:
        raise DomainError("decomposition needs 0 <= gamma <= gamma_prime < 1")
    full = exact_policy_gradient(mdp, params, gamma_prime, start)
    full = replace(full, objective=f"full(gamma_prime={gamma_prime})")
    first = exact_first_partial(mdp, params, gamma, gamma_prime, start)
    second = GradientTable(full.partials - first.partials, f"second-partial(gamma={gamma},gamma_prime={gamma_prime})")
    return full, first, second


def finite_difference_gradient(
    objective: Callable[[SoftmaxPolicyParams], float], params: SoftmaxPolicyParams, step: float = 1e-5
) -> GradientTable:
    """Central differences, one logit at a time."""
    if not step > 0:
        raise ParameterError("step must be positive")
    base = params.logits
    grad = np.empty_like(base)
    for idx in np.ndindex(base.shape):
        up = base.copy()
        up[idx] += step
        down = base.copy()
        down[idx] -= step
        grad[idx] = (objective(SoftmaxPolicyParams(up)) - objective(SoftmaxPolicyParams(down))) / (2.0 * step)
    return GradientTable(grad, "finite-difference")


def value_objective(mdp: TabularMdp, gamma: float, start: int) -> Callable[[SoftmaxPolicyParams], float]:
    return lambda p: float(exact.value(induce(mdp, p.policy()), gamma).values[start])


def first_partial_objective(
    mdp: TabularMdp, params: SoftmaxPolicyParams, gamma: float, gamma_prime: float, start: int
) -> Callable[[SoftmaxPolicyParams], float]:
    """``rho(params)^T V_gamma(theta)`` with the mixture weights frozen at ``params``."""
    rho = exact.rho_weight(induce(mdp, params.policy()), start, gamma, gamma_prime).weights
    return lambda p: float(rho @ exact.value(induce(mdp, p.policy()), gamma).values)


# ---------------------------------------------------------------------------
# sampled gradients


@functools.lru_cache(maxsize=256)
def _weights(k_order: int, horizon: int, gamma: float, gamma_prime: float) -> np.ndarray:
    w = exact.update_weights(k_order, horizon, gamma, gamma_prime)
    w.setflags(write=False)
    return w


def schedule(variant: str, cfg: ExpansionConfig, horizon: int) -> np.ndarray:
    """Per-step update weights for a training variant."""
    if variant == "update-weighting":
        return _weights(cfg.order_k, horizon, cfg.gamma, cfg.gamma_prime)
    if variant == "vanilla":
        return cfg.gamma ** np.arange(horizon, dtype=float)
    if variant in ("heuristic", "q-expansion"):
        return np.ones(horizon)
    raise ParameterError(f"unknown variant {variant!r}")


def _score_contributions(states, actions, coef, probs) -> np.ndarray:
    """Sum over t of ``coef[t] * grad log pi(a_t|x_t)`` as an (S, A) table."""
    s, a = probs.shape
    g = np.zeros((s, a))
    np.add.at(g, (states, actions), coef)
    per_state = np.bincount(states, weights=coef, minlength=s)
    g -= per_state[:, None] * probs
    return g


def weighted_pg_estimate(
    trajectories: Sequence[Trajectory],
    q_estimates: Sequence[np.ndarray],
    cfg: ExpansionConfig,
    params: SoftmaxPolicyParams,
    weights: np.ndarray | None = None,
    normalize: bool = False,
    baseline: np.ndarray | None = None,
) -> GradientTable:
    """Batch average of ``sum_t w_K(t) Q_t grad log pi(a_t|x_t)``.

    ``weights`` overrides the ``w_K`` schedule. ``normalize`` divides the
    weights by their sum over all steps in the batch. ``baseline`` is a
    per-state value subtracted from every ``Q_t``; it leaves the expectation
    unchanged.
    """
    if len(trajectories) != len(q_estimates) or not trajectories:
        raise ParameterError("need one q_estimates array per trajectory")
    probs = params.probs()
    horizon = max(tr.horizon for tr in trajectories)
    w = _weights(cfg.order_k, horizon, cfg.gamma, cfg.gamma_prime) if weights is None else np.asarray(weights, float)
    if normalize:
        w = w / sum(w[: tr.horizon].sum() for tr in trajectories)
    per_traj = []
    for tr, q in zip(trajectories, q_estimates):
        q = np.asarray(q, dtype=float)
        if len(q) != tr.horizon:
            raise ParameterError("q_estimates must align with trajectory steps")
        if baseline is not None:
            q = q - np.asarray(baseline)[tr.states]
        per_traj.append(_score_contributions(tr.states, tr.actions, w[: tr.horizon] * q, probs))
    per_traj = np.stack(per_traj)
    n = len(per_traj)
    se = per_traj.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(per_traj[0])
    return GradientTable(per_traj.mean(axis=0), f"weighted(K={cfg.order_k})", se)


def q_expansion_estimates(traj: Trajectory, q_hat: np.ndarray, cfg: ExpansionConfig, rng) -> np.ndarray:
    """K-th order Q estimates at every step from base estimates ``q_hat``.

    Each step draws its own K geometric times; terms whose time runs past
    the trajectory end are dropped.
    """
    q_hat = np.asarray(q_hat, dtype=float)
    horizon = len(q_hat)
    out = q_hat.copy()
    if cfg.order_k == 0:
        return out
    taus = GeometricTimeSampler(cfg.gamma, rng).sample(size=(horizon, cfg.order_k))
    offsets = np.arange(horizon)[:, None] + np.cumsum(taus, axis=1)
    coeffs = cfg.ratio ** np.arange(1, cfg.order_k + 1)
    inside = offsets < horizon
    vals = q_hat[np.minimum(offsets, horizon - 1)]
    # once one time overshoots, every later cumulative time does too
    out += (coeffs[None, :] * vals * inside).sum(axis=1)
    return out


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    variant: str
    cfg: ExpansionConfig
    learning_rate: float = 0.05
    iterations: int = 200
    batch_size: int = 10
    seed: int = 0
    eta: float = 0.01
    horizon: int = 1000
    start: int = 0
    absorbing_states: tuple | None = None
    normalize: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ParameterError(f"variant must be one of {VARIANTS}")
        if not self.learning_rate >= 0:
            raise ParameterError("learning_rate must be non-negative")
        if not 0.0 <= self.eta <= 1.0:
            raise ParameterError("eta must lie in [0, 1]")
        if self.iterations < 0 or self.batch_size < 1 or self.horizon < 1:
            raise ParameterError("iterations >= 0, batch_size >= 1 and horizon >= 1 required")


@dataclass
class LearningCurve:
    returns: np.ndarray
    config: TrainConfig
    params: SoftmaxPolicyParams
    diverged: bool = False
    rows: list = field(default_factory=list)

    @property
    def final_return(self) -> float:
        return float(self.returns[-1])


def undiscounted_return(mdp: TabularMdp, policy: PolicyTable, start: int, horizon: int, absorbing_states=None) -> float:
    """Expected undiscounted return from ``start``.

    Total reward to absorption when ``absorbing_states`` is given, otherwise
    the exact expected sum of the first ``horizon`` rewards.
    """
    chain = induce(mdp, policy)
    if absorbing_states is not None:
        return float(exact.value_undiscounted(absorbing_decompose(chain, absorbing_states)).values[start])
    dist = np.zeros(mdp.num_states)
    dist[start] = 1.0
    total = 0.0
    for _ in range(horizon):
        total += dist @ chain.r_pi
        dist = dist @ chain.p_pi
    return float(total)


def train_tabular(mdp: TabularMdp, init_params: SoftmaxPolicyParams, tc: TrainConfig) -> LearningCurve:
    """Gradient ascent on softmax logits with one of the sampled update rules.

    * ``vanilla``: weights ``gamma^t``
    * ``update-weighting``: weights ``w_K(t)``
    * ``heuristic``: weights 1
    * ``q-expansion``: weights 1, ``Q = (1 - eta) Q_gamma + eta Q_K``

    ``Q_gamma`` comes from truncated Monte-Carlo returns. ``returns[i]`` is
    the undiscounted return before update ``i``; the last entry is after the
    final update.
    """
    cfg = tc.cfg
    params = SoftmaxPolicyParams(init_params.logits.copy())
    w = schedule(tc.variant, cfg, tc.horizon)
    rng = np.random.default_rng(child_seed(tc.seed, 2**31))
    returns = []
    diverged = False
    for it in range(tc.iterations):
        policy = params.policy()
        returns.append(undiscounted_return(mdp, policy, tc.start, tc.horizon, tc.absorbing_states))
        batch = simulate_batch(mdp, policy, tc.start, tc.horizon, tc.batch_size, tc.seed, offset=it * tc.batch_size)
        qs = [tr.discounted_returns(cfg.gamma) for tr in batch]
        if tc.variant == "q-expansion":
            qs = [(1.0 - tc.eta) * q + tc.eta * q_expansion_estimates(tr, q, cfg, rng) for tr, q in zip(batch, qs)]
        grad = weighted_pg_estimate(batch, qs, cfg, params, weights=w, normalize=tc.normalize)
        logits = params.logits + tc.learning_rate * grad.partials
        params = SoftmaxPolicyParams(logits)
        if np.max(np.abs(logits)) > DIVERGENCE_LIMIT:
            diverged = True
            break
    if not diverged:
        returns.append(undiscounted_return(mdp, params.policy(), tc.start, tc.horizon, tc.absorbing_states))
    return LearningCurve(np.array(returns), tc, params, diverged)


def check_divergence(curve: LearningCurve):
    if curve.diverged:
        raise DivergenceError(f"logits exceeded {DIVERGENCE_LIMIT:g} during training")
