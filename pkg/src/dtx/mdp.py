"""Tabular MDPs, policies and the Markov chains they induce.

State-action pairs are flattened row-major: pair ``(x, a)`` lives at index
``x * num_actions + a`` in every length ``S*A`` vector and matrix.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import AssumptionError, NonAbsorbingError, ParameterError

STOCHASTIC_ATOL = 1e-12
ABSORBING_COND_LIMIT = 1e12
DEFAULT_REWARD_NOISE = 0.2


def _frozen(array, dtype=float) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite MDP with transition tensor ``p[x, a, y]`` and mean rewards ``r[x, a]``.

    ``reward_noise_std`` is the std of the multiplicative Gaussian noise
    applied when simulating, ``r = r_mean * (1 + eps)``. Exact oracles only
    ever see the means.
    """

    transition: np.ndarray
    reward_mean: np.ndarray
    r_max: float = 1.0
    reward_noise_std: float = 0.0

    def __post_init__(self):
        p = _frozen(self.transition)
        r = _frozen(self.reward_mean)
        if p.ndim != 3 or p.shape[0] != p.shape[2] or p.shape[0] < 1 or p.shape[1] < 1:
            raise ParameterError(f"transition must have shape (S, A, S), got {p.shape}")
        if r.shape != p.shape[:2]:
            raise ParameterError(f"reward_mean shape {r.shape} does not match (S, A) = {p.shape[:2]}")
        if not np.all(np.isfinite(p)) or np.any(p < 0.0):
            raise ParameterError("transition probabilities must be finite and non-negative")
        if np.max(np.abs(p.sum(axis=2) - 1.0)) > STOCHASTIC_ATOL:
            raise ParameterError("transition rows must sum to 1")
        if not self.r_max > 0.0 or not np.isfinite(self.r_max):
            raise ParameterError("r_max must be a positive finite real")
        if np.any(r < 0.0) or np.any(r > self.r_max):
            raise ParameterError("reward means must lie in [0, r_max]")
        if not self.reward_noise_std >= 0.0:
            raise ParameterError("reward_noise_std must be non-negative")
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "reward_mean", r)
        object.__setattr__(self, "r_max", float(self.r_max))
        object.__setattr__(self, "reward_noise_std", float(self.reward_noise_std))

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    def to_dict(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "transition": self.transition.tolist(),
            "reward_mean": self.reward_mean.tolist(),
            "r_max": self.r_max,
            "reward_noise_std": self.reward_noise_std,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TabularMdp":
        try:
            mdp = cls(
                transition=doc["transition"],
                reward_mean=doc["reward_mean"],
                r_max=doc["r_max"],
                reward_noise_std=doc.get("reward_noise_std", 0.0),
            )
        except KeyError as exc:
            raise ParameterError(f"MDP document is missing field {exc}") from None
        if (mdp.num_states, mdp.num_actions) != (doc.get("num_states"), doc.get("num_actions")):
            raise ParameterError("declared num_states/num_actions disagree with the arrays")
        return mdp

    def to_json(self, **extra) -> str:
        doc = self.to_dict()
        doc.update(extra)
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TabularMdp":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class PolicyTable:
    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen(self.probs)
        if probs.ndim != 2:
            raise ParameterError(f"policy table must be 2-D, got shape {probs.shape}")
        if np.any(probs < 0.0) or np.max(np.abs(probs.sum(axis=1) - 1.0)) > STOCHASTIC_ATOL:
            raise ParameterError("each policy row must be a probability simplex")
        object.__setattr__(self, "probs", probs)

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "PolicyTable":
        return cls(np.full((num_states, num_actions), 1.0 / num_actions))

    @classmethod
    def deterministic(cls, actions: Iterable[int], num_actions: int) -> "PolicyTable":
        actions = list(actions)
        probs = np.zeros((len(actions), num_actions))
        probs[np.arange(len(actions)), actions] = 1.0
        return cls(probs)


@dataclass(frozen=True, eq=False)
class InducedChain:
    """Markov chain of a policy on an MDP.

    ``p_bar`` is the state-action kernel ``p(y|x,a) * pi(b|y)``.
    """

    p_pi: np.ndarray
    r_pi: np.ndarray
    p_bar: np.ndarray
    r_sa: np.ndarray
    policy: PolicyTable
    # per-chain LU factorizations, keyed by (which matrix, gamma)
    _factors: dict = field(default_factory=dict, init=False, repr=False, compare=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False, compare=False)

    @property
    def num_states(self) -> int:
        return self.p_pi.shape[0]

    @property
    def num_actions(self) -> int:
        return self.policy.probs.shape[1]


@dataclass(frozen=True, eq=False)
class AbsorbingDecomposition:
    """Split of a chain into transient and absorbing states.

    ``fundamental_matrix`` is ``N = (I - P~)^{-1}``: expected visit counts
    among transient states before absorption.
    """

    num_states: int
    absorbing_states: tuple
    transient_states: tuple
    transient_block: np.ndarray
    transient_rewards: np.ndarray
    fundamental_matrix: np.ndarray


def random_mdp(
    num_states: int,
    num_actions: int,
    dirichlet_alpha: float,
    seed: int,
    reward_noise_std: float = DEFAULT_REWARD_NOISE,
) -> TabularMdp:
    """Draw the random toy MDP used throughout the experiments.

    Transition rows are Dirichlet(alpha, ..., alpha), mean rewards are
    Uniform(0, 1). The Dirichlet draw goes through normalized Gamma variates
    in log space, ``log G(a) = log G(a + 1) + log(U) / a``, because for
    alpha around 0.01 plain Gamma variates underflow to exact zeros.
    Generator: numpy PCG64 seeded with ``seed``.
    """
    if int(num_states) != num_states or num_states < 2:
        raise ParameterError("num_states must be an integer >= 2")
    if int(num_actions) != num_actions or num_actions < 1:
        raise ParameterError("num_actions must be an integer >= 1")
    if not dirichlet_alpha > 0.0 or not np.isfinite(dirichlet_alpha):
        raise ParameterError("dirichlet_alpha must be a positive finite real")
    if not reward_noise_std >= 0.0:
        raise ParameterError("reward_noise_std must be non-negative")

    rng = np.random.default_rng(seed)
    shape = (num_states, num_actions, num_states)
    log_g = np.log(rng.gamma(dirichlet_alpha + 1.0, size=shape))
    log_g += np.log(rng.uniform(size=shape)) / dirichlet_alpha
    log_g -= log_g.max(axis=2, keepdims=True)
    weights = np.exp(log_g)
    transition = weights / weights.sum(axis=2, keepdims=True)
    reward_mean = rng.uniform(0.0, 1.0, size=(num_states, num_actions))
    return TabularMdp(
        transition=transition,
        reward_mean=reward_mean,
        r_max=1.0 + 6.0 * reward_noise_std,
        reward_noise_std=reward_noise_std,
    )


def induce(mdp: TabularMdp, policy: PolicyTable) -> InducedChain:
    probs = policy.probs
    if probs.shape != (mdp.num_states, mdp.num_actions):
        raise ParameterError(
            f"policy shape {probs.shape} does not match MDP (S, A) = {(mdp.num_states, mdp.num_actions)}"
        )
    p_pi = np.einsum("xa,xay->xy", probs, mdp.transition)
    r_pi = np.einsum("xa,xa->x", probs, mdp.reward_mean)
    n_sa = mdp.num_states * mdp.num_actions
    p_bar = (mdp.transition[:, :, :, None] * probs[None, None, :, :]).reshape(n_sa, n_sa)
    return InducedChain(
        p_pi=_frozen(p_pi),
        r_pi=_frozen(r_pi),
        p_bar=_frozen(p_bar),
        r_sa=_frozen(mdp.reward_mean.reshape(-1)),
        policy=policy,
    )


def _reaches(p: np.ndarray, targets: set) -> np.ndarray:
    """Boolean mask of states with a positive-probability path into ``targets``."""
    reach = np.zeros(p.shape[0], dtype=bool)
    reach[list(targets)] = True
    while True:
        grown = reach | (p[:, reach] > 0.0).any(axis=1)
        if np.array_equal(grown, reach):
            return reach
        reach = grown


def absorbing_decompose(chain: InducedChain, absorbing_states) -> AbsorbingDecomposition:
    s = chain.num_states
    absorbing = sorted({int(x) for x in absorbing_states})
    if any(x < 0 or x >= s for x in absorbing):
        raise ParameterError("absorbing state index out of range")
    for x in absorbing:
        if abs(chain.p_pi[x, x] - 1.0) > STOCHASTIC_ATOL:
            raise AssumptionError(f"state {x} does not self-loop under the policy")
        if abs(chain.r_pi[x]) > STOCHASTIC_ATOL:
            raise AssumptionError(f"absorbing state {x} has non-zero reward {chain.r_pi[x]}")
    transient = [x for x in range(s) if x not in set(absorbing)]
    block = chain.p_pi[np.ix_(transient, transient)]
    if transient:
        stuck = ~_reaches(chain.p_pi, set(absorbing))[transient] if absorbing else np.ones(len(transient), bool)
        if stuck.any():
            bad = [transient[i] for i in np.flatnonzero(stuck)]
            raise NonAbsorbingError(f"states {bad} never reach an absorbing state")
        lhs = np.eye(len(transient)) - block
        if np.linalg.cond(lhs) > ABSORBING_COND_LIMIT:
            raise NonAbsorbingError("transient block (I - P~) is numerically singular")
        fundamental = np.linalg.solve(lhs, np.eye(len(transient)))
    else:
        fundamental = np.eye(0)
    return AbsorbingDecomposition(
        num_states=s,
        absorbing_states=tuple(absorbing),
        transient_states=tuple(transient),
        transient_block=_frozen(block),
        transient_rewards=_frozen(chain.r_pi[transient]),
        fundamental_matrix=_frozen(fundamental),
    )
