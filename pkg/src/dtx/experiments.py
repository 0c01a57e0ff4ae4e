"""Estimator sweeps behind the bias/variance figures.

Both sweeps compare estimates of ``V_K(x0)`` against the exact
``V_gamma'(x0)``. Repetition ``r`` uses trajectories
``child_seed(seed, r * N + i)`` and random-time streams from a disjoint
child range, so rows depend only on ``(seed, r)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import exact
from .errors import ParameterError
from .exact import ExpansionConfig
from .mdp import PolicyTable, TabularMdp, induce
from .sampling import (
    child_seed,
    mc_base,
    noisy_exact_values,
    simulate_batch,
    taylor_value_estimate_path,
)

DEFAULT_SIGMAS = (0.0, 0.05, 0.1, 0.2, 0.5, 1.0)
_TIME_STREAM = 1 << 40
_NOISE_STREAM = 1 << 41

TRADEOFF_COLUMNS = (
    "curve",
    "K",
    "abs_error",
    "abs_error_std",
    "rel_error",
    "rel_error_std",
    "log_rel_error",
    "repetitions",
)
OPTIMAL_K_COLUMNS = ("sigma", "mean_k_star", "std_k_star", "repetitions", "k_max")


@dataclass(frozen=True)
class SweepSetup:
    mdp: TabularMdp
    policy: PolicyTable
    cfg: ExpansionConfig  # order_k is K_max
    start: int = 0
    num_trajectories: int = 10
    horizon: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.num_trajectories < 1 or self.horizon < 1:
            raise ParameterError("num_trajectories and horizon must be >= 1")
        if self.cfg.gamma_prime >= 1.0:
            raise ParameterError("sweeps need gamma_prime < 1")

    @property
    def target(self) -> float:
        return float(exact.value(induce(self.mdp, self.policy), self.cfg.gamma_prime).values[self.start])


def exact_errors(setup: SweepSetup) -> np.ndarray:
    """``|V_gamma'(x0) - V_k(x0)|`` for k = 0..K_max."""
    chain = induce(setup.mdp, setup.policy)
    partial = np.cumsum([inc[setup.start] for inc in exact.taylor_increments(chain, setup.cfg)])
    return np.abs(setup.target - partial)


def _path_estimates(setup: SweepSetup, rep: int, base_for) -> np.ndarray:
    """Average over the repetition's N trajectories of the order-0..K_max estimates."""
    n = setup.num_trajectories
    batch = simulate_batch(setup.mdp, setup.policy, setup.start, setup.horizon, n, setup.seed, offset=rep * n)
    paths = [
        taylor_value_estimate_path(tr, setup.cfg, base_for(i), child_seed(setup.seed, _TIME_STREAM + rep * n + i), replicates=1)
        for i, tr in enumerate(batch)
    ]
    return np.mean(paths, axis=0)


def sampled_errors(setup: SweepSetup, repetitions: int, base_for_rep) -> np.ndarray:
    """(repetitions, K_max + 1) absolute errors; ``base_for_rep(rep)(i)`` gives trajectory i's base."""
    if repetitions < 1:
        raise ParameterError("repetitions must be >= 1")
    target = setup.target
    return np.array([np.abs(target - _path_estimates(setup, r, base_for_rep(r))) for r in range(repetitions)])


def _rows(curve: str, errors: np.ndarray, target: float) -> list[dict]:
    errors = np.atleast_2d(errors)
    reps = errors.shape[0]
    rel = errors / abs(target)
    rows = []
    for k in range(errors.shape[1]):
        mean_rel = float(rel[:, k].mean())
        rows.append(
            {
                "curve": curve,
                "K": k,
                "abs_error": float(errors[:, k].mean()),
                "abs_error_std": float(errors[:, k].std(ddof=1)) if reps > 1 else 0.0,
                "rel_error": mean_rel,
                "rel_error_std": float(rel[:, k].std(ddof=1)) if reps > 1 else 0.0,
                "log_rel_error": float(np.log(mean_rel)) if mean_rel > 0 else float("-inf"),
                "repetitions": reps,
            }
        )
    return rows


def tradeoff_curve(setup: SweepSetup, repetitions: int = 50) -> tuple[list[dict], np.ndarray]:
    """Exact and sampled error curves over K = 0..K_max.

    The sampled curve runs the random-time estimator on Monte-Carlo return
    bases. Returns the CSV rows and the raw (repetitions, K+1) sampled errors.
    """
    target = setup.target
    raw = sampled_errors(setup, repetitions, lambda r: (lambda i: mc_base(setup.cfg.gamma)))
    rows = _rows("exact", exact_errors(setup), target) + _rows("sampled", raw, target)
    return rows, raw


def optimal_orders(setup: SweepSetup, sigma: float, repetitions: int) -> np.ndarray:
    """``K* = argmin_k |V_gamma'(x0) - V_k_hat(x0)|`` per repetition, ties to the smaller k.

    Bases are exact ``V_gamma`` plus fresh ``N(0, sigma^2)`` noise per query.
    The trajectories, random times and noise streams are shared across
    sigma values, so sweeps over sigma are paired.
    """
    if sigma < 0:
        raise ParameterError("sigma must be non-negative")
    v_gamma = exact.value(induce(setup.mdp, setup.policy), setup.cfg.gamma).values
    n = setup.num_trajectories

    def base_for_rep(r):
        return lambda i: noisy_exact_values(v_gamma, sigma, child_seed(setup.seed, _NOISE_STREAM + r * n + i))

    errors = sampled_errors(setup, repetitions, base_for_rep)
    return np.argmin(errors, axis=1)


def optimal_k_sweep(setup: SweepSetup, sigmas=DEFAULT_SIGMAS, repetitions: int = 100) -> tuple[list[dict], dict]:
    rows, raw = [], {}
    for sigma in sorted(float(s) for s in sigmas):
        ks = optimal_orders(setup, sigma, repetitions)
        raw[sigma] = ks
        rows.append(
            {
                "sigma": sigma,
                "mean_k_star": float(ks.mean()),
                "std_k_star": float(ks.std(ddof=1)) if len(ks) > 1 else 0.0,
                "repetitions": repetitions,
                "k_max": setup.cfg.order_k,
            }
        )
    return rows, raw
