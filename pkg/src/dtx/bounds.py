"""Finite-sample error propagation for phased estimation of K-th order expansions.

The model: a phased TD(0) subroutine estimates ``V_gamma`` with ``n``
independent next-state samples per state and phase, and the K-th order
estimate averages that subroutine over ``n`` independent draws per order.
Its max-state error against ``V_gamma_prime`` obeys

    err <= eps (A + U) + E + eps B delta_prev

with probability ``1 - 2 delta`` (``1 - delta`` when ``K = 0``).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import exact
from .errors import ParameterError
from .exact import ExpansionConfig
from .mdp import PolicyTable, TabularMdp, induce
from .sampling import child_seed


class NonContractionWarning(RuntimeWarning):
    """``eps * B >= 1``: the error recursion does not contract."""


@dataclass(frozen=True)
class PhasedTdConfig:
    """``a_gamma_delta=None`` means the Hoeffding default, see :func:`hoeffding_a`."""

    n: int
    delta: float
    cfg: ExpansionConfig
    r_max: float = 1.0
    a_gamma_delta: float | None = None
    b_gamma: float | None = None
    phases: int = 10
    num_states: int = 10

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ParameterError("n must be an integer >= 1")
        if not 0.0 < self.delta < 1.0:
            raise ParameterError("delta must lie in (0, 1)")
        if not self.r_max > 0.0:
            raise ParameterError("r_max must be positive")
        if self.b_gamma is not None and not 0.0 <= self.b_gamma < 1.0:
            raise ParameterError("b_gamma must lie in [0, 1)")
        if self.a_gamma_delta is not None and not self.a_gamma_delta >= 0.0:
            raise ParameterError("a_gamma_delta must be non-negative")
        if self.phases < 1:
            raise ParameterError("phases must be >= 1")
        if self.cfg.gamma_prime >= 1.0:
            raise ParameterError("bounds need gamma_prime < 1")

    @property
    def a(self) -> float:
        if self.a_gamma_delta is not None:
            return self.a_gamma_delta
        return hoeffding_a(self.cfg.gamma, self.delta, self.n, self.r_max, self.num_states)

    @property
    def b(self) -> float:
        # phased TD(0) contracts at rate gamma
        return td_lambda_contraction(self.cfg.gamma, 0.0) if self.b_gamma is None else self.b_gamma


def epsilon_factor(cfg: ExpansionConfig) -> float:
    """``sum_{k<=K} (gamma' - gamma)^k``; equals ``K + 1`` when the gap is 1."""
    gap = cfg.gap
    if gap == 1.0:
        return float(cfg.order_k + 1)
    return (1.0 - gap ** (cfg.order_k + 1)) / (1.0 - gap)


def concentration_width(k_order: int, delta: float, n: int) -> float:
    if int(k_order) != k_order or k_order < 0:
        raise ParameterError("k_order must be a non-negative integer")
    if not 0.0 < delta < 1.0 or n < 1:
        raise ParameterError("need 0 < delta < 1 and n >= 1")
    if k_order == 0:
        return 0.0
    return math.sqrt(2.0 * math.log(2.0 * (k_order + 1) / delta) / n)


def expected_gap_error(cfg: ExpansionConfig, r_max: float, denominator: str = "1-gamma") -> float:
    """``ratio^{K+1} R_max / (1 - gamma)``.

    ``denominator="1-gamma_prime"`` gives the residual bound of the exact
    expansion instead, which is the one that actually dominates
    ``|V_gamma' - V_K|``.
    """
    if denominator == "1-gamma":
        return cfg.ratio ** (cfg.order_k + 1) * r_max / (1.0 - cfg.gamma)
    if denominator == "1-gamma_prime":
        return exact.residual_bound(cfg, r_max)
    raise ParameterError("denominator must be '1-gamma' or '1-gamma_prime'")


def hoeffding_a(gamma: float, delta: float, n: int, r_max: float, num_states: int) -> float:
    """Default ``A(gamma, delta)``: Hoeffding width of ``n`` values in ``[0, R_max/(1-gamma)]``,
    union-bounded over states."""
    return r_max / (1.0 - gamma) * math.sqrt(math.log(2.0 * num_states / delta) / (2.0 * n))


def td_lambda_contraction(gamma: float, lam: float) -> float:
    if not 0.0 <= lam <= 1.0:
        raise ParameterError("lambda must lie in [0, 1]")
    if not 0.0 <= gamma < 1.0:
        raise ParameterError("gamma must lie in [0, 1)")
    return (1.0 - lam) * gamma / (1.0 - gamma * lam)


def error_bound_step(pc: PhasedTdConfig, delta_prev: float, denominator: str = "1-gamma") -> float:
    if not delta_prev >= 0.0:
        raise ParameterError("delta_prev must be non-negative")
    eps = epsilon_factor(pc.cfg)
    u = concentration_width(pc.cfg.order_k, pc.delta, pc.n)
    if eps * pc.b >= 1.0:
        warnings.warn(f"eps * B = {eps * pc.b:.4g} >= 1, bound does not contract", NonContractionWarning, stacklevel=2)
    return eps * (pc.a + u) + expected_gap_error(pc.cfg, pc.r_max, denominator) + eps * pc.b * delta_prev


def bound_fixed_point(pc: PhasedTdConfig, denominator: str = "1-gamma") -> float:
    eps = epsilon_factor(pc.cfg)
    if eps * pc.b >= 1.0:
        return math.inf
    u = concentration_width(pc.cfg.order_k, pc.delta, pc.n)
    return (eps * (pc.a + u) + expected_gap_error(pc.cfg, pc.r_max, denominator)) / (1.0 - eps * pc.b)


def coverage_threshold(k_order: int, delta: float, trials: int) -> float:
    level = 1.0 - delta if k_order == 0 else 1.0 - 2.0 * delta
    return level - 2.0 * math.sqrt(delta * (1.0 - delta) / trials)


def _sample_means(rng, rows: np.ndarray, values: np.ndarray, n: int) -> np.ndarray:
    """Per-row mean of ``values[y]`` over ``n`` iid draws ``y ~ rows[x]``."""
    rows = np.clip(rows, 0.0, None)
    rows = rows / rows.sum(axis=1, keepdims=True)
    counts = rng.multinomial(n, rows)
    return counts @ values / n


def phased_estimate(chain, pc: PhasedTdConfig, rng, kernels: list) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One phased run. Returns ``(V_gamma estimates before the last phase, after it, V_K estimate)``."""
    gamma = pc.cfg.gamma
    v = np.zeros(chain.num_states)
    prev = v
    for _ in range(pc.phases):
        prev = v
        v = chain.r_pi + gamma * _sample_means(rng, chain.p_pi, v, pc.n)
    v_k = v.copy()
    for k, kernel in enumerate(kernels, start=1):
        v_k += pc.cfg.ratio**k * _sample_means(rng, kernel, v, pc.n)
    return prev, v, v_k


def empirical_coverage(
    mdp: TabularMdp,
    policy: PolicyTable,
    pc: PhasedTdConfig,
    trials: int,
    seed: int,
    denominator: str = "1-gamma",
) -> dict:
    """Fraction of independent phased runs whose K-th order error is within the bound.

    Order ``k`` draws come from the normalized kernel ``D^k`` with
    ``D = (1 - gamma)(I - gamma P)^{-1} P`` and carry weight ``ratio^k``,
    which makes the estimator unbiased for ``V_K`` given the subroutine.
    Each trial's bound uses its own measured subroutine error from the
    previous phase.
    """
    if int(trials) != trials or trials < 1:
        raise ParameterError("trials must be a positive integer")
    s = mdp.num_states
    if s > 10:
        raise ParameterError("empirical_coverage measures exact errors; use at most 10 states")
    if pc.num_states != s:
        pc = PhasedTdConfig(**{**pc.__dict__, "num_states": s})
    chain = induce(mdp, policy)
    cfg = pc.cfg
    v_gamma = exact.value(chain, cfg.gamma).values
    v_target = exact.value(chain, cfg.gamma_prime).values
    d = (1.0 - cfg.gamma) * exact.solve_discounted(chain, chain.p_pi, cfg.gamma)
    kernels, power = [], np.eye(s)
    for _ in range(cfg.order_k):
        power = power @ d
        kernels.append(power)

    errors, bounds = [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonContractionWarning)
        for i in range(trials):
            rng = np.random.default_rng(child_seed(seed, i))
            prev, _, v_k = phased_estimate(chain, pc, rng, kernels)
            errors.append(float(np.max(np.abs(v_k - v_target))))
            bounds.append(error_bound_step(pc, float(np.max(np.abs(prev - v_gamma))), denominator))
    errors = np.array(errors)
    bounds = np.array(bounds)
    fraction = float(np.mean(errors <= bounds))
    threshold = coverage_threshold(cfg.order_k, pc.delta, trials)
    return {
        "bound": bounds.tolist(),
        "empirical_errors": errors.tolist(),
        "coverage_fraction": fraction,
        "threshold": threshold,
        "pass": bool(fraction >= threshold),
    }
