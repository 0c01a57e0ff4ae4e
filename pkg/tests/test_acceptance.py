"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Tolerances are pinned to the criteria. Lines are collected in
``conftest.ACCEPTANCE_LINES`` and repeated in the terminal summary.
"""

import math
import time

import numpy as np
import pytest
from scipy import stats
from scipy.optimize import isotonic_regression

from dtx import bounds, exact, experiments, gradients, sampling
from dtx.exact import ExpansionConfig
from dtx.gradients import SoftmaxPolicyParams, TrainConfig
from dtx.mdp import PolicyTable, absorbing_decompose, induce

from conftest import ACCEPTANCE_LINES, TOY_SEEDS, absorbing_mdp, swap_mdp, toy

G, GP = 0.2, 0.8
SE_FLOOR = 1e-6  # degenerate std error of states no sampled trajectory reaches


def report(n, ok, detail):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def chains():
    """Every fixture chain: 20 toy MDPs, the swap chain and the absorbing chain, uniform policies."""
    out = [(f"toy{s}", induce(toy(s), PolicyTable.uniform(10, 2))) for s in TOY_SEEDS]
    out.append(("swap", induce(swap_mdp(), PolicyTable.uniform(2, 1))))
    out.append(("absorbing", induce(absorbing_mdp(), PolicyTable.uniform(3, 2))))
    return out


def test_criterion_01_bound_compliance_and_rate():
    t0 = time.perf_counter()
    worst_ratio, slopes, curves = 0.0, [], []
    for s in TOY_SEEDS:
        m = toy(s)
        c = induce(m, PolicyTable.uniform(10, 2))
        target = exact.value(c, GP).values
        errs = []
        for k in range(11):
            cfg = ExpansionConfig(G, GP, k)
            err = np.max(np.abs(target - exact.taylor_value(c, cfg).values))
            worst_ratio = max(worst_ratio, err / exact.residual_bound(cfg, m.r_max))
            errs.append(err)
        curves.append(np.log(errs[2:]))
        slopes.append(np.polyfit(np.arange(2, 11), curves[-1], 1)[0])
    elapsed = time.perf_counter() - t0
    devs = [abs(s / math.log(0.75) - 1) for s in slopes]
    worst_seed = int(np.argmax(devs))
    pooled = abs(np.polyfit(np.arange(2, 11), np.mean(curves, axis=0), 1)[0] / math.log(0.75) - 1)
    ok = worst_ratio <= 1.0 and max(devs) <= 0.10 and elapsed < 5
    detail = (
        f"max err/bound {worst_ratio:.3f}, per-seed slope deviation max {max(devs):.2%} (seed {worst_seed}), "
        f"seed-averaged curve {pooled:.2%}, {elapsed:.2f}s"
    )
    assert report(1, ok, detail)


def test_criterion_02_exact_convergence_at_k60():
    t0 = time.perf_counter()
    cfg = ExpansionConfig(G, GP, 60)
    worst = {"V": 0.0, "Q": 0.0, "d": 0.0}
    for _, c in chains():
        worst["V"] = max(worst["V"], np.max(np.abs(exact.taylor_value(c, cfg).values - exact.value(c, GP).values)))
        worst["Q"] = max(worst["Q"], np.max(np.abs(exact.taylor_q(c, cfg).values - exact.q_value(c, GP).values)))
        for x in range(c.num_states):
            d_k = exact.taylor_visitation(c, x, cfg).probs
            worst["d"] = max(worst["d"], np.max(np.abs(d_k - exact.visitation(c, x, GP).probs)))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-8 and elapsed < 5
    detail = ", ".join(f"{k} {v:.2e}" for k, v in worst.items())
    # the truncation error is ratio^61 = 0.75^61 ~ 2.4e-8 times the value scale; see the decisions ledger
    assert report(2, ok, f"max inf-norm errors {detail}, tolerance 1e-8, {elapsed:.2f}s")


def test_criterion_03_primal_dual_equality():
    worst = 0.0
    for _, c in chains():
        for k in range(11):
            cfg = ExpansionConfig(G, GP, k)
            v_k = exact.taylor_value(c, cfg).values
            for x in range(c.num_states):
                d_k = exact.taylor_visitation(c, x, cfg).probs
                worst = max(worst, abs(v_k[x] - d_k @ c.r_pi / (1 - GP)))
    assert report(3, worst <= 1e-9, f"max |V_K - d_K^T r / (1 - g')| = {worst:.2e}")


def test_criterion_04_mixture_identities():
    worst_rho, worst_rho_k = 0.0, 0.0
    for _, c in chains():
        v_g, v_gp = exact.value(c, G).values, exact.value(c, GP).values
        for x in range(c.num_states):
            worst_rho = max(worst_rho, abs(exact.rho_weight(c, x, G, GP).weights @ v_g - v_gp[x]))
            for k in range(11):
                cfg = ExpansionConfig(G, GP, k)
                rho_k = exact.taylor_rho(c, x, cfg).weights
                worst_rho_k = max(worst_rho_k, abs(rho_k @ v_g - exact.taylor_value(c, cfg).values[x]))
    ok = worst_rho <= 1e-8 and worst_rho_k <= 1e-9
    assert report(4, ok, f"rho: {worst_rho:.2e}, rho_K: {worst_rho_k:.2e}")


def test_criterion_05_estimator_unbiasedness():
    t0 = time.perf_counter()
    n, horizon = 10_000, 80
    worst_z, checks = 0.0, 0
    for s in range(5):
        m, pi = toy(s), PolicyTable.uniform(10, 2)
        c = induce(m, pi)
        v_base = sampling.exact_value_base(exact.value(c, G).values)
        q_base = sampling.exact_q_base(exact.q_value(c, G))
        batch = sampling.simulate_batch(m, pi, 0, horizon, n, seed=1000 + s)
        for k in (0, 1, 3):
            cfg = ExpansionConfig(G, GP, k)
            v_target = exact.taylor_value(c, cfg).values[0]
            q_k = exact.taylor_q(c, cfg).state_values[0]
            q_term_target = q_k - (exact.taylor_q(c, cfg.with_order(k - 1)).state_values[0] if k else 0.0)
            a1 = [sampling.taylor_value_estimate(tr, cfg, v_base, sampling.child_seed(s, i), replicates=1).point for i, tr in enumerate(batch)]
            a4 = [sampling.taylor_q_term_estimate(tr, 0, cfg, q_base, sampling.child_seed(s + 50, i)).point for i, tr in enumerate(batch)]
            for pts, target in ((a1, v_target), (a4, q_term_target)):
                se = np.std(pts, ddof=1) / math.sqrt(n)
                diff = abs(np.mean(pts) - target)
                z = 0.0 if diff <= 1e-12 else diff / se
                worst_z = max(worst_z, z)
                checks += 1
    elapsed = time.perf_counter() - t0
    ok = worst_z <= 3.0 and elapsed < 60
    assert report(5, ok, f"{checks} checks, max |mean - target| / se = {worst_z:.2f}, {elapsed:.1f}s")


def _trend_sse(y, increasing):
    fit = isotonic_regression(y, increasing=increasing).x
    return float(np.sum((y - fit) ** 2))


def test_criterion_06_tradeoff_shape():
    t0 = time.perf_counter()
    setup = experiments.SweepSetup(toy(0), PolicyTable.uniform(10, 2), ExpansionConfig(G, GP, 20), seed=0)
    rows, raw = experiments.tradeoff_curve(setup, repetitions=50)
    exact_curve = experiments.exact_errors(setup)
    sampled = raw.mean(axis=0)
    k_star = int(np.argmin(sampled))
    exact_ok = bool(np.all(np.diff(exact_curve) < 0))
    head = sampled[: k_star + 1]
    decreasing_ok = k_star > 0 and sampled[0] > sampled[k_star] and _trend_sse(head, False) <= _trend_sse(head, True)
    tail = sampled[k_star + 2 :]
    if len(tail) >= 3:
        tail_ok = _trend_sse(tail, True) <= _trend_sse(tail, False)
        tail_note = f"tail beyond K*+2 non-decreasing in trend: {tail_ok}"
    else:
        tail_ok = True
        tail_note = "tail beyond K*+2 has fewer than 3 points, no rise observed"
    elapsed = time.perf_counter() - t0
    ok = exact_ok and decreasing_ok and tail_ok and elapsed < 120
    detail = f"exact strictly decreasing: {exact_ok}, sampled K*={k_star}, falls {sampled[0]:.3f} -> {sampled[k_star]:.3f}, {tail_note}, {elapsed:.1f}s"
    assert report(6, ok, detail)


def test_criterion_07_optimal_order_falls_with_noise():
    t0 = time.perf_counter()
    setup = experiments.SweepSetup(toy(0), PolicyTable.uniform(10, 2), ExpansionConfig(G, GP, 20), seed=0)
    _, raw = experiments.optimal_k_sweep(setup, experiments.DEFAULT_SIGMAS, repetitions=100)
    low, high = raw[0.05], raw[1.0]
    diff = high - low
    if np.all(diff == 0):
        p = 1.0
    else:
        p = float(stats.ttest_rel(high, low, alternative="less").pvalue)
    elapsed = time.perf_counter() - t0
    ok = high.mean() <= low.mean() and p < 0.05 and elapsed < 120
    assert report(7, ok, f"mean K* {low.mean():.2f} at sigma=0.05, {high.mean():.2f} at sigma=1.0, paired one-sided p={p:.2g}, {elapsed:.1f}s")


def _frozen_occupancy_objective(mdp, params, gamma, gamma_prime, start, absorbing):
    """theta -> w^T V_gamma(theta) with w frozen at ``params``; its gradient is the first partial."""
    chain = induce(mdp, params.policy())
    s = mdp.num_states
    y = np.zeros(s)
    if gamma_prime < 1:
        e = np.zeros(s)
        e[start] = 1.0
        y = np.linalg.solve(np.eye(s) - gamma_prime * chain.p_pi.T, e)
    else:
        dec = absorbing_decompose(chain, absorbing)
        tr = list(dec.transient_states)
        y[tr] = dec.fundamental_matrix[tr.index(start)]
    w = y - gamma * chain.p_pi.T @ y
    return lambda p: float(w @ exact.value(induce(mdp, p.policy()), gamma).values)


def test_criterion_08_gradient_identities():
    rng = np.random.default_rng(8)
    decomp, fd_worst = 0.0, 0.0
    for i in range(20):
        m = toy(i)
        params = SoftmaxPolicyParams(rng.standard_normal((10, 2)))
        full, first, second = gradients.exact_gradient_decomposition(m, params, G, GP, i % 10)
        decomp = max(decomp, np.max(np.abs(full.partials - first.partials - second.partials)))
        if i < 5:
            fd = gradients.finite_difference_gradient(gradients.value_objective(m, GP, i % 10), params)
            fd_worst = max(fd_worst, np.max(np.abs(fd.partials - full.partials)))
            vanilla = gradients.exact_policy_gradient(m, params, G, i % 10)
            fd = gradients.finite_difference_gradient(gradients.value_objective(m, G, i % 10), params)
            fd_worst = max(fd_worst, np.max(np.abs(fd.partials - vanilla.partials)))
            fd = gradients.finite_difference_gradient(gradients.first_partial_objective(m, params, G, GP, i % 10), params)
            fd_worst = max(fd_worst, np.max(np.abs(fd.partials - first.partials)))
    am = absorbing_mdp()
    ap = SoftmaxPolicyParams(rng.standard_normal((3, 2)))
    first_abs = gradients.exact_first_partial(am, ap, 0.5, 1.0, 0, absorbing_states=[2])
    fd = gradients.finite_difference_gradient(_frozen_occupancy_objective(am, ap, 0.5, 1.0, 0, [2]), ap)
    fd_worst = max(fd_worst, np.max(np.abs(fd.partials - first_abs.partials)))

    m, params = toy(0), SoftmaxPolicyParams(rng.standard_normal((10, 2)))
    q = exact.q_value(induce(m, params.policy()), G).table
    batch = sampling.simulate_batch(m, params.policy(), 0, 150, 10_000, seed=88)
    qs = [q[tr.states, tr.actions] for tr in batch]
    z = []
    for k, want in ((0, gradients.exact_policy_gradient(m, params, G, 0)), (200, gradients.exact_first_partial(m, params, G, GP, 0))):
        est = gradients.weighted_pg_estimate(batch, qs, ExpansionConfig(G, GP, k), params)
        z.append(bool(np.all(np.abs(est.partials - want.partials) <= 3 * est.std_error + SE_FLOOR)))
    ok = decomp <= 1e-9 and fd_worst <= 1e-6 and all(z)
    assert report(8, ok, f"decomposition residual {decomp:.1e}, finite-difference residual {fd_worst:.1e}, endpoints K=0 {z[0]} K=200 {z[1]}")


def _composition_counts(t_max, u_max):
    """count[u][t]: ordered ways to write t as u positive parts, by dynamic programming."""
    count = np.zeros((u_max + 1, t_max + 1), dtype=object)
    count[0][0] = 1
    for u in range(1, u_max + 1):
        for t in range(1, t_max + 1):
            count[u][t] = sum(count[u - 1][t - j] for j in range(1, t + 1))
    return count


def test_criterion_09_weight_schedules():
    pairs = [(0.2, 0.8), (0.5, 0.9), (0.9, 0.99), (0.0, 0.7)]
    exact_ok = all(
        exact.update_weight(0, t, g, gp) == g**t and all(exact.update_weight(k, t, g, gp) == gp**t for k in range(t, t + 3))
        for g, gp in pairs
        for t in range(40)
    )
    cross = 0.0
    for g, gp in pairs:
        for k in range(11):
            for t in range(31):
                rebuilt = g**t + sum(exact.f_weight(k, u, g, gp) * g ** (t - u) for u in range(1, t + 1))
                cross = max(cross, abs(rebuilt - exact.update_weight(k, t, g, gp)))
    counts = _composition_counts(30, 30)
    term = 0.0
    for g, gp in pairs:
        for k in range(1, 11):
            for t in range(1, 31):
                direct = sum(float(counts[u][t]) * (gp - g) ** u * g ** (t - u) for u in range(1, min(k, t) + 1))
                term = max(term, abs(direct - exact.f_weight(k, t, g, gp)))
    ok = exact_ok and cross <= 1e-12 and term <= 1e-12
    assert report(9, ok, f"endpoints exact: {exact_ok}, f/w cross-consistency {cross:.1e}, f vs composition count {term:.1e}")


def test_criterion_10_phased_coverage():
    m = toy(0, noise=0.0)
    pi = PolicyTable.uniform(10, 2)
    results, corrected, formula_err = [], [], 0.0
    for k in (0, 1, 3):
        for n in (100, 10_000):
            cfg = ExpansionConfig(G, GP, k)
            pc = bounds.PhasedTdConfig(n=n, delta=0.1, cfg=cfg, r_max=1.0)
            eps_formula = (1 - (GP - G) ** (k + 1)) / (1 - (GP - G))
            u_formula = 0.0 if k == 0 else math.sqrt(2 * math.log(2 * (k + 1) / 0.1) / n)
            formula_err = max(
                formula_err,
                abs(bounds.epsilon_factor(cfg) - eps_formula),
                abs(bounds.concentration_width(k, 0.1, n) - u_formula),
            )
            rep = bounds.empirical_coverage(m, pi, pc, trials=200, seed=10 * k + n)
            results.append((k, n, rep["coverage_fraction"], rep["threshold"], rep["pass"]))
            alt = bounds.empirical_coverage(m, pi, pc, trials=200, seed=10 * k + n, denominator="1-gamma_prime")
            corrected.append(alt["pass"])
    ok = all(r[4] for r in results) and formula_err <= 1e-15
    cells = "; ".join(f"K={k} n={n}: {f:.2f} vs {th:.2f}" for k, n, f, th, _ in results)
    note = f"with the gap term over (1 - gamma'): {sum(corrected)}/{len(corrected)} cells pass"
    assert report(10, ok, f"coverage {cells}; eps/U formula error {formula_err:.1e}; {note}")


def test_criterion_11_deep_rl_substituted():
    line = "CRITERION 11: SKIP (not reproducible at desk scale; substituted by criterion 12)"
    ACCEPTANCE_LINES.append(line)
    print(line)
    pytest.skip("deep-RL experiments are out of scope; criterion 12 is the substitute")


def test_criterion_12_update_weighting_non_inferior():
    t0 = time.perf_counter()
    horizon = 100
    gp = 1 - 1 / horizon

    def final(variant, k, s):
        tc = TrainConfig(variant, ExpansionConfig(0.9, gp, k), learning_rate=0.01, iterations=100, batch_size=10, horizon=horizon, seed=s)
        return gradients.train_tabular(toy(s), SoftmaxPolicyParams.zeros(10, 2), tc).final_return

    seeds = range(20)
    vanilla = np.array([final("vanilla", 0, s) for s in seeds])
    margin = 0.01 * vanilla.mean()
    parts, ok = [], True
    for k in (5, 10):
        weighted = np.array([final("update-weighting", k, s) for s in seeds])
        diff = weighted - vanilla
        se = diff.std(ddof=1) / math.sqrt(len(diff))
        lower = diff.mean() - stats.t.ppf(0.95, len(diff) - 1) * se
        effect = diff.mean() / diff.std(ddof=1)
        ok &= bool(lower > -margin)
        parts.append(f"K={k}: mean {weighted.mean():.2f} vs {vanilla.mean():.2f}, 95% lower bound of gain {lower:.2f}, d={effect:.2f}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 300
    assert report(12, ok, "; ".join(parts) + f"; margin {margin:.2f}; {elapsed:.1f}s")
