"""``dtx`` command-line harness.

Every command resolves its parameters as defaults < ``--config`` JSON <
explicit flags, runs, and writes CSV or JSON with the resolved config and
library version embedded. Exit codes: 0 ok, 2 bad parameters, 3 numerical
failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__, bounds, experiments, gradients, io
from .errors import DtxError, DtxIOError, ParameterError
from .exact import ExpansionConfig
from .mdp import PolicyTable, TabularMdp, random_mdp

MDP_DEFAULTS = {"states": 10, "actions": 2, "alpha": 0.01, "noise": 0.2, "mdp": None, "mdp_seed": None}

DEFAULTS = {
    "gen-mdp": {},
    "fig-tradeoff": {
        "gamma": 0.2,
        "gamma_prime": 0.8,
        "k_max": 20,
        "trajectories": 10,
        "repetitions": 50,
        "horizon": 1000,
        "start": 0,
    },
    "fig-optimal-k": {
        "gamma": 0.2,
        "gamma_prime": 0.8,
        "k_max": 20,
        "trajectories": 10,
        "repetitions": 100,
        "horizon": 1000,
        "start": 0,
        "sigmas": list(experiments.DEFAULT_SIGMAS),
    },
    "grad-demo": {"gamma": 0.2, "gamma_prime": 0.8, "start": 0, "fd_step": 1e-5, "logit_scale": 1.0},
    "bounds": {
        "gamma": 0.2,
        "gamma_prime": 0.8,
        "order": 1,
        "n": 10000,
        "delta": 0.1,
        "trials": 200,
        "phases": 10,
        "td_lambda": 0.0,
        "a_gamma_delta": None,
        "r_max": None,
        "gap_denominator": "1-gamma",
    },
    "train": {
        "gamma": 0.9,
        "gamma_prime": None,
        "orders": [5, 10],
        "variants": ["vanilla", "update-weighting", "heuristic", "q-expansion"],
        "seeds": 1,
        "learning_rate": 0.01,
        "iterations": 100,
        "batch": 10,
        "horizon": 100,
        "eta": 0.01,
        "start": 0,
        "normalize": False,
    },
}

TRAIN_COLUMNS = (
    "variant",
    "seed",
    "iteration",
    "undiscounted_return",
    "K",
    "gamma",
    "gamma_prime",
    "eta",
    "diverged",
)


def _floats(text: str) -> list:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list:
    return [int(v) for v in text.split(",") if v.strip()]


def _strs(text: str) -> list:
    return [v.strip() for v in text.split(",") if v.strip()]


def _add_mdp_flags(p):
    g = p.add_argument_group("MDP")
    g.add_argument("--mdp", help="MDP JSON file written by gen-mdp (otherwise a random MDP is drawn)")
    g.add_argument("--states", type=int)
    g.add_argument("--actions", type=int)
    g.add_argument("--alpha", type=float, help="Dirichlet concentration of transition rows")
    g.add_argument("--noise", type=float, help="multiplicative reward noise std")
    g.add_argument("--mdp-seed", type=int, help="seed for the random MDP (defaults to --seed)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dtx", description="Taylor expansions of discount factors.")
    parser.add_argument("--version", action="version", version=f"dtx {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of parameters; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output path (default stdout)")
    common.add_argument("--no-timestamp", action="store_true", default=None, help="omit the timestamp from metadata")

    def discounts(p):
        p.add_argument("--gamma", type=float)
        p.add_argument("--gamma-prime", type=float)

    p = sub.add_parser("gen-mdp", parents=[common], help="draw a random toy MDP")
    _add_mdp_flags(p)

    for name, helptext in (("fig-tradeoff", "error vs expansion order"), ("fig-optimal-k", "optimal order vs base noise")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        _add_mdp_flags(p)
        discounts(p)
        p.add_argument("--k-max", type=int)
        p.add_argument("--trajectories", type=int, help="trajectories averaged per repetition")
        p.add_argument("--repetitions", type=int)
        p.add_argument("--horizon", type=int)
        p.add_argument("--start", type=int)
        if name == "fig-optimal-k":
            p.add_argument("--sigmas", type=_floats, help="comma-separated noise levels")

    p = sub.add_parser("grad-demo", parents=[common], help="exact gradient decomposition with finite-difference check")
    _add_mdp_flags(p)
    discounts(p)
    p.add_argument("--start", type=int)
    p.add_argument("--fd-step", type=float)
    p.add_argument("--logit-scale", type=float, help="std of the random policy logits")

    p = sub.add_parser("bounds", parents=[common], help="empirical coverage of the phased error bound")
    _add_mdp_flags(p)
    discounts(p)
    p.add_argument("--order", type=int, help="expansion order K")
    p.add_argument("--n", type=int, help="samples per state per phase")
    p.add_argument("--delta", type=float)
    p.add_argument("--trials", type=int)
    p.add_argument("--phases", type=int)
    p.add_argument("--td-lambda", type=float, help="lambda of the contraction B(gamma)")
    p.add_argument("--a-gamma-delta", type=float, help="override the Hoeffding default for A(gamma, delta)")
    p.add_argument("--r-max", type=float)
    p.add_argument("--gap-denominator", choices=("1-gamma", "1-gamma_prime"))

    p = sub.add_parser("train", parents=[common], help="tabular policy-gradient learning curves")
    _add_mdp_flags(p)
    discounts(p)
    p.add_argument("--orders", type=_ints, help="comma-separated K values for the weighted variants")
    p.add_argument("--variants", type=_strs, help="comma-separated subset of " + ",".join(gradients.VARIANTS))
    p.add_argument("--seeds", type=int, help="number of seeds, run as seed, seed+1, ...")
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--start", type=int)
    p.add_argument("--normalize", action="store_true", default=None, help="self-normalize batch weights")
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicitly given flags."""
    cfg = {"seed": 0, "out": None, "no_timestamp": False, **MDP_DEFAULTS, **DEFAULTS[args.command]}
    if args.config:
        try:
            loaded = json.loads(io.read_text(args.config))
        except json.JSONDecodeError as exc:
            raise ParameterError(f"config {args.config} is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise ParameterError("config file must hold a JSON object")
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        cfg[key] = value
    return cfg


def _mdp(cfg: dict) -> TabularMdp:
    if cfg.get("mdp"):
        try:
            return TabularMdp.from_json(io.read_text(cfg["mdp"]))
        except json.JSONDecodeError as exc:
            raise ParameterError(f"MDP file is not valid JSON: {exc}") from None
    seed = cfg["seed"] if cfg.get("mdp_seed") is None else cfg["mdp_seed"]
    return random_mdp(cfg["states"], cfg["actions"], cfg["alpha"], seed, reward_noise_std=cfg["noise"])


def _config_echo(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if k not in ("out", "no_timestamp")}


def _meta(cfg: dict, command: str) -> dict:
    return io.metadata(_config_echo(cfg), command, timestamp=not cfg["no_timestamp"])


def cmd_gen_mdp(cfg: dict) -> str:
    mdp = _mdp(cfg)
    return io.dumps_json({**mdp.to_dict(), "metadata": _meta(cfg, "gen-mdp")})


def _setup(cfg: dict) -> experiments.SweepSetup:
    mdp = _mdp(cfg)
    return experiments.SweepSetup(
        mdp=mdp,
        policy=PolicyTable.uniform(mdp.num_states, mdp.num_actions),
        cfg=ExpansionConfig(cfg["gamma"], cfg["gamma_prime"], cfg["k_max"]),
        start=cfg["start"],
        num_trajectories=cfg["trajectories"],
        horizon=cfg["horizon"],
        seed=cfg["seed"],
    )


def cmd_fig_tradeoff(cfg: dict) -> str:
    rows, _ = experiments.tradeoff_curve(_setup(cfg), cfg["repetitions"])
    return io.render_csv(rows, experiments.TRADEOFF_COLUMNS, _meta(cfg, "fig-tradeoff"))


def cmd_fig_optimal_k(cfg: dict) -> str:
    rows, _ = experiments.optimal_k_sweep(_setup(cfg), cfg["sigmas"], cfg["repetitions"])
    return io.render_csv(rows, experiments.OPTIMAL_K_COLUMNS, _meta(cfg, "fig-optimal-k"))


def cmd_grad_demo(cfg: dict) -> str:
    mdp = _mdp(cfg)
    rng = np.random.default_rng(cfg["seed"])
    params = gradients.SoftmaxPolicyParams(cfg["logit_scale"] * rng.standard_normal((mdp.num_states, mdp.num_actions)))
    g, gp, start, step = cfg["gamma"], cfg["gamma_prime"], cfg["start"], cfg["fd_step"]
    full, first, second = gradients.exact_gradient_decomposition(mdp, params, g, gp, start)
    fd_full = gradients.finite_difference_gradient(gradients.value_objective(mdp, gp, start), params, step)
    fd_first = gradients.finite_difference_gradient(
        gradients.first_partial_objective(mdp, params, g, gp, start), params, step
    )
    doc = {
        "logits": params.logits,
        "full": full.partials,
        "first": first.partials,
        "second": second.partials,
        "norms": {"full": full.norm, "first": first.norm, "second": second.norm},
        "decomposition_residual": float(np.max(np.abs(full.partials - first.partials - second.partials))),
        "fd_residual_full": float(np.max(np.abs(fd_full.partials - full.partials))),
        "fd_residual_first": float(np.max(np.abs(fd_first.partials - first.partials))),
        "metadata": _meta(cfg, "grad-demo"),
    }
    return io.dumps_json(doc)


def cmd_bounds(cfg: dict) -> str:
    mdp = _mdp(cfg)
    pc = bounds.PhasedTdConfig(
        n=cfg["n"],
        delta=cfg["delta"],
        cfg=ExpansionConfig(cfg["gamma"], cfg["gamma_prime"], cfg["order"]),
        r_max=mdp.r_max if cfg["r_max"] is None else cfg["r_max"],
        a_gamma_delta=cfg["a_gamma_delta"],
        b_gamma=bounds.td_lambda_contraction(cfg["gamma"], cfg["td_lambda"]),
        phases=cfg["phases"],
        num_states=mdp.num_states,
    )
    policy = PolicyTable.uniform(mdp.num_states, mdp.num_actions)
    report = bounds.empirical_coverage(mdp, policy, pc, cfg["trials"], cfg["seed"], cfg["gap_denominator"])
    report["epsilon"] = bounds.epsilon_factor(pc.cfg)
    report["u"] = bounds.concentration_width(pc.cfg.order_k, pc.delta, pc.n)
    report["metadata"] = _meta(cfg, "bounds")
    return io.dumps_json(report)


def cmd_train(cfg: dict) -> str:
    mdp = _mdp(cfg)
    horizon = cfg["horizon"]
    gp = 1.0 - 1.0 / horizon if cfg["gamma_prime"] is None else cfg["gamma_prime"]
    cfg = {**cfg, "gamma_prime": gp}
    unknown = set(cfg["variants"]) - set(gradients.VARIANTS)
    if unknown:
        raise ParameterError(f"unknown variants {sorted(unknown)}")
    runs = []
    for variant in cfg["variants"]:
        orders = [0] if variant == "vanilla" else cfg["orders"]
        runs += [(variant, k) for k in orders]
    init = gradients.SoftmaxPolicyParams.zeros(mdp.num_states, mdp.num_actions)
    rows = []
    for variant, k in sorted(runs):
        for seed in range(cfg["seed"], cfg["seed"] + cfg["seeds"]):
            tc = gradients.TrainConfig(
                variant=variant,
                cfg=ExpansionConfig(cfg["gamma"], gp, k),
                learning_rate=cfg["learning_rate"],
                iterations=cfg["iterations"],
                batch_size=cfg["batch"],
                seed=seed,
                eta=cfg["eta"],
                horizon=horizon,
                start=cfg["start"],
                normalize=bool(cfg["normalize"]),
            )
            curve = gradients.train_tabular(mdp, init, tc)
            for it, ret in enumerate(curve.returns):
                rows.append(
                    {
                        "variant": variant,
                        "seed": seed,
                        "iteration": it,
                        "undiscounted_return": ret,
                        "K": k,
                        "gamma": cfg["gamma"],
                        "gamma_prime": gp,
                        "eta": cfg["eta"],
                        "diverged": curve.diverged and it == len(curve.returns) - 1,
                    }
                )
    return io.render_csv(rows, TRAIN_COLUMNS, _meta(cfg, "train"))


COMMANDS = {
    "gen-mdp": cmd_gen_mdp,
    "fig-tradeoff": cmd_fig_tradeoff,
    "fig-optimal-k": cmd_fig_optimal_k,
    "grad-demo": cmd_grad_demo,
    "bounds": cmd_bounds,
    "train": cmd_train,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        text = COMMANDS[args.command](cfg)
        io.write_text(cfg["out"], text)
    except DtxError as exc:
        print(f"dtx {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"dtx {args.command}: {exc}", file=sys.stderr)
        return DtxIOError.exit_code
    except (TypeError, KeyError) as exc:
        print(f"dtx {args.command}: bad configuration: {exc}", file=sys.stderr)
        return ParameterError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
