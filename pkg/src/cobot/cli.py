"""Command-line interface: validate, compile, simulate, sweep, serve.

Every simulate/sweep run writes a manifest next to its output with the full
configuration and seeds; re-running `--from-manifest` reproduces the CSV
byte for byte.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import __version__
from .benchmarks import BENCHMARK_NAMES, build_benchmark
from .harness import (
    EnvConfig,
    POLICY_IDS,
    make_policy,
    preference_sweep,
    run_batch,
    write_episode_csv,
    write_sweep_csv,
    write_trace_log,
)
from .htm import HtmError, parse_htm_file, validate_htm
from .model import NoiseConfig, RewardParams, compile_model
from .planner import SearchConfig

CONFIG_ENV_VAR = "COBOT_CONFIG"


class CliError(Exception):
    pass


def _load_config_file(path: str | None) -> dict:
    """Shared config file: reward overrides, noise, gamma, search settings."""
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
    if not path:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise CliError(f"config file {path} is not valid JSON: {e}")


def _load_htm(args_ns, cfg: dict):
    if getattr(args_ns, "htm", None):
        return parse_htm_file(args_ns.htm)
    benchmark = getattr(args_ns, "benchmark", None) or cfg.get("benchmark")
    if benchmark:
        params = dict(cfg.get("benchmark_params", {}))
        raw = getattr(args_ns, "benchmark_params", None)
        if raw:
            params.update(json.loads(raw))
        return build_benchmark(benchmark, **params)
    raise CliError("provide --htm FILE or --benchmark NAME")


def _build_model(args_ns, cfg: dict):
    htm = _load_htm(args_ns, cfg)
    diags = validate_htm(htm)
    if diags:
        raise CliError("invalid task model: " + "; ".join(map(str, diags)))
    rewards = RewardParams(**cfg.get("rewards", {}))
    return compile_model(
        htm,
        gamma=cfg.get("gamma", 0.95),
        rewards=rewards,
        interleaving_cap=cfg.get("interleaving_cap", 64),
        pref_prior=cfg.get("pref_prior", 0.5),
    )


def _env_config(args_ns, cfg: dict) -> EnvConfig:
    noise_cfg = dict(cfg.get("noise", {}))
    if getattr(args_ns, "noise", None) is not None:
        noise_cfg["eps_object"] = args_ns.noise
    noise = NoiseConfig(
        eps_object=noise_cfg.get("eps_object", 0.01),
        eps_pref=noise_cfg.get("eps_pref", 0.0),
        manipulation_success=noise_cfg.get("manipulation_success", 0.95),
    )
    prior = cfg.get("pref_prior", 0.5)
    if getattr(args_ns, "p_hold", None) is not None:
        prior = args_ns.p_hold
    return EnvConfig(
        noise=noise, pref_prior=prior, max_steps=cfg.get("max_steps")
    )


def _search_config(args_ns, cfg: dict) -> SearchConfig:
    search = dict(cfg.get("search", {}))
    if getattr(args_ns, "sims", None) is not None:
        search["n_simulations"] = args_ns.sims
    if getattr(args_ns, "horizon_subtasks", None) is not None:
        search["horizon_subtasks"] = args_ns.horizon_subtasks
    return SearchConfig(**search)


def _write_manifest(path: str, payload: dict) -> None:
    payload = dict(payload)
    payload["version"] = __version__
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _manifest_path(out: str) -> str:
    base, _ = os.path.splitext(out)
    return base + ".manifest.json"


# ---------------------------------------------------------------------------
# Subcommands


def cmd_validate(args) -> int:
    try:
        htm = parse_htm_file(args.htm)
    except HtmError as e:
        print(f"error: {e}")
        return 1
    diags = validate_htm(htm)
    for d in diags:
        print(f"{d.path}: {d.message}")
    if diags:
        return 1
    print(f"ok: {args.htm}")
    return 0


def cmd_compile(args) -> int:
    cfg = _load_config_file(args.config)
    model = _build_model(args, cfg)
    print(f"instances: {len(model.instances)}")
    lengths = sorted({len(i) for i in model.instances})
    print(f"instance length: {lengths[0]}" + (f"..{lengths[-1]}" if len(lengths) > 1 else ""))
    print(f"actions: {len(model.actions)}")
    print(f"state features: {model.n_state_features}")
    print(f"states: {model.n_states}")
    print(f"objects: {', '.join(o.id for o in model.objects) or '-'}")
    print(f"preferences: {', '.join(model.preferences) or '-'}")
    return 0


def _replay_manifest(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def cmd_simulate(args) -> int:
    if args.from_manifest:
        m = _replay_manifest(args.from_manifest)
        ns = argparse.Namespace(**m["args"])
        ns.from_manifest = None
        return cmd_simulate(ns)

    cfg = _load_config_file(args.config)
    model = _build_model(args, cfg)
    env = _env_config(args, cfg)
    search = _search_config(args, cfg)
    policy = make_policy(args.policy, model, env, search)
    stats, records = run_batch(
        model,
        policy,
        args.n,
        env,
        base_seed=args.seed,
        jobs=args.jobs,
        keep_trace=bool(args.trace),
        policy_id=args.policy,
    )
    write_episode_csv(args.out, stats)
    if args.trace:
        write_trace_log(args.trace, records)
    _write_manifest(
        _manifest_path(args.out),
        {"command": "simulate", "args": _reproducible_args(args)},
    )
    print(
        f"{args.policy}: n={stats.n} mean={stats.mean:.2f} std={stats.std:.2f} "
        f"terminated={sum(stats.terminated)}/{stats.n} -> {args.out}"
    )
    return 0


def cmd_sweep(args) -> int:
    if args.from_manifest:
        m = _replay_manifest(args.from_manifest)
        ns = argparse.Namespace(**m["args"])
        ns.from_manifest = None
        return cmd_sweep(ns)

    cfg = _load_config_file(args.config)
    if not getattr(args, "htm", None) and not getattr(args, "benchmark", None):
        # The preference experiment defaults to the single leg-assembly task.
        args.benchmark = "table"
        if not getattr(args, "benchmark_params", None):
            args.benchmark_params = '{"legs": 1, "attach": false, "screw_steps": 4}'
    cfg.setdefault("search", {})
    cfg["search"].setdefault("n_simulations", 1024)
    cfg["search"].setdefault("horizon_subtasks", 4)
    model = _build_model(args, cfg)
    env = _env_config(args, cfg)
    search = _search_config(args, cfg)
    strategies = args.strategies.split(",")
    grid = [i / (args.points - 1) for i in range(args.points)] if args.points > 1 else [0.5]
    cells = preference_sweep(
        model, strategies, grid, args.n, env, search, base_seed=args.seed, jobs=args.jobs
    )
    write_sweep_csv(args.out, cells)
    _write_manifest(
        _manifest_path(args.out),
        {"command": "sweep", "args": _reproducible_args(args)},
    )
    print(f"sweep: {len(cells)} cells ({args.points} priors x {strategies}) -> {args.out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    cfg = _load_config_file(args.config)
    static_dir = cfg.get("console_dir")
    if static_dir is None:
        candidate = os.path.join(os.getcwd(), "frontend", "dist")
        if os.path.isdir(candidate):
            static_dir = candidate
    app = create_app(default_config=cfg, static_dir=static_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def _reproducible_args(args) -> dict:
    ns = {
        k: v
        for k, v in vars(args).items()
        if k not in ("func", "from_manifest")
    }
    return ns


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cobot",
        description="Compile task models into generative POMDPs and evaluate supportive policies.",
    )
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a task-model document")
    v.add_argument("--htm", required=True, help="task model file (JSON)")
    v.set_defaults(func=cmd_validate)

    def add_model_args(sp, benchmark_default: str | None = None):
        sp.add_argument("--htm", help="task model file (JSON)")
        sp.add_argument(
            "--benchmark",
            choices=BENCHMARK_NAMES,
            default=benchmark_default,
            help="built-in benchmark model",
        )
        sp.add_argument(
            "--benchmark-params",
            help="JSON object with benchmark parameter overrides",
        )
        sp.add_argument("--config", help=f"config file (or ${CONFIG_ENV_VAR})")

    c = sub.add_parser("compile", help="compile a model and print its summary")
    add_model_args(c)
    c.set_defaults(func=cmd_compile)

    s = sub.add_parser("simulate", help="run a batch of seeded episodes")
    add_model_args(s)
    s.add_argument("--policy", choices=POLICY_IDS, default="pomcp")
    s.add_argument("--n", type=int, default=100, help="episode count")
    s.add_argument("--seed", type=int, default=0, help="base seed")
    s.add_argument("--noise", type=float, help="per-step object toggle probability")
    s.add_argument("--p-hold", type=float, dest="p_hold", help="hold-preference prior")
    s.add_argument("--sims", type=int, help="planner simulations per decision")
    s.add_argument(
        "--horizon-subtasks", type=int, dest="horizon_subtasks", help="search horizon"
    )
    s.add_argument("--jobs", type=int, default=1, help="parallel episode workers")
    s.add_argument("--out", default="episodes.csv", help="output CSV path")
    s.add_argument("--trace", help="also write a step-level JSONL trace log")
    s.add_argument("--from-manifest", help="re-run a recorded manifest")
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", help="preference sweep across strategies")
    add_model_args(w, benchmark_default=None)
    w.add_argument(
        "--strategies", default="pomcp,always-hold,never-hold", help="comma-separated policy ids"
    )
    w.add_argument("--points", type=int, default=20, help="grid size over [0, 1]")
    w.add_argument("--n", type=int, default=100, help="episodes per cell")
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--noise", type=float, help="per-step object toggle probability")
    w.add_argument("--sims", type=int, help="planner simulations per decision")
    w.add_argument(
        "--horizon-subtasks", type=int, dest="horizon_subtasks", help="search horizon"
    )
    w.add_argument("--jobs", type=int, default=1)
    w.add_argument("--out", default="sweep.csv")
    w.add_argument("--from-manifest", help="re-run a recorded manifest")
    w.set_defaults(func=cmd_sweep)

    r = sub.add_parser("serve", help="start the live session service")
    r.add_argument("--config", help=f"config file (or ${CONFIG_ENV_VAR})")
    r.add_argument("--host", default="127.0.0.1")
    r.add_argument("--port", type=int, default=8400)
    r.set_defaults(func=cmd_serve)

    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, HtmError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
