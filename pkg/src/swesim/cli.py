"""Command-line entry point for the pipeline stages."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from . import episode, grpo, metrics, mining, pipeline, tts
from .contexts import AnalysisCache, ContextConfig
from .episode import Environment, EpisodeConfig, Trajectory
from .gateway import (
    HttpBackend,
    MockBackend,
    ModelEndpoint,
    ModelGateway,
    ReplayBackend,
    endpoint_from_env,
)
from .instances import Instance, load_dataset
from .sandbox import Action, load_tree_from_dir, load_tree_from_tar


class CliError(Exception):
    """Operational failure: reported on stderr, exit code 1."""


def load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config file {path}: {exc}")


def resolve(args: argparse.Namespace, config: dict, key: str, env_var: str | None = None, default=None):
    """Precedence: explicit flag > env var > config file > default."""
    value = getattr(args, key.replace("-", "_"), None)
    if value is not None:
        return value
    if env_var and os.environ.get(env_var):
        return os.environ[env_var]
    if key in config:
        return config[key]
    return default


def load_mock_backend(path: str) -> MockBackend:
    backend = MockBackend()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        kind = record.get("kind")
        if "user_sha256" in record:
            backend.script_sha(kind, record["user_sha256"], record["completion"])
        elif "user_text" in record:
            backend.script(kind, record["user_text"], record["completion"])
        else:
            backend.script_wildcard(kind, record["completion"])
    return backend


def build_backend(spec: str):
    if spec == "http":
        return HttpBackend()
    if spec.startswith("mock:"):
        return load_mock_backend(spec[len("mock:"):])
    if spec.startswith("replay:"):
        return ReplayBackend(spec[len("replay:"):])
    raise CliError(f"unknown backend spec {spec!r}; use http, mock:<file>, or replay:<file>")


def workspace_provider_from_root(root: str):
    root_path = Path(root)

    def provider(instance: Instance) -> dict[str, str]:
        candidates = [
            root_path / instance.instance_id,
            root_path / f"{instance.instance_id}.tar.gz",
            root_path / f"{instance.instance_id}.tar",
        ]
        for candidate in candidates:
            if candidate.is_dir():
                return load_tree_from_dir(candidate)
            if candidate.is_file():
                return load_tree_from_tar(candidate)
        raise CliError(f"no workspace for {instance.instance_id} under {root}")

    return provider


def build_environment(args: argparse.Namespace, config: dict) -> Environment:
    backend_spec = resolve(args, config, "backend", default="http")
    backend = build_backend(backend_spec)
    gateway = ModelGateway(backend)
    swt = endpoint_from_env("swt", ModelEndpoint(model_name=str(resolve(args, config, "swt_model", default="swt"))))
    swr = endpoint_from_env("swr", ModelEndpoint(model_name=str(resolve(args, config, "swr_model", default="swr"))))

    workspace_root = resolve(args, config, "workspace_root", env_var="WORKSPACE_ROOT")
    if workspace_root:
        provider = workspace_provider_from_root(str(workspace_root))
    else:
        def provider(instance: Instance) -> dict[str, str]:
            raise CliError("no --workspace-root configured")

    analysis_path = resolve(args, config, "analysis_cache")
    if analysis_path:
        cache = AnalysisCache(analysis_path)
        analysis_provider = lambda instance: cache.get(instance.instance_id) or ""
    else:
        analysis_provider = lambda instance: ""

    return Environment(
        gateway=gateway,
        swt=swt,
        swr=swr,
        workspace_provider=provider,
        analysis_provider=analysis_provider,
        context_config=ContextConfig(),
    )


def load_dataset_map(args, config) -> dict[str, Instance]:
    path = resolve(args, config, "dataset", env_var="DATASET_PATH")
    if not path:
        raise CliError("no dataset configured (--dataset or DATASET_PATH)")
    instances, _ = load_dataset(path)
    return {i.instance_id: i for i in instances}


def write_manifest(out_path: str, args: argparse.Namespace, extra: dict | None = None) -> None:
    resolved = {k: v for k, v in vars(args).items() if k != "func" and v is not None}
    payload = json.dumps(resolved, sort_keys=True, default=str)
    manifest = {
        "config_sha256": hashlib.sha256(payload.encode()).hexdigest(),
        "seed": resolved.get("seed"),
        "argv": resolved,
    }
    manifest.update(extra or {})
    Path(str(out_path) + ".manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_agent_script(path: str) -> dict[str, list[tuple[str, Action]]]:
    """Agent scripts: JSONL of {instance_id, steps: [{thought, action}...]}."""
    scripts: dict[str, list[tuple[str, Action]]] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        steps = [(s.get("thought", ""), Action.from_dict(s["action"])) for s in record["steps"]]
        scripts[record["instance_id"]] = steps
    return scripts


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_episode_run(args) -> int:
    config = load_config_file(args.config)
    env = build_environment(args, config)
    dataset = load_dataset_map(args, config)
    instance = dataset.get(args.instance_id)
    if instance is None:
        raise CliError(f"instance {args.instance_id} not in dataset")
    scripts = load_agent_script(args.agent_script)
    if instance.instance_id not in scripts:
        raise CliError(f"agent script has no entry for {instance.instance_id}")
    episode_config = EpisodeConfig(max_turns=args.max_turns)
    traj = episode.run_episode(instance, episode.scripted_agent(scripts[instance.instance_id]), env, episode_config)
    if args.evaluate and instance.evaluable:
        episode.evaluate_trajectory(traj, instance, env)
    episode.write_trajectories(args.out, [traj])
    write_manifest(args.out, args, {"trajectories": 1})
    print(f"wrote 1 trajectory ({traj.termination}) to {args.out}")
    return 0


def cmd_collect(args) -> int:
    config = load_config_file(args.config)
    env = build_environment(args, config)
    dataset = load_dataset_map(args, config)
    scripts = load_agent_script(args.agent_script)
    targets = [i for i in dataset.values() if i.instance_id in scripts]
    if not targets:
        raise CliError("no dataset instances have agent scripts")
    episode_config = EpisodeConfig(max_turns=args.max_turns)

    def run_one(instance: Instance) -> Trajectory:
        traj = episode.run_episode(
            instance, episode.scripted_agent(scripts[instance.instance_id]), env, episode_config
        )
        if args.evaluate and instance.evaluable:
            episode.evaluate_trajectory(traj, instance, env)
        return traj

    if args.parallel > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=args.parallel) as pool:
            trajectories = list(pool.map(run_one, targets))
    else:
        trajectories = [run_one(i) for i in targets]
    episode.write_trajectories(args.out, trajectories)
    write_manifest(args.out, args, {"trajectories": len(trajectories)})
    print(f"wrote {len(trajectories)} trajectories to {args.out}")
    return 0


def cmd_extract(args) -> int:
    config = load_config_file(args.config)
    env = build_environment(args, config)
    dataset = load_dataset_map(args, config)
    trajectories = episode.read_trajectories(args.trajectories)
    n_trans = n_reward = 0
    with open(args.out, "w", encoding="utf-8") as fh:
        for traj in trajectories:
            instance = dataset.get(traj.instance_id)
            if instance is None:
                continue
            base_tree = env.workspace_provider(instance)
            samples, reward_sample = pipeline.extract_training_samples(
                traj, instance, base_tree, analysis=env.analysis_for(instance)
            )
            for sample in samples:
                record = pipeline.transition_training_record(sample)
                record["type"] = "transition"
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")
                n_trans += 1
            if reward_sample is not None:
                record = pipeline.reward_training_record(reward_sample)
                record["type"] = "reward"
                record["label"] = reward_sample.target[1]
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")
                n_reward += 1
    write_manifest(args.out, args, {"transition_samples": n_trans, "reward_samples": n_reward})
    print(f"wrote {n_trans} transition + {n_reward} reward samples to {args.out}")
    return 0


def cmd_filter(args) -> int:
    trajectories = episode.read_trajectories(args.trajectories)
    verdicts: dict[str, int] = {}
    if args.verdicts:
        for line in Path(args.verdicts).read_text(encoding="utf-8").splitlines():
            if line.strip():
                record = json.loads(line)
                verdicts[record["instance_id"]] = int(record["reward"])
    limits = pipeline.FilterLimits(max_turns=args.max_turns, max_tokens=args.max_tokens)
    kept: list[Trajectory] = []
    reasons: dict[str, int] = {}
    for traj in trajectories:
        verdict = pipeline.filter_trajectory(traj, limits, verdicts.get(traj.instance_id))
        if verdict.keep:
            kept.append(traj)
        else:
            reasons[verdict.reason] = reasons.get(verdict.reason, 0) + 1
    episode.write_trajectories(args.out, kept)
    report = {"total": len(trajectories), "kept": len(kept), "dropped_by_reason": reasons}
    write_manifest(args.out, args, report)
    print(json.dumps(report, indent=2))
    return 0


def cmd_balance(args) -> int:
    records = []
    for line in Path(args.samples).read_text(encoding="utf-8").splitlines():
        if line.strip():
            records.append(json.loads(line))
    rewards = [r for r in records if r.get("type") == "reward" or "label" in r]
    stubs = [
        pipeline.RewardSample(context=i, target=("", int(r["label"])))
        for i, r in enumerate(rewards)
    ]
    balanced = pipeline.balance_labels(stubs, seed=args.seed)
    keep_indices = {s.context for s in balanced}
    with open(args.out, "w", encoding="utf-8") as fh:
        for i, record in enumerate(rewards):
            if i in keep_indices:
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    write_manifest(args.out, args, {"input": len(rewards), "kept": len(keep_indices)})
    print(f"balanced {len(rewards)} reward samples down to {len(keep_indices)}")
    return 0


def cmd_mine(args) -> int:
    reference_keys: set[str] = set()
    if args.refs:
        for line in Path(args.refs).read_text(encoding="utf-8").splitlines():
            if line.strip():
                reference_keys.add(line.strip().lower())
    records = []
    for line in Path(args.input).read_text(encoding="utf-8").splitlines():
        if line.strip():
            records.append(json.loads(line))
    accepted, report = mining.mine_instances(records, reference_keys)
    with open(args.out, "w", encoding="utf-8") as fh:
        for candidate in accepted:
            fh.write(json.dumps(mining.candidate_to_instance_record(candidate), ensure_ascii=False) + "\n")
    write_manifest(args.out, args, report.to_dict())
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def cmd_tts_select(args) -> int:
    config = load_config_file(args.config)
    env = build_environment(args, config)
    dataset = load_dataset_map(args, config)
    candidates = episode.read_trajectories(args.candidates)
    if not candidates:
        raise CliError("no candidate trajectories")
    ids = {t.instance_id for t in candidates}
    if len(ids) != 1:
        raise CliError(f"candidates must share one instance, got {sorted(ids)}")
    instance = dataset.get(candidates[0].instance_id)
    if instance is None:
        raise CliError(f"instance {candidates[0].instance_id} not in dataset")
    winner, scores = tts.select_best(candidates, instance, env, n=args.n, m=args.m)
    report = tts.selection_report(winner, scores, m=args.m)
    sys.stdout.write(tts.format_score_table(winner, scores))
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2) + "\n")
        write_manifest(args.out, args)
    else:
        print(json.dumps(report, indent=2))
    return 0


def cmd_eval_reward_model(args) -> int:
    trajectories = episode.read_trajectories(args.trajectories)
    truth: dict[str, int] = {}
    for line in Path(args.labels).read_text(encoding="utf-8").splitlines():
        if line.strip():
            record = json.loads(line)
            truth[record["instance_id"]] = int(record["reward"])
    pairs = []
    for traj in trajectories:
        if traj.predicted_reward is None or traj.instance_id not in truth:
            continue
        pairs.append((traj.predicted_reward, truth[traj.instance_id]))
    if not pairs:
        raise CliError("no (prediction, label) pairs found")
    report = metrics.classification_metrics(pairs)
    payload = report.to_dict()
    payload["pairs"] = len(pairs)
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n")
    print(json.dumps(payload, indent=2))
    return 0


def cmd_grpo_check(args) -> int:
    import random as _random

    import numpy as np

    group = grpo.RolloutGroup.from_json(Path(args.group).read_text(encoding="utf-8"))
    config = grpo.GrpoConfig(eps_low=args.eps_low, eps_high=args.eps_high, l_max=args.l_max)
    value = grpo.objective(group, config)
    advantages = grpo.loo_advantage(group.returns)

    rng = _random.Random(args.seed)
    worst = 0.0
    checked = 0
    while checked < args.instances:
        theta, toy = grpo.random_toy_group(rng)
        if not grpo.is_smooth_point(theta, toy, config, margin=1e-3):
            continue
        worst = max(worst, grpo.grad_check(theta, toy, config, h=1e-5))
        checked += 1
    payload = {
        "objective": value,
        "advantages": advantages,
        "advantage_sum": float(np.sum(advantages)),
        "grad_check_instances": checked,
        "grad_check_max_relative_deviation": worst,
    }
    print(json.dumps(payload, indent=2))
    return 0 if worst <= 1e-5 else 1


def cmd_serve(args) -> int:
    from .service import ServiceConfig, run_service

    config = load_config_file(args.config)
    env = build_environment(args, config)
    dataset = load_dataset_map(args, config)
    bind = resolve(args, config, "bind", env_var="BIND_ADDR", default="127.0.0.1:8080")
    host, _, port = str(bind).rpartition(":")
    service_config = ServiceConfig(max_turns=args.max_turns)
    run_service(env, dataset, service_config, host or "127.0.0.1", int(port))
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--backend", help="http | mock:<file> | replay:<file>")
    parser.add_argument("--workspace-root", help="directory of per-instance checkouts/tarballs")
    parser.add_argument("--analysis-cache", help="JSONL initial-analysis cache")
    parser.add_argument("--dataset", help="instance dataset JSONL")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swesim", description="Docker-free SWE agent environment")
    sub = parser.add_subparsers(dest="command", required=True)

    ep = sub.add_parser("episode", help="episode operations")
    ep_sub = ep.add_subparsers(dest="subcommand", required=True)
    run_p = ep_sub.add_parser("run", help="run one scripted episode")
    _add_common(run_p)
    run_p.add_argument("--instance-id", required=True)
    run_p.add_argument("--agent-script", required=True)
    run_p.add_argument("--out", required=True)
    run_p.add_argument("--max-turns", type=int, default=150)
    run_p.add_argument("--evaluate", action="store_true")
    run_p.set_defaults(func=cmd_episode_run)

    collect_p = sub.add_parser("collect", help="batch scripted rollouts to trajectory JSONL")
    _add_common(collect_p)
    collect_p.add_argument("--agent-script", required=True)
    collect_p.add_argument("--out", required=True)
    collect_p.add_argument("--max-turns", type=int, default=100)
    collect_p.add_argument("--parallel", type=int, default=1)
    collect_p.add_argument("--seed", type=int, default=0)
    collect_p.add_argument("--evaluate", action="store_true")
    collect_p.set_defaults(func=cmd_collect)

    extract_p = sub.add_parser("extract", help="extract training samples from trajectories")
    _add_common(extract_p)
    extract_p.add_argument("--trajectories", required=True)
    extract_p.add_argument("--out", required=True)
    extract_p.set_defaults(func=cmd_extract)

    filter_p = sub.add_parser("filter", help="rule+verdict filtering of trajectories")
    filter_p.add_argument("--trajectories", required=True)
    filter_p.add_argument("--out", required=True)
    filter_p.add_argument("--verdicts", help="JSONL of {instance_id, reward}")
    filter_p.add_argument("--max-turns", type=int, default=100)
    filter_p.add_argument("--max-tokens", type=int, default=80_000)
    filter_p.set_defaults(func=cmd_filter)

    balance_p = sub.add_parser("balance", help="balance reward-sample labels 1:1")
    balance_p.add_argument("--samples", required=True)
    balance_p.add_argument("--out", required=True)
    balance_p.add_argument("--seed", type=int, default=0)
    balance_p.set_defaults(func=cmd_balance)

    mine_p = sub.add_parser("mine", help="filter crawled issue-PR dumps into instances")
    mine_p.add_argument("--input", required=True)
    mine_p.add_argument("--refs", help="file of existing repo#number keys")
    mine_p.add_argument("--out", required=True)
    mine_p.set_defaults(func=cmd_mine)

    tts_p = sub.add_parser("tts", help="test-time scaling")
    tts_sub = tts_p.add_subparsers(dest="subcommand", required=True)
    select_p = tts_sub.add_parser("select", help="pick the best candidate by verifier votes")
    _add_common(select_p)
    select_p.add_argument("--candidates", required=True)
    select_p.add_argument("-N", dest="n", type=int)
    select_p.add_argument("-M", dest="m", type=int, default=3)
    select_p.add_argument("--out")
    select_p.set_defaults(func=cmd_tts_select)

    eval_p = sub.add_parser("eval", help="evaluation reports")
    eval_sub = eval_p.add_subparsers(dest="subcommand", required=True)
    rm_p = eval_sub.add_parser("reward-model", help="score predicted rewards against labels")
    rm_p.add_argument("--trajectories", required=True)
    rm_p.add_argument("--labels", required=True)
    rm_p.add_argument("--out")
    rm_p.set_defaults(func=cmd_eval_reward_model)

    grpo_p = sub.add_parser("grpo", help="objective math")
    grpo_sub = grpo_p.add_subparsers(dest="subcommand", required=True)
    check_p = grpo_sub.add_parser("check", help="objective value and gradient check")
    check_p.add_argument("--group", required=True, help="JSON rollout group")
    check_p.add_argument("--eps-low", type=float, default=0.2)
    check_p.add_argument("--eps-high", type=float, default=0.2)
    check_p.add_argument("--l-max", type=int, default=1024)
    check_p.add_argument("--instances", type=int, default=25)
    check_p.add_argument("--seed", type=int, default=0)
    check_p.set_defaults(func=cmd_grpo_check)

    serve_p = sub.add_parser("serve", help="run the environment HTTP service")
    _add_common(serve_p)
    serve_p.add_argument("--bind", help="host:port (default 127.0.0.1:8080)")
    serve_p.add_argument("--max-turns", type=int, default=150)
    serve_p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
