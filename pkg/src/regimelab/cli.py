"""Command line pipeline: simulate -> build-dataset -> train -> deploy.

Each subcommand reads artifacts the previous one left in the run directory
and writes its own next to them, plus a small manifest recording the
resolved configuration. Nothing embeds timestamps or host state, so a rerun
with the same config and seed reproduces every artifact byte for byte.

Exit codes: 0 success, 2 bad configuration or arguments, 3 missing or
corrupt input artifacts, 4 a training stage diverged.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .adaptloop import (
    DeployConfig,
    MarketStream,
    StageFailure,
    run_deployment,
    run_frozen_baseline,
    steps_to_csv,
    windows_to_csv,
)
from .config import ConfigError, RunConfig, config_fingerprint, load_config
from .dataset import (
    RM_LABEL_TO_INDEX,
    Example,
    build_examples,
    examples_from_jsonl,
    examples_to_jsonl,
    label_counts,
    make_preference_dataset,
    preferences_from_jsonl,
    preferences_to_jsonl,
    split_dataset,
    synthesize_news_embeddings,
)
from .featurize import compute_indicators, indicator_table_to_csv
from .igtools import (
    EmbeddingSet,
    cluster_embeddings,
    ig_report,
    save_embeddings_csv,
    tsne_embed,
)
from .ioutil import atomic_write_text
from .market_sim import (
    price_series_from_csv,
    price_series_to_csv,
    regime_path_from_csv,
    regime_path_to_csv,
    simulate_market,
)
from .metrics import classification_report, report_to_json
from .models import (
    FeatureConfig,
    Policy,
    ReferencePolicy,
    RewardModel,
    features_and_labels,
    features_from_example,
    init_reward_model_from_policy,
    load_checkpoint,
    save_checkpoint,
)
from .seeding import derive_seed, rng_for
from .trainer import (
    PreferenceSet,
    TrainingDiverged,
    curve_to_csv,
    run_policy_optimization,
    train_reward_model,
    train_sft,
)

# Substream indices for the pipeline's own randomness. Stage internals
# derive further streams from these, so the offsets only need to be
# distinct from each other.
_STREAM_POLICY_INIT = 0
_STREAM_RM_INIT = 1
_STREAM_RL = 2
_STREAM_SFT_BATCHES = 3
_STREAM_RM_BATCHES = 4
_STREAM_DEPLOY = 5
_STREAM_EVAL_SAMPLING = 6
_STREAM_NEWS = 10
_STREAM_PREFS = 11


class DataError(RuntimeError):
    """A required artifact is missing or unreadable."""


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _read_artifact(run_dir: Path, name: str) -> str:
    path = run_dir / name
    try:
        return path.read_text()
    except OSError as exc:
        raise DataError(
            f"cannot read {path} ({exc.strerror or exc}); run the earlier pipeline stages first"
        ) from exc


def _load_examples(run_dir: Path, name: str) -> list[Example]:
    text = _read_artifact(run_dir, name)
    try:
        return examples_from_jsonl(text)
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{run_dir / name} is corrupt: {exc}") from exc


def _load_model(run_dir: Path, name: str):
    path = run_dir / name
    if not path.is_file():
        raise DataError(f"checkpoint {path} not found; run the earlier training stages first")
    try:
        return load_checkpoint(path)
    except (ValueError, OSError) as exc:
        raise DataError(f"checkpoint {path} is corrupt: {exc}") from exc


def _feature_config(config: RunConfig) -> FeatureConfig:
    return FeatureConfig(depth=config.dataset.depth, news_dim=config.dataset.news_dim)


def _write_manifest(run_dir: Path, command: str, config: RunConfig, outputs: list[str]) -> None:
    manifest = {
        "command": command,
        "config": config_fingerprint(config),
        "outputs": sorted(outputs),
    }
    text = json.dumps(manifest, indent=2, sort_keys=True, allow_nan=False) + "\n"
    atomic_write_text(run_dir / f"{command}_manifest.json", text)


# ------------------------------------------------------------------ commands


def _cmd_simulate(config: RunConfig, run_dir: Path) -> int:
    spec = config.simulate.build_spec()
    result = simulate_market(
        spec,
        config.simulate.horizon,
        seed=config.seed,
        init_price=config.simulate.init_price,
        o_init=config.simulate.o_init,
    )
    table = compute_indicators(result.series)
    atomic_write_text(run_dir / "prices.csv", price_series_to_csv(result.series))
    atomic_write_text(run_dir / "indicators.csv", indicator_table_to_csv(table))
    atomic_write_text(run_dir / "regimes.csv", regime_path_to_csv(result.path))
    _write_manifest(run_dir, "simulate", config, ["prices.csv", "indicators.csv", "regimes.csv"])
    print(f"simulated {config.simulate.horizon} steps -> {run_dir}/prices.csv")
    return 0


def _cmd_build_dataset(config: RunConfig, run_dir: Path) -> int:
    try:
        series = price_series_from_csv(_read_artifact(run_dir, "prices.csv"))
        path = regime_path_from_csv(
            _read_artifact(run_dir, "regimes.csv"), len(config.simulate.mu)
        )
    except ValueError as exc:
        raise DataError(f"simulation artifacts in {run_dir} are corrupt: {exc}") from exc

    table = compute_indicators(series)
    news = None
    if config.dataset.news_dim > 0:
        news = synthesize_news_embeddings(
            path,
            dim=config.dataset.news_dim,
            snr=config.dataset.news_snr,
            seed=derive_seed(config.seed, _STREAM_NEWS),
        )
    examples = build_examples(
        series,
        table,
        news_embeddings=news,
        depth=config.dataset.depth,
        base_date=config.dataset.base_date,
    )
    if not examples:
        raise DataError("simulation too short to build any examples; increase simulate.horizon")
    train, test, holdout = split_dataset(
        examples,
        ratios=tuple(config.dataset.ratios),
        seed=config.seed,
        shuffle=config.dataset.shuffle,
    )
    pairs = make_preference_dataset(train, seed=derive_seed(config.seed, _STREAM_PREFS))

    atomic_write_text(run_dir / "train.jsonl", examples_to_jsonl(train))
    atomic_write_text(run_dir / "test.jsonl", examples_to_jsonl(test))
    atomic_write_text(run_dir / "eval.jsonl", examples_to_jsonl(holdout))
    atomic_write_text(run_dir / "preferences.jsonl", preferences_to_jsonl(pairs))
    stats = {
        "n_examples": len(examples),
        "splits": {
            "train": {"n": len(train), "labels": label_counts(train)},
            "test": {"n": len(test), "labels": label_counts(test)},
            "eval": {"n": len(holdout), "labels": label_counts(holdout)},
        },
        "n_preference_pairs": len(pairs),
    }
    atomic_write_text(
        run_dir / "dataset_stats.json",
        json.dumps(stats, indent=2, sort_keys=True, allow_nan=False) + "\n",
    )
    _write_manifest(
        run_dir,
        "build-dataset",
        config,
        ["train.jsonl", "test.jsonl", "eval.jsonl", "preferences.jsonl", "dataset_stats.json"],
    )
    print(
        f"built {len(examples)} examples "
        f"({len(train)}/{len(test)}/{len(holdout)} train/test/eval) -> {run_dir}"
    )
    return 0


def _featurize_pairs(
    pairs, examples: list[Example], feat_config: FeatureConfig
) -> PreferenceSet:
    by_id = {ex.id: ex for ex in examples}
    rows, chosen, rejected = [], [], []
    for pair in pairs:
        ex = by_id.get(pair.prompt_id)
        if ex is None:
            raise DataError(f"preference pair references unknown example {pair.prompt_id!r}")
        rows.append(features_from_example(ex, feat_config))
        chosen.append(RM_LABEL_TO_INDEX[pair.chosen])
        rejected.append(RM_LABEL_TO_INDEX[pair.rejected])
    if not rows:
        raise DataError("preference dataset is empty")
    return PreferenceSet(np.stack(rows), np.array(chosen), np.array(rejected))


def _cmd_train(config: RunConfig, run_dir: Path, stage: str) -> int:
    feat_config = _feature_config(config)
    train_examples = _load_examples(run_dir, "train.jsonl")
    X, y = features_and_labels(train_examples, feat_config)

    if stage == "sft":
        policy = Policy(
            X.shape[1],
            arch=config.model.arch,
            hidden=config.model.hidden,
            seed=derive_seed(config.seed, _STREAM_POLICY_INIT),
        )
        sft_config = replace(
            config.train.sft, seed=derive_seed(config.seed, _STREAM_SFT_BATCHES)
        )
        curve = train_sft(policy, X, y, sft_config)
        save_checkpoint(policy, run_dir / "sft.ckpt")
        rows = [{"step": i, "loss": v} for i, v in enumerate(curve)]
        atomic_write_text(run_dir / "sft_curve.csv", curve_to_csv(rows))
        _write_manifest(run_dir, "train-sft", config, ["sft.ckpt", "sft_curve.csv"])
        print(f"sft: final loss {curve[-1]:.4f} over {len(curve)} epochs -> {run_dir}/sft.ckpt")
        return 0

    if stage == "rm":
        policy = _load_model(run_dir, "sft.ckpt")
        if not isinstance(policy, Policy):
            raise DataError("sft.ckpt does not hold a policy checkpoint")
        try:
            pairs_raw = preferences_from_jsonl(_read_artifact(run_dir, "preferences.jsonl"))
        except (ValueError, KeyError) as exc:
            raise DataError(f"{run_dir / 'preferences.jsonl'} is corrupt: {exc}") from exc
        pairs = _featurize_pairs(pairs_raw, train_examples, feat_config)
        rm = init_reward_model_from_policy(
            policy, seed=derive_seed(config.seed, _STREAM_RM_INIT)
        )
        rm_config = replace(config.train.rm, seed=derive_seed(config.seed, _STREAM_RM_BATCHES))
        report = train_reward_model(rm, pairs, rm_config)
        save_checkpoint(rm, run_dir / "rm.ckpt")
        rows = [{"step": i, "loss": v} for i, v in enumerate(report.losses)]
        atomic_write_text(run_dir / "rm_curve.csv", curve_to_csv(rows))
        _write_manifest(run_dir, "train-rm", config, ["rm.ckpt", "rm_curve.csv"])
        print(
            f"rm: holdout ranking accuracy {report.holdout_accuracy:.3f} "
            f"({report.n_train} train / {report.n_holdout} holdout pairs) -> {run_dir}/rm.ckpt"
        )
        return 0

    # rlmf: policy optimization against the trained reward model
    policy = _load_model(run_dir, "sft.ckpt")
    rm = _load_model(run_dir, "rm.ckpt")
    if not isinstance(policy, Policy) or not isinstance(rm, RewardModel):
        raise DataError("sft.ckpt / rm.ckpt hold the wrong model kinds")
    reference = ReferencePolicy(policy)
    stats = run_policy_optimization(
        policy,
        reference,
        X,
        y,
        rm,
        config.train.rlmf,
        rounds=config.train.rlmf_rounds,
        seed=derive_seed(config.seed, _STREAM_RL),
        use_mf=config.train.use_mf,
    )
    save_checkpoint(policy, run_dir / "rlmf.ckpt")
    rows = [
        {
            "step": i,
            "loss": s.loss,
            "reward_mean": s.reward_mean,
            "kl_mean": s.kl_mean,
            "clip_frac": s.clip_frac,
        }
        for i, s in enumerate(stats)
    ]
    atomic_write_text(run_dir / "rlmf_curve.csv", curve_to_csv(rows))
    _write_manifest(run_dir, "train-rlmf", config, ["rlmf.ckpt", "rlmf_curve.csv"])
    last = stats[-1].reward_mean if stats else float("nan")
    print(f"rlmf: {len(stats)} rounds, final mean reward {last:.4f} -> {run_dir}/rlmf.ckpt")
    return 0


def _cmd_deploy(config: RunConfig, run_dir: Path) -> int:
    policy_name = "rlmf.ckpt" if (run_dir / "rlmf.ckpt").is_file() else "sft.ckpt"
    policy = _load_model(run_dir, policy_name)
    rm = _load_model(run_dir, "rm.ckpt")
    if not isinstance(policy, Policy) or not isinstance(rm, RewardModel):
        raise DataError(f"{policy_name} / rm.ckpt hold the wrong model kinds")
    holdout = _load_examples(run_dir, "eval.jsonl")
    X, y = features_and_labels(holdout, _feature_config(config))

    deploy_config = DeployConfig(
        window=config.deploy.window,
        rm_epochs=config.deploy.rm_epochs,
        rlmf_epochs=config.deploy.rlmf_epochs,
        kl_anchor=config.deploy.kl_anchor,
        replay=config.deploy.replay,
        updates=config.deploy.updates,
        seed=derive_seed(config.seed, _STREAM_DEPLOY),
    )
    frozen = run_frozen_baseline(policy, MarketStream(X, y), deploy_config)
    adaptive = run_deployment(policy, rm, MarketStream(X, y), deploy_config)

    atomic_write_text(run_dir / "deploy_adaptive_steps.csv", steps_to_csv(adaptive))
    atomic_write_text(run_dir / "deploy_adaptive_windows.csv", windows_to_csv(adaptive))
    atomic_write_text(run_dir / "deploy_frozen_steps.csv", steps_to_csv(frozen))
    summary = {
        "policy_checkpoint": policy_name,
        "adaptive": adaptive.summary(),
        "frozen_accuracy": frozen.accuracy(),
        "accuracy_lift": adaptive.accuracy() - frozen.accuracy(),
    }
    atomic_write_text(
        run_dir / "deploy_summary.json",
        json.dumps(summary, indent=2, sort_keys=True, allow_nan=False) + "\n",
    )
    _write_manifest(
        run_dir,
        "deploy",
        config,
        [
            "deploy_adaptive_steps.csv",
            "deploy_adaptive_windows.csv",
            "deploy_frozen_steps.csv",
            "deploy_summary.json",
        ],
    )
    print(
        f"deploy: adaptive accuracy {adaptive.accuracy():.3f} vs frozen "
        f"{frozen.accuracy():.3f} over {len(holdout)} steps -> {run_dir}/deploy_summary.json"
    )
    return 0


def _cmd_eval(config: RunConfig, run_dir: Path) -> int:
    policy_name = "rlmf.ckpt" if (run_dir / "rlmf.ckpt").is_file() else "sft.ckpt"
    policy = _load_model(run_dir, policy_name)
    if not isinstance(policy, Policy):
        raise DataError(f"{policy_name} does not hold a policy checkpoint")
    holdout = _load_examples(run_dir, "eval.jsonl")
    X, y = features_and_labels(holdout, _feature_config(config))
    if config.eval.greedy:
        y_pred = policy.greedy(X)
    else:
        y_pred = policy.sample(X, rng_for(config.seed, _STREAM_EVAL_SAMPLING))
    report = classification_report(y, y_pred)
    report["policy_checkpoint"] = policy_name
    report["greedy"] = config.eval.greedy
    atomic_write_text(run_dir / "eval_report.json", report_to_json(report))
    _write_manifest(run_dir, "eval", config, ["eval_report.json"])
    print(
        f"eval: accuracy {report['acc']:.3f}, weighted F1 {report['f1_weighted']:.3f}, "
        f"MCC {report['mcc']:.3f} -> {run_dir}/eval_report.json"
    )
    return 0


def _cmd_ig(config: RunConfig, run_dir: Path, split: str) -> int:
    examples = _load_examples(run_dir, f"{split}.jsonl")
    if config.ig.source == "news":
        missing = [ex.id for ex in examples if ex.news_embedding is None]
        if missing:
            raise DataError(
                "ig.source='news' needs news embeddings on every example; "
                f"{len(missing)} examples have none (set dataset.news_dim > 0)"
            )
        points = np.array([ex.news_embedding for ex in examples], dtype=np.float64)
    else:
        points, _ = features_and_labels(examples, _feature_config(config))
    tags = [ex.response for ex in examples]
    targets = np.array([ex.pct_change for ex in examples], dtype=np.float64)

    embedded = tsne_embed(
        points,
        perplexity=config.ig.perplexity,
        n_iter=config.ig.n_iter,
        seed=config.seed,
    )
    clusters = cluster_embeddings(
        embedded.points,
        min_cluster_size=config.ig.min_cluster_size,
        radius=config.ig.radius,
    )
    report = ig_report(
        tags, clusters, targets=targets, include_outliers=config.ig.include_outliers
    )
    report["source"] = config.ig.source
    report["split"] = split
    report["tsne_kl"] = embedded.kl_divergence

    emb_set = EmbeddingSet(embedded.points, tags, targets=targets)
    save_embeddings_csv(emb_set, run_dir / "embedding_2d.csv")
    cluster_lines = ["index,cluster"] + [f"{i},{c}" for i, c in enumerate(clusters)]
    atomic_write_text(run_dir / "clusters.csv", "\n".join(cluster_lines) + "\n")
    atomic_write_text(
        run_dir / "ig_report.json",
        json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n",
    )
    _write_manifest(
        run_dir, "ig", config, ["embedding_2d.csv", "clusters.csv", "ig_report.json"]
    )
    print(
        f"ig: {report['n_clusters']} clusters, information gain "
        f"{report['information_gain_bits']:.3f} bits -> {run_dir}/ig_report.json"
    )
    return 0


# ------------------------------------------------------------------ entry


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regimelab",
        description="Regime-switching market simulation and adaptive trading-advice pipeline.",
    )
    parser.add_argument("--config", help="TOML configuration file (defaults apply without one)")
    parser.add_argument("--seed", type=int, help="override [run].seed")
    parser.add_argument("--out", help="override [run].out_dir")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", help="sample a regime path and write the synthetic price history")
    sub.add_parser("build-dataset", help="turn the simulation into prompt/response splits")
    train = sub.add_parser("train", help="run one training stage")
    train.add_argument("--stage", choices=("sft", "rm", "rlmf"), required=True)
    sub.add_parser("deploy", help="stream the eval split with windowed online updates")
    sub.add_parser("eval", help="score the policy checkpoint on the eval split")
    ig = sub.add_parser("ig", help="embed, cluster and score news informativeness")
    ig.add_argument("--split", choices=("train", "test", "eval"), default="eval")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be >= 0")
            config = replace(config, seed=args.seed)
        if args.out is not None:
            config = replace(config, out_dir=args.out)
    except ConfigError as exc:
        return _fail(2, str(exc))

    run_dir = Path(config.out_dir)
    try:
        os.makedirs(run_dir, exist_ok=True)
    except OSError as exc:
        return _fail(3, f"cannot create {run_dir}: {exc.strerror or exc}")

    try:
        if args.command == "simulate":
            return _cmd_simulate(config, run_dir)
        if args.command == "build-dataset":
            return _cmd_build_dataset(config, run_dir)
        if args.command == "train":
            return _cmd_train(config, run_dir, args.stage)
        if args.command == "deploy":
            return _cmd_deploy(config, run_dir)
        if args.command == "eval":
            return _cmd_eval(config, run_dir)
        if args.command == "ig":
            return _cmd_ig(config, run_dir, args.split)
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        return _fail(2, str(exc))
    except DataError as exc:
        return _fail(3, str(exc))
    except (StageFailure, TrainingDiverged) as exc:
        return _fail(4, str(exc))


if __name__ == "__main__":
    sys.exit(main())
