"""Adaptive vs frozen deployment across a mid-stream regime inversion.

For each world seed: simulate a two-regime market whose regime means flip
sign at --shift-day, pretrain a policy and reward model on the pre-shift
prefix, then stream the remainder through a windowed adaptation loop and
through a frozen copy. Reports per-seed pre/post accuracies and the margin
the adaptive arm earns after the shift.

Run from the repo root:
    python3 scripts/shift_experiment.py --seeds 5 --out runs/shift.csv
"""

import argparse
import csv
import sys

import numpy as np

from regimelab.adaptloop import (
    DeployConfig,
    MarketStream,
    TrainingPhaseConfig,
    run_deployment,
    run_frozen_baseline,
    run_training_phase,
)
from regimelab.dataset import (
    RM_LABEL_TO_INDEX,
    build_examples,
    make_preference_dataset,
    synthesize_news_embeddings,
)
from regimelab.featurize import compute_indicators
from regimelab.market_sim import RegimeSpec, inject_regime_shift, simulate_market
from regimelab.models import FeatureConfig, features_and_labels, features_from_example
from regimelab.seeding import derive_seed
from regimelab.trainer import PreferenceSet, TrainConfig


def build_world(world_seed, horizon, shift_day, depth, news_dim, snr):
    spec = RegimeSpec(
        mu=np.array([1.0, -1.0]),
        phi=np.zeros(2),
        sigma=np.full(2, 0.2),
        transition=np.full((2, 2), 0.5),
        initial_dist=np.array([0.5, 0.5]),
    )
    schedule = inject_regime_shift(spec, shift_day, mu=np.array([-1.0, 1.0]))
    sim = simulate_market(schedule, horizon, seed=derive_seed(world_seed, 0))
    table = compute_indicators(sim.series)
    news = synthesize_news_embeddings(
        sim.path, dim=news_dim, snr=snr, seed=derive_seed(world_seed, 1)
    )
    examples = build_examples(sim.series, table, news_embeddings=news, depth=depth)
    feat_config = FeatureConfig(depth=depth, news_dim=news_dim)
    X, y = features_and_labels(examples, feat_config)
    shift_index = shift_day - (horizon - len(examples))
    return examples, feat_config, X, y, shift_index


def featurized_pairs(examples, feat_config, seed):
    by_id = {ex.id: ex for ex in examples}
    raw = make_preference_dataset(examples, seed=seed)
    return PreferenceSet(
        np.stack([features_from_example(by_id[p.prompt_id], feat_config) for p in raw]),
        np.array([RM_LABEL_TO_INDEX[p.chosen] for p in raw]),
        np.array([RM_LABEL_TO_INDEX[p.rejected] for p in raw]),
    )


def run_one_seed(world_seed, args):
    examples, feat_config, X, y, shift_index = build_world(
        world_seed, args.horizon, args.shift_day, args.depth, args.news_dim, args.snr
    )
    train_n = args.train_n
    if not train_n < shift_index:
        raise SystemExit("--train-n must leave pre-shift stream steps")
    phase = run_training_phase(
        X[:train_n],
        y[:train_n],
        featurized_pairs(examples[:train_n], feat_config, derive_seed(world_seed, 2)),
        TrainingPhaseConfig(
            sft=TrainConfig(learning_rate=0.1, epochs=args.sft_epochs),
            rm=TrainConfig(learning_rate=0.05, optimizer="adam", epochs=20),
            rl_rounds=0,
            seed=derive_seed(world_seed, 3),
        ),
    )
    deploy_config = DeployConfig(
        window=args.window,
        rm_epochs=args.rm_epochs,
        rlmf_epochs=args.update_epochs,
        kl_anchor="window",
        updates=TrainConfig(
            learning_rate=args.update_lr, mf_coef=args.mf_coef, optimizer="adam"
        ),
        seed=derive_seed(world_seed, 4),
    )
    Xs, ys = X[train_n:], y[train_n:]
    adaptive = run_deployment(
        phase.policy, phase.reward_model, MarketStream(Xs, ys), deploy_config
    )
    frozen = run_frozen_baseline(phase.policy, MarketStream(Xs, ys), deploy_config)

    shift_pos = shift_index - train_n

    def seg_acc(log, lo, hi):
        return float(np.mean([s.correct for s in log.steps if lo <= s.step < hi]))

    window_accs = adaptive.window_accuracies()
    first_full = shift_pos // args.window + (1 if shift_pos % args.window else 0)
    pre = seg_acc(adaptive, 0, shift_pos)
    recovery = next(
        (
            k + 1
            for k, acc in enumerate(window_accs[first_full:])
            if acc >= 0.8 * pre
        ),
        None,
    )
    return {
        "seed": world_seed,
        "pre_shift_acc": round(pre, 4),
        "post_adaptive_acc": round(seg_acc(adaptive, shift_pos, len(ys)), 4),
        "post_frozen_acc": round(seg_acc(frozen, shift_pos, len(ys)), 4),
        "windows_to_recover": recovery if recovery is not None else "never",
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, default=5, help="number of world seeds")
    parser.add_argument("--horizon", type=int, default=1000)
    parser.add_argument("--shift-day", type=int, default=500)
    parser.add_argument("--train-n", type=int, default=300)
    parser.add_argument("--window", type=int, default=10)
    parser.add_argument("--depth", type=int, default=4)
    parser.add_argument("--news-dim", type=int, default=8)
    parser.add_argument("--snr", type=float, default=7.0)
    parser.add_argument("--sft-epochs", type=int, default=8)
    parser.add_argument("--rm-epochs", type=int, default=6)
    parser.add_argument("--update-epochs", type=int, default=80)
    parser.add_argument("--update-lr", type=float, default=0.03)
    parser.add_argument("--mf-coef", type=float, default=3.0)
    parser.add_argument("--out", default=None, help="optional CSV path for the table")
    args = parser.parse_args(argv)

    rows = []
    for world_seed in range(args.seeds):
        row = run_one_seed(world_seed, args)
        rows.append(row)
        print(
            f"seed {row['seed']}: pre {row['pre_shift_acc']:.2f}  "
            f"post adaptive {row['post_adaptive_acc']:.2f}  "
            f"post frozen {row['post_frozen_acc']:.2f}  "
            f"recovered in {row['windows_to_recover']} window(s)"
        )

    margins = [r["post_adaptive_acc"] - r["post_frozen_acc"] for r in rows]
    print(f"mean post-shift margin over {args.seeds} seeds: {float(np.mean(margins)):+.3f}")

    if args.out:
        with open(args.out, "w", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
        print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
