"""How much do news embeddings know about the next market move?

Simulates a market, synthesizes regime-correlated news vectors at a chosen
signal-to-noise ratio, projects them to the plane, density-clusters the
projection, and scores the clustering against the realized movement labels:
information gain in bits, a shuffled-tag null band, and the variance
reduction on raw percentage moves.

Run from the repo root:
    python3 scripts/embedding_ig.py --snr 4 --shuffles 100
"""

import argparse
import sys

import numpy as np

from regimelab.dataset import build_examples, synthesize_news_embeddings
from regimelab.featurize import compute_indicators
from regimelab.igtools import (
    cluster_embeddings,
    entropy_bits,
    information_gain,
    tsne_embed,
    variance_reduction,
)
from regimelab.market_sim import RegimeSpec, simulate_market
from regimelab.seeding import derive_seed


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--horizon", type=int, default=400)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--dim", type=int, default=8, help="news embedding width")
    parser.add_argument("--snr", type=float, default=4.0, help="news signal-to-noise")
    parser.add_argument("--perplexity", type=float, default=12.0)
    parser.add_argument("--n-iter", type=int, default=500)
    parser.add_argument("--min-cluster-size", type=int, default=10)
    parser.add_argument("--shuffles", type=int, default=100, help="null permutations")
    args = parser.parse_args(argv)

    spec = RegimeSpec(
        mu=np.array([0.8, -0.8]),
        phi=np.zeros(2),
        sigma=np.array([0.4, 0.4]),
        transition=np.array([[0.9, 0.1], [0.1, 0.9]]),
        initial_dist=np.array([0.5, 0.5]),
    )
    sim = simulate_market(spec, args.horizon, seed=args.seed)
    news = synthesize_news_embeddings(
        sim.path, dim=args.dim, snr=args.snr, seed=derive_seed(args.seed, 1)
    )
    examples = build_examples(sim.series, compute_indicators(sim.series), news_embeddings=news)

    points = np.stack([ex.news_embedding for ex in examples])
    tags = [ex.response for ex in examples]
    moves = np.array([ex.pct_change for ex in examples])

    embedded = tsne_embed(
        points, perplexity=args.perplexity, n_iter=args.n_iter, seed=args.seed
    )
    clusters = cluster_embeddings(embedded.points, min_cluster_size=args.min_cluster_size)
    n_clusters = len(set(int(c) for c in clusters if c >= 0))
    n_outliers = int(np.sum(clusters < 0))

    gain = information_gain(tags, clusters)
    base = entropy_bits(tags)
    rv = variance_reduction(moves, clusters)

    rng = np.random.default_rng(derive_seed(args.seed, 2))
    null = np.array(
        [
            information_gain([tags[i] for i in rng.permutation(len(tags))], clusters)
            for _ in range(args.shuffles)
        ]
    )

    print(f"{len(examples)} examples, {n_clusters} clusters, {n_outliers} outliers")
    print(f"label entropy        {base:.3f} bits")
    print(f"information gain     {gain:.3f} bits")
    print(f"shuffled-tag null    {null.mean():.3f} +/- {null.std():.3f} bits")
    print(f"variance reduction   {rv:.4f} (squared-pct units)")
    verdict = "clusters carry label signal" if gain > null.mean() + 3 * null.std() else (
        "no signal beyond the null"
    )
    print(f"verdict: {verdict}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
