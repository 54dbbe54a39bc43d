"""Embedding diagnostics: how much label information the geometry of a point
cloud carries.

The pipeline is: project high-dimensional vectors to the plane (exact
pairwise neighbor-embedding, quadratic in n), group the projected points by
density (flat BFS clustering), then score the grouping against labels with
entropy-based information gain, or against scalar targets with variance
reduction. Outlier points (cluster id -1) can either count as one extra
group or be excluded from both sides of the comparison.

All randomness is confined to the projection's initial layout; every other
step is deterministic in the inputs.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass

import numpy as np

from .ioutil import atomic_write_bytes, atomic_write_text

OUTLIER = -1


# ------------------------------------------------------------------ entropy scores


def entropy_bits(labels) -> float:
    """Shannon entropy of the label distribution, in bits."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("entropy of an empty set is undefined")
    _, counts = np.unique(labels, return_counts=True)
    p = counts / labels.size
    return float(-(p * np.log2(p)).sum())


def _partition_weights(clusters: np.ndarray, include_outliers: bool) -> np.ndarray:
    mask = np.ones(clusters.size, dtype=bool)
    if not include_outliers:
        mask = clusters != OUTLIER
        if not mask.any():
            raise ValueError("all points are outliers; nothing to score")
    return mask


def clustered_entropy(labels, clusters, include_outliers: bool = True) -> float:
    """Size-weighted mean entropy within clusters. With include_outliers the
    outlier points form one extra group; otherwise they are dropped."""
    labels = np.asarray(labels)
    clusters = np.asarray(clusters)
    if labels.shape != clusters.shape:
        raise ValueError("labels and clusters must align")
    mask = _partition_weights(clusters, include_outliers)
    labels, clusters = labels[mask], clusters[mask]
    total = 0.0
    for c in np.unique(clusters):
        in_c = clusters == c
        total += (in_c.sum() / clusters.size) * entropy_bits(labels[in_c])
    return float(total)


def information_gain(labels, clusters, include_outliers: bool = True) -> float:
    """Entropy drop from learning the cluster id; non-negative, at most the
    total entropy. Both sides are computed on the same point set."""
    labels = np.asarray(labels)
    clusters = np.asarray(clusters)
    if labels.shape != clusters.shape:
        raise ValueError("labels and clusters must align")
    mask = _partition_weights(clusters, include_outliers)
    return entropy_bits(labels[mask]) - clustered_entropy(
        labels, clusters, include_outliers
    )


def variance_reduction(targets, clusters, include_outliers: bool = True) -> float:
    """Population-variance drop from conditioning on the cluster id."""
    targets = np.asarray(targets, dtype=np.float64)
    clusters = np.asarray(clusters)
    if targets.shape != clusters.shape:
        raise ValueError("targets and clusters must align")
    if not np.all(np.isfinite(targets)):
        raise ValueError("targets must be finite")
    mask = _partition_weights(clusters, include_outliers)
    targets, clusters = targets[mask], clusters[mask]
    within = 0.0
    for c in np.unique(clusters):
        in_c = clusters == c
        within += (in_c.sum() / clusters.size) * float(np.var(targets[in_c]))
    return float(np.var(targets)) - within


# ------------------------------------------------------------------ planar projection


@dataclass
class EmbedResult:
    points: np.ndarray
    kl_divergence: float
    n_iter: int


def _pairwise_sq_dists(X: np.ndarray) -> np.ndarray:
    sq = (X * X).sum(axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def _row_affinities(dist_row: np.ndarray, beta: float) -> tuple[float, np.ndarray]:
    """Natural-log entropy and conditional affinities at precision beta."""
    p = np.exp(-dist_row * beta)
    s = p.sum()
    if s <= 0:
        return 0.0, np.zeros_like(p)
    h = np.log(s) + beta * float((dist_row * p).sum()) / s
    return h, p / s

def _conditional_affinities(
    dists: np.ndarray, perplexity: float, tol: float = 1e-5
) -> np.ndarray:
    """Per-point precision search matching the target perplexity."""
    n = dists.shape[0]
    target = np.log(perplexity)
    P = np.zeros((n, n))
    for i in range(n):
        row = np.delete(dists[i], i)
        beta, lo, hi = 1.0, 0.0, np.inf
        for _ in range(64):
            h, p = _row_affinities(row, beta)
            if abs(h - target) < tol:
                break
            if h > target:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = (lo + beta) / 2.0
        P[i, np.arange(n) != i] = p
    return P


def _kl(P: np.ndarray, Y: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Objective plus the two reusable kernels (unnormalized and normalized)."""
    num = 1.0 / (1.0 + _pairwise_sq_dists(Y))
    np.fill_diagonal(num, 0.0)
    Q = np.maximum(num / num.sum(), 1e-12)
    kl = float((P * np.log(np.maximum(P, 1e-12) / Q)).sum())
    return kl, num, Q


def _tsne_grad(P: np.ndarray, Y: np.ndarray) -> tuple[float, np.ndarray]:
    kl, num, Q = _kl(P, Y)
    W = (P - Q) * num
    grad = 4.0 * ((np.diag(W.sum(axis=1)) - W) @ Y)
    return kl, grad


def tsne_embed(
    X: np.ndarray,
    perplexity: float = 12.0,
    n_iter: int = 500,
    seed: int = 0,
    early_exaggeration: float = 12.0,
    learning_rate: float | None = None,
) -> EmbedResult:
    """Exact planar neighbor embedding (all pairs, no tree approximations).

    Early iterations (up to 250) exaggerate the attractive forces and use
    lighter momentum; the last 50 iterations drop momentum and accept a step
    only if it lowers the objective, halving it until it does, so the
    reported objective is monotone at the end of the run.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = X.shape[0]
    if perplexity <= 1:
        raise ValueError("perplexity must be > 1")
    if n <= 3 * perplexity:
        raise ValueError(f"need more than {int(3 * perplexity)} points at perplexity {perplexity}")
    if n_iter < 300:
        raise ValueError("n_iter must be >= 300")
    if not np.all(np.isfinite(X)):
        raise ValueError("points must be finite")

    cond = _conditional_affinities(_pairwise_sq_dists(X), perplexity)
    P = (cond + cond.T) / (2.0 * n)
    P = np.maximum(P, 1e-12)

    lr = n / early_exaggeration if learning_rate is None else learning_rate
    rng = np.random.default_rng(seed)
    Y = rng.normal(0.0, 1e-4, (n, 2))
    velocity = np.zeros_like(Y)
    gains = np.ones_like(Y)
    exaggeration_until = 250
    momentum_switch = 250
    monotone_from = n_iter - 50

    kl = np.inf
    for it in range(n_iter):
        P_eff = P * early_exaggeration if it < exaggeration_until else P
        if it >= monotone_from:
            kl_now, grad = _tsne_grad(P_eff, Y)
            step = lr
            moved = False
            for _ in range(12):
                cand = Y - step * grad
                cand = cand - cand.mean(axis=0)
                kl_cand, _, _ = _kl(P_eff, cand)
                if kl_cand <= kl_now:
                    Y, kl = cand, kl_cand
                    moved = True
                    break
                step /= 2.0
            if not moved:
                kl = kl_now
            continue
        momentum = 0.5 if it < momentum_switch else 0.8
        kl, grad = _tsne_grad(P_eff, Y)
        same_sign = np.sign(grad) == np.sign(velocity)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, 0.01)
        velocity = momentum * velocity - lr * gains * grad
        Y = Y + velocity
        Y = Y - Y.mean(axis=0)
    return EmbedResult(points=Y, kl_divergence=float(kl), n_iter=n_iter)


# ------------------------------------------------------------------ density clustering


def kth_neighbor_distances(points: np.ndarray, k: int = 10) -> np.ndarray:
    """Distance from each point to its k-th nearest other point."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = points.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"k must lie in [1, {n - 1}]")
    d = np.sqrt(_pairwise_sq_dists(points))
    return np.sort(d, axis=1)[:, k]


def auto_radius(points: np.ndarray, k: int = 10, quantile: float = 0.9) -> float:
    """Neighborhood radius: the 90th percentile of 10-th neighbor distances."""
    return float(np.quantile(kth_neighbor_distances(points, k), quantile))


def dbscan(points: np.ndarray, radius: float, min_pts: int) -> np.ndarray:
    """Flat density clustering; returns per-point cluster ids, -1 for noise.

    A point is core when its closed radius-ball holds at least min_pts
    points (itself included). Clusters grow breadth-first from the lowest
    unclaimed core index, expanding only through core points; border points
    keep the first cluster that reaches them.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = points.shape[0]
    if radius <= 0:
        raise ValueError("radius must be > 0")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    d = np.sqrt(_pairwise_sq_dists(points))
    within = d <= radius
    core = within.sum(axis=1) >= min_pts
    labels = np.full(n, OUTLIER, dtype=np.int64)
    cluster = 0
    for i in range(n):
        if labels[i] != OUTLIER or not core[i]:
            continue
        labels[i] = cluster
        queue = deque([i])
        while queue:
            j = queue.popleft()
            for nb in np.flatnonzero(within[j]):
                if labels[nb] == OUTLIER:
                    labels[nb] = cluster
                    if core[nb]:
                        queue.append(int(nb))
        cluster += 1
    return labels


def cluster_embeddings(
    points: np.ndarray,
    min_cluster_size: int = 10,
    radius: float | None = None,
) -> np.ndarray:
    """Density clustering with an automatic radius; any cluster smaller than
    min_cluster_size is dissolved into the outlier group."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if radius is None:
        k = min(10, points.shape[0] - 1)
        radius = auto_radius(points, k=k)
    labels = dbscan(points, radius, min_pts=min_cluster_size)
    ids, counts = np.unique(labels[labels != OUTLIER], return_counts=True)
    for cid, cnt in zip(ids, counts):
        if cnt < min_cluster_size:
            labels[labels == cid] = OUTLIER
    # renumber to keep ids dense after any dissolution
    out = np.full_like(labels, OUTLIER)
    for new, cid in enumerate(np.unique(labels[labels != OUTLIER])):
        out[labels == cid] = new
    return out


# ------------------------------------------------------------------ embedding sets


_EMB_MAGIC = b"regimelab-emb v1\n"


@dataclass
class EmbeddingSet:
    """Tagged point cloud with an optional scalar target per point."""

    points: np.ndarray
    tags: list[str]
    targets: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        n = self.points.shape[0]
        if len(self.tags) != n:
            raise ValueError("one tag per point required")
        if not all(isinstance(t, str) and t for t in self.tags):
            raise ValueError("tags must be non-empty strings")
        if self.targets is not None:
            self.targets = np.asarray(self.targets, dtype=np.float64)
            if self.targets.shape != (n,):
                raise ValueError("targets must align with points")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("points must be finite")

    def __len__(self) -> int:
        return self.points.shape[0]


def embeddings_to_bytes(es: EmbeddingSet) -> bytes:
    vocab = sorted(set(es.tags))
    header = {
        "n": len(es),
        "d": int(es.points.shape[1]),
        "tags": vocab,
        "has_targets": es.targets is not None,
    }
    tag_ids = np.asarray([vocab.index(t) for t in es.tags], dtype=np.uint32)
    blob = [
        _EMB_MAGIC,
        json.dumps(header, sort_keys=True).encode() + b"\n",
        es.points.astype("<f4").tobytes(),
        tag_ids.astype("<u4").tobytes(),
    ]
    if es.targets is not None:
        blob.append(es.targets.astype("<f8").tobytes())
    return b"".join(blob)


def embeddings_from_bytes(raw: bytes) -> EmbeddingSet:
    if not raw.startswith(_EMB_MAGIC):
        raise ValueError("not an embedding-set blob (bad magic)")
    rest = raw[len(_EMB_MAGIC):]
    nl = rest.index(b"\n")
    try:
        header = json.loads(rest[:nl])
        n, d = int(header["n"]), int(header["d"])
        vocab = list(header["tags"])
        has_targets = bool(header["has_targets"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValueError(f"malformed embedding-set header: {exc}") from exc
    body = rest[nl + 1:]
    need = n * d * 4 + n * 4 + (n * 8 if has_targets else 0)
    if len(body) != need:
        raise ValueError(f"embedding-set payload is {len(body)} bytes, expected {need}")
    pts = np.frombuffer(body[: n * d * 4], dtype="<f4").reshape(n, d).astype(np.float64)
    tag_ids = np.frombuffer(body[n * d * 4 : n * d * 4 + n * 4], dtype="<u4")
    if tag_ids.size and int(tag_ids.max()) >= len(vocab):
        raise ValueError("tag id out of range")
    targets = None
    if has_targets:
        targets = np.frombuffer(body[n * d * 4 + n * 4 :], dtype="<f8").copy()
    return EmbeddingSet(pts, [vocab[i] for i in tag_ids], targets)


def save_embeddings(es: EmbeddingSet, path: str) -> None:
    atomic_write_bytes(path, embeddings_to_bytes(es))


def load_embeddings(path: str) -> EmbeddingSet:
    with open(path, "rb") as fh:
        return embeddings_from_bytes(fh.read())


def embeddings_to_csv(es: EmbeddingSet) -> str:
    d = es.points.shape[1]
    header = "tag,target," + ",".join(f"e{i}" for i in range(d))
    lines = [header]
    for i in range(len(es)):
        target = "" if es.targets is None else f"{es.targets[i]:.6f}"
        coords = ",".join(f"{v:.6f}" for v in es.points[i])
        lines.append(f"{es.tags[i]},{target},{coords}")
    return "\n".join(lines) + "\n"


def save_embeddings_csv(es: EmbeddingSet, path: str) -> None:
    atomic_write_text(path, embeddings_to_csv(es))


# ------------------------------------------------------------------ report


def ig_report(
    tags,
    clusters,
    targets=None,
    include_outliers: bool = True,
) -> dict:
    """Cluster-quality summary; JSON-serializable."""
    tags = np.asarray(tags)
    clusters = np.asarray(clusters)
    report = {
        "n_points": int(tags.size),
        "n_clusters": int(np.unique(clusters[clusters != OUTLIER]).size),
        "n_outliers": int((clusters == OUTLIER).sum()),
        "include_outliers": bool(include_outliers),
        "total_entropy_bits": entropy_bits(
            tags[_partition_weights(clusters, include_outliers)]
        ),
        "clustered_entropy_bits": clustered_entropy(tags, clusters, include_outliers),
        "information_gain_bits": information_gain(tags, clusters, include_outliers),
    }
    if targets is not None:
        report["variance_reduction"] = variance_reduction(
            targets, clusters, include_outliers
        )
    return report
