import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regimelab.igtools import (
    EmbeddingSet,
    auto_radius,
    cluster_embeddings,
    clustered_entropy,
    dbscan,
    embeddings_from_bytes,
    embeddings_to_bytes,
    embeddings_to_csv,
    entropy_bits,
    ig_report,
    information_gain,
    kth_neighbor_distances,
    load_embeddings,
    save_embeddings,
    tsne_embed,
    variance_reduction,
)

sklearn_cluster = pytest.importorskip("sklearn.cluster")
sklearn_metrics = pytest.importorskip("sklearn.metrics")


def blobs(n_per=60, d=8, sep=12.0, spread=1.0, seed=0, k=3):
    rng = np.random.default_rng(seed)
    centers = rng.normal(0, 1, (k, d))
    centers *= sep / np.linalg.norm(centers, axis=1, keepdims=True)
    X = np.concatenate([centers[i] + rng.normal(0, spread, (n_per, d)) for i in range(k)])
    y = np.repeat(np.arange(k), n_per)
    return X, y


# ------------------------------------------------------------------ entropy


def test_entropy_identities():
    assert entropy_bits([7, 7, 7]) == 0.0
    assert entropy_bits([0, 1]) == pytest.approx(1.0)
    assert entropy_bits([0, 0, 1, 2]) == pytest.approx(1.5)
    assert entropy_bits(["a", "b", "c", "d"]) == pytest.approx(2.0)


def test_clustered_entropy_hand_case():
    labels = np.array([0, 0, 1, 1])
    pure = np.array([0, 0, 1, 1])
    assert clustered_entropy(labels, pure) == 0.0
    assert information_gain(labels, pure) == pytest.approx(1.0)
    mixed = np.array([0, 1, 0, 1])
    assert clustered_entropy(labels, mixed) == pytest.approx(1.0)
    assert information_gain(labels, mixed) == pytest.approx(0.0)


def test_outlier_handling_modes():
    labels = np.array([0, 0, 1, 1, 0])
    clusters = np.array([0, 0, 1, 1, -1])
    # included: the outlier is its own pure group, so conditioning is perfect
    assert information_gain(labels, clusters, include_outliers=True) == pytest.approx(
        entropy_bits(labels)
    )
    # excluded: both sides drop the outlier point
    assert information_gain(labels, clusters, include_outliers=False) == pytest.approx(
        1.0
    )
    with pytest.raises(ValueError):
        information_gain(labels, np.full(5, -1), include_outliers=False)


@settings(max_examples=60)
@given(
    st.lists(
        st.tuples(st.integers(0, 2), st.integers(-1, 3)), min_size=2, max_size=120
    )
)
def test_information_gain_bounds(pairs):
    labels = np.array([p[0] for p in pairs])
    clusters = np.array([p[1] for p in pairs])
    ig = information_gain(labels, clusters)
    assert -1e-12 <= ig <= entropy_bits(labels) + 1e-12


@settings(max_examples=60)
@given(
    st.lists(
        st.tuples(
            st.floats(-50, 50, allow_nan=False), st.integers(-1, 3)
        ),
        min_size=2,
        max_size=120,
    )
)
def test_variance_reduction_non_negative(pairs):
    targets = np.array([p[0] for p in pairs])
    clusters = np.array([p[1] for p in pairs])
    vr = variance_reduction(targets, clusters)
    assert vr >= -1e-9
    assert vr <= np.var(targets) + 1e-9


# ------------------------------------------------------------------ projection


def test_projection_separates_blobs():
    X, y = blobs(n_per=50, seed=1)
    result = tsne_embed(X, perplexity=12.0, n_iter=500, seed=0)
    assert result.points.shape == (150, 2)
    assert np.all(np.isfinite(result.points))
    score = sklearn_metrics.silhouette_score(result.points, y)
    assert score >= 0.5


def test_projection_final_phase_is_monotone():
    X, _ = blobs(n_per=40, seed=2)
    a = tsne_embed(X, n_iter=500, seed=0)
    b = tsne_embed(X, n_iter=520, seed=0)
    # 20 extra monotone iterations can only lower the objective
    assert b.kl_divergence <= a.kl_divergence + 1e-12


def test_projection_deterministic_and_centered():
    X, _ = blobs(n_per=30, d=5, seed=3)
    a = tsne_embed(X, n_iter=300, seed=4)
    b = tsne_embed(X, n_iter=300, seed=4)
    np.testing.assert_array_equal(a.points, b.points)
    np.testing.assert_allclose(a.points.mean(axis=0), 0.0, atol=1e-9)


def test_projection_handles_near_coincident_points():
    rng = np.random.default_rng(5)
    base = rng.normal(0, 1, (20, 4))
    X = np.concatenate([base, base + 1e-12, rng.normal(8, 1, (30, 4))])
    result = tsne_embed(X, perplexity=5.0, n_iter=300, seed=0)
    assert np.all(np.isfinite(result.points))


def test_projection_preconditions():
    rng = np.random.default_rng(6)
    with pytest.raises(ValueError, match="points"):
        tsne_embed(rng.normal(0, 1, (30, 3)), perplexity=12.0)
    with pytest.raises(ValueError, match="n_iter"):
        tsne_embed(rng.normal(0, 1, (100, 3)), n_iter=100)
    with pytest.raises(ValueError, match="perplexity"):
        tsne_embed(rng.normal(0, 1, (30, 3)), perplexity=0.5)


# ------------------------------------------------------------------ clustering


def test_dbscan_matches_reference_on_blobs():
    X, _ = blobs(n_per=40, d=2, sep=10.0, seed=7)
    rng = np.random.default_rng(8)
    X = np.concatenate([X, rng.uniform(-30, 30, (8, 2))])  # sprinkle noise
    radius, min_pts = 2.0, 5
    ours = dbscan(X, radius, min_pts)
    ref = sklearn_cluster.DBSCAN(eps=radius, min_samples=min_pts).fit(X).labels_
    np.testing.assert_array_equal(ours == -1, ref == -1)
    mask = ours != -1
    assert (
        sklearn_metrics.adjusted_rand_score(ours[mask], ref[mask]) == pytest.approx(1.0)
    )


def test_dbscan_all_noise_and_single_cluster():
    spread = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    assert np.all(dbscan(spread, radius=1.0, min_pts=2) == -1)
    tight = np.zeros((5, 2))
    labels = dbscan(tight, radius=0.5, min_pts=5)
    assert np.all(labels == 0)


def test_kth_neighbor_distances_hand_case():
    pts = np.array([[0.0], [1.0], [3.0]])
    np.testing.assert_allclose(kth_neighbor_distances(pts, k=1), [1.0, 1.0, 2.0])
    np.testing.assert_allclose(kth_neighbor_distances(pts, k=2), [3.0, 2.0, 3.0])
    assert auto_radius(pts, k=1, quantile=1.0) == pytest.approx(2.0)


def test_cluster_embeddings_dissolves_small_groups():
    rng = np.random.default_rng(9)
    big = rng.normal(0, 0.5, (40, 2))
    tiny = rng.normal(40, 0.1, (3, 2))
    X = np.concatenate([big, tiny])
    labels = cluster_embeddings(X, min_cluster_size=10, radius=2.0)
    assert np.all(labels[:40] == 0)
    assert np.all(labels[40:] == -1)


def test_cluster_embeddings_auto_radius_on_blobs():
    rng = np.random.default_rng(10)
    angles = np.array([0.0, 2 * np.pi / 3, 4 * np.pi / 3])
    centers = 15.0 * np.c_[np.cos(angles), np.sin(angles)]
    X = np.concatenate([c + rng.normal(0, 1.0, (50, 2)) for c in centers])
    y = np.repeat(np.arange(3), 50)
    labels = cluster_embeddings(X, min_cluster_size=10)
    assert np.unique(labels[labels != -1]).size == 3
    mask = labels != -1
    assert sklearn_metrics.adjusted_rand_score(y[mask], labels[mask]) > 0.95


# ------------------------------------------------------------------ embedding sets


def test_embedding_set_roundtrip(tmp_path):
    rng = np.random.default_rng(11)
    es = EmbeddingSet(
        points=rng.normal(0, 1, (12, 3)),
        tags=["calm"] * 6 + ["turbulent"] * 6,
        targets=rng.normal(0, 1, 12),
    )
    raw = embeddings_to_bytes(es)
    back = embeddings_from_bytes(raw)
    np.testing.assert_allclose(back.points, es.points, atol=1e-6)  # f32 storage
    assert back.tags == es.tags
    np.testing.assert_array_equal(back.targets, es.targets)

    path = tmp_path / "emb.bin"
    save_embeddings(es, str(path))
    again = load_embeddings(str(path))
    assert again.tags == es.tags

    no_targets = EmbeddingSet(es.points, es.tags)
    back2 = embeddings_from_bytes(embeddings_to_bytes(no_targets))
    assert back2.targets is None


def test_embedding_set_rejects_corruption():
    es = EmbeddingSet(np.zeros((2, 2)), ["a", "b"])
    raw = embeddings_to_bytes(es)
    with pytest.raises(ValueError, match="magic"):
        embeddings_from_bytes(b"junk" + raw)
    with pytest.raises(ValueError, match="payload"):
        embeddings_from_bytes(raw[:-4])
    with pytest.raises(ValueError):
        EmbeddingSet(np.zeros((2, 2)), ["a"])
    with pytest.raises(ValueError):
        EmbeddingSet(np.zeros((2, 2)), ["a", ""])


def test_embedding_csv_layout():
    es = EmbeddingSet(np.array([[1.5, -2.0]]), ["calm"], np.array([0.25]))
    text = embeddings_to_csv(es)
    lines = text.strip().splitlines()
    assert lines[0] == "tag,target,e0,e1"
    assert lines[1] == "calm,0.250000,1.500000,-2.000000"
    no_t = EmbeddingSet(np.array([[1.0, 2.0]]), ["x"])
    assert embeddings_to_csv(no_t).strip().splitlines()[1] == "x,,1.000000,2.000000"


# ------------------------------------------------------------------ report


def test_ig_report_end_to_end():
    X, y = blobs(n_per=50, seed=12)
    tags = np.array(["calm", "turbulent", "choppy"])[y]
    result = tsne_embed(X, perplexity=12.0, n_iter=500, seed=0)
    clusters = cluster_embeddings(result.points, min_cluster_size=10)
    report = ig_report(tags, clusters, targets=np.asarray(y, dtype=float))
    assert report["n_points"] == 150
    assert report["n_clusters"] >= 3
    assert report["information_gain_bits"] >= 1.2  # close to log2(3)
    assert report["variance_reduction"] >= 0.5
    import json

    json.dumps(report)  # must be serializable as-is
