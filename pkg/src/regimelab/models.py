"""Small categorical policies and a scalar reward model, pure numpy.

Architectures: "linear" (one affine map) and "mlp" (one tanh hidden layer).
Weights init N(0, 0.02^2), biases 0, seeded. Parameters are exposed as one
flat float64 vector in a documented order (linear: W row-major then b;
mlp: W1, b1, W2, b2), which is what the optimizer, the checkpoints, and the
finite-difference tests all operate on.

Losses (each returns loss value and the flat gradient, batch-mean reduced):

- supervised     : cross-entropy of the true label under softmax logits
- preference     : -log sigmoid(score(chosen) - score(rejected)) per pair
- market feedback: squared distance between the policy's probability vector
                   and the one-hot realized label (expected form, range [0,2]);
                   a hard argmax variant exists for evaluation only
- clipped surrogate: mean min(ratio*A, clip(ratio)*A), the quantity policy
                   updates maximize

Gradients are hand-derived; tests check them against central finite
differences.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .dataset import LABEL_TO_INDEX, POLICY_LABELS, RM_LABELS, Example

_INIT_STD = 0.02
_MAGIC = "regimelab-ckpt v1"


def expit(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic sigmoid."""
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def one_hot(indices: np.ndarray, k: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    out = np.zeros((indices.size, k))
    out[np.arange(indices.size), indices] = 1.0
    return out


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    p = np.exp(log_softmax(logits))
    return p / p.sum(axis=1, keepdims=True)  # renormalize: rows sum to 1 exactly


def kl_categorical(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise KL(p || q); p-zero terms contribute 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * (np.log(p) - np.log(q)), 0.0)
    return terms.sum(axis=1)


class Net:
    """Affine or one-hidden-tanh map with flat parameter access."""

    def __init__(self, arch: str, in_dim: int, out_dim: int, hidden: int = 0, seed: int = 0):
        if arch not in ("linear", "mlp"):
            raise ValueError(f"arch must be 'linear' or 'mlp', got {arch!r}")
        if arch == "mlp" and hidden < 1:
            raise ValueError("mlp needs hidden >= 1")
        if in_dim < 1 or out_dim < 1:
            raise ValueError("dimensions must be >= 1")
        self.arch = arch
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.hidden = hidden if arch == "mlp" else 0
        rng = np.random.default_rng(seed)
        if arch == "linear":
            self.W = rng.normal(0.0, _INIT_STD, (out_dim, in_dim))
            self.b = np.zeros(out_dim)
        else:
            self.W1 = rng.normal(0.0, _INIT_STD, (hidden, in_dim))
            self.b1 = np.zeros(hidden)
            self.W2 = rng.normal(0.0, _INIT_STD, (out_dim, hidden))
            self.b2 = np.zeros(out_dim)

    # ---- parameter vector

    def get_flat(self) -> np.ndarray:
        if self.arch == "linear":
            parts = [self.W.ravel(), self.b]
        else:
            parts = [self.W1.ravel(), self.b1, self.W2.ravel(), self.b2]
        return np.concatenate(parts)

    def set_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {vec.shape}")
        if self.arch == "linear":
            k = self.out_dim * self.in_dim
            self.W = vec[:k].reshape(self.out_dim, self.in_dim).copy()
            self.b = vec[k:].copy()
        else:
            i = self.hidden * self.in_dim
            self.W1 = vec[:i].reshape(self.hidden, self.in_dim).copy()
            j = i + self.hidden
            self.b1 = vec[i:j].copy()
            k = j + self.out_dim * self.hidden
            self.W2 = vec[j:k].reshape(self.out_dim, self.hidden).copy()
            self.b2 = vec[k:].copy()

    @property
    def n_params(self) -> int:
        if self.arch == "linear":
            return self.out_dim * (self.in_dim + 1)
        return self.hidden * (self.in_dim + 1) + self.out_dim * (self.hidden + 1)

    # ---- forward / backward

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.arch == "linear":
            return x @ self.W.T + self.b
        h = np.tanh(x @ self.W1.T + self.b1)
        return h @ self.W2.T + self.b2

    def forward_cache(self, x: np.ndarray):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.arch == "linear":
            return x @ self.W.T + self.b, None
        h = np.tanh(x @ self.W1.T + self.b1)
        return h @ self.W2.T + self.b2, h

    def backward(self, x: np.ndarray, cache, dlogits: np.ndarray) -> np.ndarray:
        """Flat gradient of sum_i <dlogits_i, logits_i> w.r.t. parameters."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.arch == "linear":
            dW = dlogits.T @ x
            db = dlogits.sum(axis=0)
            return np.concatenate([dW.ravel(), db])
        h = cache
        dW2 = dlogits.T @ h
        db2 = dlogits.sum(axis=0)
        dh = dlogits @ self.W2
        da = dh * (1.0 - h * h)
        dW1 = da.T @ x
        db1 = da.sum(axis=0)
        return np.concatenate([dW1.ravel(), db1, dW2.ravel(), db2])

    def descriptor(self) -> str:
        return f"arch={self.arch} in={self.in_dim} hidden={self.hidden} out={self.out_dim}"


class Policy:
    """Categorical distribution over {Rise, Fall, Neutral} given a feature vector."""

    def __init__(self, feature_dim: int, arch: str = "linear", hidden: int = 0, seed: int = 0):
        self.feature_dim = feature_dim
        self.net = Net(arch, feature_dim, len(POLICY_LABELS), hidden=hidden, seed=seed)

    def logits(self, X: np.ndarray) -> np.ndarray:
        return self.net.forward(X)

    def probs(self, X: np.ndarray) -> np.ndarray:
        return softmax(self.logits(X))

    def log_probs(self, X: np.ndarray) -> np.ndarray:
        return log_softmax(self.logits(X))

    def sample(self, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One label index per row, drawn from the categorical head."""
        p = self.probs(X)
        u = rng.random(p.shape[0])
        cum = np.cumsum(p, axis=1)
        return np.minimum(
            (u[:, None] > cum).sum(axis=1), len(POLICY_LABELS) - 1
        ).astype(np.int64)

    def greedy(self, X: np.ndarray) -> np.ndarray:
        return self.probs(X).argmax(axis=1)

    def copy(self) -> "Policy":
        clone = Policy(self.feature_dim, self.net.arch, self.net.hidden)
        clone.net.set_flat(self.net.get_flat())
        return clone

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(f"policy {self.net.descriptor()}".encode())
        h.update(self.net.get_flat().astype("<f8").tobytes())
        return h.hexdigest()


class RewardModel:
    """Scalar score of (features, candidate label); label vocab adds Surrender."""

    def __init__(self, feature_dim: int, arch: str = "linear", hidden: int = 0, seed: int = 0):
        self.feature_dim = feature_dim
        self.net = Net(arch, feature_dim + len(RM_LABELS), 1, hidden=hidden, seed=seed)

    def _inputs(self, X: np.ndarray, labels: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        labels = np.asarray(labels, dtype=np.int64)
        if labels.min(initial=0) < 0 or labels.max(initial=0) >= len(RM_LABELS):
            raise ValueError("label index outside the reward vocabulary")
        return np.concatenate([X, one_hot(labels, len(RM_LABELS))], axis=1)

    def score(self, X: np.ndarray, labels: np.ndarray) -> np.ndarray:
        return self.net.forward(self._inputs(X, labels))[:, 0]

    def copy(self) -> "RewardModel":
        clone = RewardModel(self.feature_dim, self.net.arch, self.net.hidden)
        clone.net.set_flat(self.net.get_flat())
        return clone

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(f"reward {self.net.descriptor()}".encode())
        h.update(self.net.get_flat().astype("<f8").tobytes())
        return h.hexdigest()


class ReferencePolicy:
    """Frozen snapshot of a policy; scoring only, parameters out of reach."""

    def __init__(self, policy: Policy):
        self._net = Net(policy.net.arch, policy.net.in_dim, policy.net.out_dim,
                        hidden=policy.net.hidden)
        self._net.set_flat(policy.net.get_flat())
        self.feature_dim = policy.feature_dim
        self._hash = policy.content_hash()

    def probs(self, X: np.ndarray) -> np.ndarray:
        return softmax(self._net.forward(X))

    def log_probs(self, X: np.ndarray) -> np.ndarray:
        return log_softmax(self._net.forward(X))

    def content_hash(self) -> str:
        return self._hash

    def verify_unchanged(self) -> bool:
        h = hashlib.sha256()
        h.update(f"policy {self._net.descriptor()}".encode())
        h.update(self._net.get_flat().astype("<f8").tobytes())
        return h.hexdigest() == self._hash


def init_reward_model_from_policy(policy: Policy, seed: int = 0) -> RewardModel:
    """Reward model warm-started from a trained policy.

    mlp: hidden weights over the shared feature columns are copied; the four
    label one-hot columns and the scalar head start fresh. linear has no
    shared encoder, so the reward model starts fresh at the same seed.
    """
    rm = RewardModel(policy.feature_dim, policy.net.arch, policy.net.hidden, seed=seed)
    if policy.net.arch == "mlp":
        rm.net.W1[:, : policy.feature_dim] = policy.net.W1
        rm.net.b1 = policy.net.b1.copy()
    return rm


# ------------------------------------------------------------------ losses


def sft_loss_and_grad(policy: Policy, X: np.ndarray, y: np.ndarray):
    """Cross-entropy of true labels; grad w.r.t. policy parameters."""
    X = np.atleast_2d(X)
    y = np.asarray(y, dtype=np.int64)
    logits, cache = policy.net.forward_cache(X)
    logp = log_softmax(logits)
    n = X.shape[0]
    loss = -logp[np.arange(n), y].mean()
    dlogits = (softmax(logits) - one_hot(y, logits.shape[1])) / n
    return float(loss), policy.net.backward(X, cache, dlogits)


def mf_loss_and_grad(policy: Policy, X: np.ndarray, y: np.ndarray, hard: bool = False):
    """Market-feedback distance: mean ||p - onehot(y)||^2, bounded by [0, 2].

    hard=True scores the argmax prediction instead (0/2 per sample); it is
    piecewise constant, so its gradient is zero and it is for evaluation only.
    """
    X = np.atleast_2d(X)
    y = np.asarray(y, dtype=np.int64)
    logits, cache = policy.net.forward_cache(X)
    p = softmax(logits)
    n = X.shape[0]
    target = one_hot(y, logits.shape[1])
    if hard:
        pred = one_hot(p.argmax(axis=1), logits.shape[1])
        loss = ((pred - target) ** 2).sum(axis=1).mean()
        return float(loss), np.zeros(policy.net.n_params)
    loss = ((p - target) ** 2).sum(axis=1).mean()
    g = 2.0 * (p - target)
    dlogits = p * (g - (g * p).sum(axis=1, keepdims=True)) / n
    return float(loss), policy.net.backward(X, cache, dlogits)


def rm_loss_and_grad(rm: RewardModel, X: np.ndarray, chosen: np.ndarray, rejected: np.ndarray):
    """Pairwise preference loss: mean -log sigmoid(r_chosen - r_rejected)."""
    X = np.atleast_2d(X)
    xw = rm._inputs(X, chosen)
    xl = rm._inputs(X, rejected)
    zw, cw = rm.net.forward_cache(xw)
    zl, cl = rm.net.forward_cache(xl)
    margin = zw[:, 0] - zl[:, 0]
    n = X.shape[0]
    loss = np.logaddexp(0.0, -margin).mean()
    dmargin = -expit(-margin) / n
    grad = rm.net.backward(xw, cw, dmargin[:, None]) + rm.net.backward(
        xl, cl, -dmargin[:, None]
    )
    return float(loss), grad


def ppo_objective_and_grad(
    policy: Policy,
    X: np.ndarray,
    actions: np.ndarray,
    old_logp: np.ndarray,
    advantages: np.ndarray,
    clip_eps: float,
):
    """Mean clipped surrogate (to be maximized) and its parameter gradient.

    Per sample: min(ratio * A, clip(ratio, 1 +/- eps) * A) with
    ratio = exp(logp_now(action) - logp_at_collection). The gradient switches
    off exactly where the clipped branch is active.
    """
    X = np.atleast_2d(X)
    actions = np.asarray(actions, dtype=np.int64)
    old_logp = np.asarray(old_logp, dtype=np.float64)
    advantages = np.asarray(advantages, dtype=np.float64)
    logits, cache = policy.net.forward_cache(X)
    logp = log_softmax(logits)
    n = X.shape[0]
    lp_act = logp[np.arange(n), actions]
    ratio = np.exp(lp_act - old_logp)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    surr = np.minimum(ratio * advantages, clipped * advantages)
    objective = surr.mean()

    off = ((advantages > 0) & (ratio > 1.0 + clip_eps)) | (
        (advantages < 0) & (ratio < 1.0 - clip_eps)
    )
    coef = np.where(off, 0.0, ratio * advantages) / n
    p = softmax(logits)
    dlogits = coef[:, None] * (one_hot(actions, logits.shape[1]) - p)
    return float(objective), policy.net.backward(X, cache, dlogits)


# ------------------------------------------------------------------ checkpoints


def checkpoint_to_bytes(model: Policy | RewardModel) -> bytes:
    kind = "policy" if isinstance(model, Policy) else "reward"
    vocab = len(POLICY_LABELS) if kind == "policy" else len(RM_LABELS)
    header = (
        f"{_MAGIC}\n"
        f"kind={kind} {model.net.descriptor()} feature_dim={model.feature_dim} vocab={vocab}\n"
    )
    return header.encode("ascii") + model.net.get_flat().astype("<f8").tobytes()


def checkpoint_from_bytes(data: bytes) -> Policy | RewardModel:
    nl1 = data.find(b"\n")
    nl2 = data.find(b"\n", nl1 + 1)
    if nl1 < 0 or nl2 < 0:
        raise ValueError("checkpoint too short to hold a header")
    magic = data[:nl1].decode("ascii", errors="replace")
    if magic != _MAGIC:
        raise ValueError(f"bad checkpoint magic {magic!r}")
    fields = dict(kv.split("=", 1) for kv in data[nl1 + 1 : nl2].decode("ascii").split())
    try:
        kind = fields["kind"]
        arch = fields["arch"]
        hidden = int(fields["hidden"])
        feature_dim = int(fields["feature_dim"])
        vocab = int(fields["vocab"])
        in_dim = int(fields["in"])
        out_dim = int(fields["out"])
    except (KeyError, ValueError) as exc:
        raise ValueError(f"malformed checkpoint header: {exc}") from None

    if kind == "policy":
        if vocab != len(POLICY_LABELS) or out_dim != len(POLICY_LABELS) or in_dim != feature_dim:
            raise ValueError("policy checkpoint dimensions are inconsistent")
        model: Policy | RewardModel = Policy(feature_dim, arch, hidden)
    elif kind == "reward":
        if vocab != len(RM_LABELS) or out_dim != 1 or in_dim != feature_dim + vocab:
            raise ValueError("reward checkpoint dimensions are inconsistent")
        model = RewardModel(feature_dim, arch, hidden)
    else:
        raise ValueError(f"unknown checkpoint kind {kind!r}")

    blob = data[nl2 + 1 :]
    expected = model.net.n_params * 8
    if len(blob) != expected:
        raise ValueError(f"checkpoint payload is {len(blob)} bytes, expected {expected}")
    model.net.set_flat(np.frombuffer(blob, dtype="<f8"))
    return model


def save_checkpoint(model: Policy | RewardModel, path) -> None:
    from .ioutil import atomic_write_bytes

    atomic_write_bytes(path, checkpoint_to_bytes(model))


def load_checkpoint(path) -> Policy | RewardModel:
    from pathlib import Path

    return checkpoint_from_bytes(Path(path).read_bytes())


# ------------------------------------------------------------------ features


@dataclass
class FeatureConfig:
    """Shape of the model input built from an example."""

    depth: int = 10
    news_dim: int = 8

    def __post_init__(self) -> None:
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.news_dim < 0:
            raise ValueError("news_dim must be >= 0")

    @property
    def per_row(self) -> int:
        return 6

    @property
    def feature_dim(self) -> int:
        return self.per_row * self.depth + self.news_dim


# context column positions (see featurize.CONTEXT_COLUMNS)
_COL_CLOSE = 4
_COL_PCT = 7
_COL_MACD = 8
_COL_BUP = 9
_COL_BLO = 10
_COL_RSI = 11
_COL_CCI = 12
_COL_DX = 13


def _row_features(row: list) -> list[float]:
    def val(i):
        v = row[i]
        return None if v is None else float(v)

    pct = val(_COL_PCT)
    rsi = val(_COL_RSI)
    dxv = val(_COL_DX)
    cciv = val(_COL_CCI)
    close = val(_COL_CLOSE)
    macd = val(_COL_MACD)
    bup, blo = val(_COL_BUP), val(_COL_BLO)

    feats = [
        0.0 if pct is None else pct / 5.0,
        0.0 if rsi is None else rsi / 100.0 - 0.5,
        0.0 if dxv is None else dxv / 100.0 - 0.5,
        0.0 if cciv is None else cciv / 500.0,
        0.0,
        0.0,
    ]
    if bup is not None and blo is not None and close is not None and bup - blo > 1e-12:
        feats[4] = (close - blo) / (bup - blo) - 0.5
    if macd is not None and close is not None and close > 0:
        feats[5] = 20.0 * macd / close
    return feats


def features_from_example(example: Example, config: FeatureConfig) -> np.ndarray:
    """Flattened, normalized context rows plus the news embedding.

    The most recent `depth` context rows map to fixed positions (newest last);
    missing leading rows and warm-up gaps contribute zeros, so the dimension
    is constant across examples.
    """
    rows = example.context[-config.depth :]
    flat: list[float] = []
    for _ in range(config.depth - len(rows)):
        flat.extend([0.0] * config.per_row)
    for row in rows:
        flat.extend(_row_features(row))

    if config.news_dim:
        if example.news_embedding is None:
            flat.extend([0.0] * config.news_dim)
        else:
            emb = np.asarray(example.news_embedding, dtype=np.float64)
            if emb.shape != (config.news_dim,):
                raise ValueError(
                    f"news embedding has dim {emb.shape[0]}, config says {config.news_dim}"
                )
            flat.extend(emb.tolist())
    out = np.array(flat, dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise ValueError("feature vector contains non-finite values")
    return out


def features_and_labels(
    examples: list[Example], config: FeatureConfig
) -> tuple[np.ndarray, np.ndarray]:
    if not examples:
        return np.zeros((0, config.feature_dim)), np.zeros(0, dtype=np.int64)
    X = np.stack([features_from_example(ex, config) for ex in examples])
    y = np.array([LABEL_TO_INDEX[ex.response] for ex in examples], dtype=np.int64)
    return X, y
