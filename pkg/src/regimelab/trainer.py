"""Training loops: supervised stage, preference (reward model) stage, and
clipped policy-gradient updates with a frozen reference anchor.

The policy update treats label prediction as a single-step bandit: one
prompt, one sampled label, one scalar reward. The per-sample return is

    reward - kl_coef * (logp_collect(action) - logp_ref(action))

computed with collection-time log-probs, so the advantage is a constant
during the inner epochs and the current parameters enter only through the
clipped importance ratio. The combined update subtracts mf_coef times the
market-feedback gradient, i.e. it maximizes (clipped surrogate) minus
mf_coef * (market-feedback loss). mf_coef=0 reduces bit-for-bit to the plain
clipped update.

Everything is deterministic per (config, seed): data order, rollout draws,
and optimizer state never touch global RNG.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .models import (
    Policy,
    ReferencePolicy,
    RewardModel,
    kl_categorical,
    mf_loss_and_grad,
    ppo_objective_and_grad,
    rm_loss_and_grad,
    sft_loss_and_grad,
)
from .seeding import derive_seed


class TrainingDiverged(RuntimeError):
    """A loss went non-finite or exploded; carries the stage and step."""


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    batch_size: int = 32
    epochs: int = 30
    momentum: float = 0.9
    optimizer: str = "sgd"
    grad_clip_norm: float = 1.0
    clip_eps: float = 0.2
    kl_coef: float = 0.1
    mf_coef: float = 1.0
    rollout_size: int = 256
    ppo_epochs: int = 4
    baseline: str = "running-mean"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        if self.grad_clip_norm <= 0:
            raise ValueError("grad_clip_norm must be > 0")
        if not 0 < self.clip_eps < 1:
            raise ValueError("clip_eps must lie in (0, 1)")
        if self.kl_coef < 0 or self.mf_coef < 0:
            raise ValueError("kl_coef and mf_coef must be >= 0")
        if self.rollout_size < 0:
            raise ValueError("rollout_size must be >= 0")
        if self.ppo_epochs < 1:
            raise ValueError("ppo_epochs must be >= 1")
        if self.baseline not in ("running-mean", "none"):
            raise ValueError("baseline must be 'running-mean' or 'none'")


class _Optimizer:
    """SGD with momentum, or adaptive moments, over the flat parameter vector."""

    def __init__(self, config: TrainConfig, n_params: int):
        self.kind = config.optimizer
        self.lr = config.learning_rate
        self.momentum = config.momentum
        self.clip = config.grad_clip_norm
        self.velocity = np.zeros(n_params)
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        norm = float(np.linalg.norm(grad))
        if norm > self.clip:
            grad = grad * (self.clip / norm)
        if self.kind == "sgd":
            self.velocity = self.momentum * self.velocity - self.lr * grad
            return params + self.velocity
        self.t += 1
        b1, b2, eps = 0.9, 0.999, 1e-8
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad * grad
        mhat = self.m / (1 - b1**self.t)
        vhat = self.v / (1 - b2**self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + eps)


# All objectives here are O(1) at sane parameter scales (log-probs of a
# 3/4-way head, Brier in [0,2], softplus of a margin); a loss this large can
# only mean the parameters blew up.
_LOSS_EXPLOSION = 1e6


def _check_finite(loss: float, stage: str, step: int) -> None:
    if not np.isfinite(loss) or abs(loss) > _LOSS_EXPLOSION:
        raise TrainingDiverged(f"{stage} loss diverged at step {step}: {loss}")


# ------------------------------------------------------------------ supervised


def train_sft(policy: Policy, X: np.ndarray, y: np.ndarray, config: TrainConfig) -> list[float]:
    """Mini-batch cross-entropy descent; returns per-epoch mean pre-step loss."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] != y.shape[0]:
        raise ValueError("features and labels disagree on length")
    if X.shape[0] == 0:
        raise ValueError("cannot train on an empty set")
    rng = np.random.default_rng(config.seed)
    opt = _Optimizer(config, policy.net.n_params)
    curve: list[float] = []
    for epoch in range(config.epochs):
        perm = rng.permutation(X.shape[0])
        batch_losses = []
        for i in range(0, X.shape[0], config.batch_size):
            idx = perm[i : i + config.batch_size]
            loss, grad = sft_loss_and_grad(policy, X[idx], y[idx])
            _check_finite(loss, "supervised", epoch)
            batch_losses.append(loss)
            policy.net.set_flat(opt.step(policy.net.get_flat(), grad))
        curve.append(float(np.mean(batch_losses)))
    return curve


# ------------------------------------------------------------------ preferences


@dataclass
class PreferenceSet:
    """Featurized preference pairs: one prompt row per pair."""

    features: np.ndarray
    chosen: np.ndarray
    rejected: np.ndarray

    def __post_init__(self) -> None:
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.chosen = np.asarray(self.chosen, dtype=np.int64)
        self.rejected = np.asarray(self.rejected, dtype=np.int64)
        n = self.features.shape[0]
        if self.chosen.shape != (n,) or self.rejected.shape != (n,):
            raise ValueError("chosen/rejected must align with features")
        if np.any(self.chosen == self.rejected):
            raise ValueError("a pair cannot prefer a label over itself")

    def __len__(self) -> int:
        return self.features.shape[0]

    def subset(self, idx: np.ndarray) -> "PreferenceSet":
        return PreferenceSet(self.features[idx], self.chosen[idx], self.rejected[idx])


def ranking_accuracy(rm: RewardModel, pairs: PreferenceSet) -> float:
    """Fraction of pairs where the chosen label outscores the rejected one
    (ties do not count)."""
    if len(pairs) == 0:
        raise ValueError("no pairs to rank")
    sw = rm.score(pairs.features, pairs.chosen)
    sl = rm.score(pairs.features, pairs.rejected)
    return float(np.mean(sw > sl))


@dataclass
class RMTrainReport:
    losses: list[float]
    holdout_accuracy: float
    n_train: int
    n_holdout: int


def train_reward_model(
    rm: RewardModel,
    pairs: PreferenceSet,
    config: TrainConfig,
    holdout_frac: float = 0.1,
) -> RMTrainReport:
    """Pairwise logistic training with a seeded held-out slice for ranking
    accuracy. With too few pairs to hold anything out, accuracy is measured
    on the training pairs."""
    if len(pairs) == 0:
        raise ValueError("cannot train a reward model on zero pairs")
    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(len(pairs))
    n_hold = int(len(pairs) * holdout_frac)
    hold = pairs.subset(perm[:n_hold])
    train = pairs.subset(perm[n_hold:])
    if len(train) == 0:
        train, hold = pairs, pairs
        n_hold = 0

    opt = _Optimizer(config, rm.net.n_params)
    curve: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(train))
        batch_losses = []
        for i in range(0, len(train), config.batch_size):
            idx = order[i : i + config.batch_size]
            sub = train.subset(idx)
            loss, grad = rm_loss_and_grad(rm, sub.features, sub.chosen, sub.rejected)
            _check_finite(loss, "preference", epoch)
            batch_losses.append(loss)
            rm.net.set_flat(opt.step(rm.net.get_flat(), grad))
        curve.append(float(np.mean(batch_losses)))
    acc = ranking_accuracy(rm, hold if n_hold else train)
    return RMTrainReport(
        losses=curve, holdout_accuracy=acc, n_train=len(train), n_holdout=n_hold
    )


# ------------------------------------------------------------------ rollouts


@dataclass
class RolloutBatch:
    """Sampled prompt/label episodes: features, sampled action, its collection
    log-prob, the realized label, and the scalar reward."""

    features: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    realized: np.ndarray
    rewards: np.ndarray

    def __post_init__(self) -> None:
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        n = self.features.shape[0]
        for name in ("actions", "realized"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        for name in ("logp", "rewards"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        for name in ("actions", "logp", "realized", "rewards"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have length {n}")

    def __len__(self) -> int:
        return self.actions.size


def collect_rollouts(
    policy: Policy,
    X: np.ndarray,
    y_true: np.ndarray,
    n: int,
    seed: int,
    reward_model: RewardModel | None = None,
) -> RolloutBatch:
    """Sample n prompts (with replacement) and one label each from the policy.

    Rewards come from the reward model when given, else zero; they can be
    re-scored later via `rescore_rollouts`.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y_true = np.asarray(y_true, dtype=np.int64)
    if X.shape[0] == 0:
        raise ValueError("no prompts to roll out on")
    if n < 0:
        raise ValueError("n must be >= 0")
    rng = np.random.default_rng(seed)
    if n == 0:
        d = X.shape[1]
        return RolloutBatch(np.zeros((0, d)), np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0))
    idx = rng.integers(0, X.shape[0], size=n)
    feats = X[idx]
    actions = policy.sample(feats, rng)
    logp = policy.log_probs(feats)[np.arange(n), actions]
    realized = y_true[idx]
    if reward_model is not None:
        rewards = reward_model.score(feats, actions)
    else:
        rewards = np.zeros(n)
    return RolloutBatch(feats, actions, logp, realized, rewards)


def rescore_rollouts(batch: RolloutBatch, reward_model: RewardModel) -> RolloutBatch:
    """Same episodes, rewards recomputed with a (freshly updated) reward model."""
    return RolloutBatch(
        batch.features,
        batch.actions,
        batch.logp,
        batch.realized,
        reward_model.score(batch.features, batch.actions),
    )


# ------------------------------------------------------------------ policy updates


@dataclass
class UpdateStats:
    objective: float
    loss: float
    mf_loss: float | None
    reward_mean: float
    kl_mean: float
    clip_frac: float
    baseline: float
    n_samples: int


def _policy_update(
    policy: Policy,
    ref: ReferencePolicy,
    batch: RolloutBatch,
    config: TrainConfig,
    mf_coef: float,
) -> UpdateStats:
    n = len(batch)
    if n == 0:
        return UpdateStats(0.0, 0.0, None, 0.0, 0.0, 0.0, 0.0, 0)
    X, actions = batch.features, batch.actions
    ref_logp = ref.log_probs(X)[np.arange(n), actions]
    adjusted = batch.rewards - config.kl_coef * (batch.logp - ref_logp)
    baseline = float(adjusted.mean()) if config.baseline == "running-mean" else 0.0
    adv = adjusted - baseline

    opt = _Optimizer(config, policy.net.n_params)
    objective = loss = 0.0
    mf_val: float | None = None
    for epoch in range(config.ppo_epochs):
        objective, grad_obj = ppo_objective_and_grad(
            policy, X, actions, batch.logp, adv, config.clip_eps
        )
        loss = -objective
        grad = -grad_obj
        if mf_coef != 0.0:
            mf_val, grad_mf = mf_loss_and_grad(policy, X, batch.realized)
            loss += mf_coef * mf_val
            grad = grad + mf_coef * grad_mf
        _check_finite(loss, "policy-update", epoch)
        policy.net.set_flat(opt.step(policy.net.get_flat(), grad))

    new_logp = policy.log_probs(X)[np.arange(n), actions]
    ratio = np.exp(new_logp - batch.logp)
    clip_frac = float(np.mean(np.abs(ratio - 1.0) > config.clip_eps))
    kl_mean = float(np.mean(kl_categorical(policy.probs(X), ref.probs(X))))
    return UpdateStats(
        objective=float(objective),
        loss=float(loss),
        mf_loss=mf_val,
        reward_mean=float(batch.rewards.mean()),
        kl_mean=kl_mean,
        clip_frac=clip_frac,
        baseline=baseline,
        n_samples=n,
    )


def ppo_update(
    policy: Policy, ref: ReferencePolicy, batch: RolloutBatch, config: TrainConfig
) -> UpdateStats:
    """Clipped-surrogate update only (no market-feedback term)."""
    return _policy_update(policy, ref, batch, config, mf_coef=0.0)


def rlmf_update(
    policy: Policy, ref: ReferencePolicy, batch: RolloutBatch, config: TrainConfig
) -> UpdateStats:
    """Clipped surrogate combined with the market-feedback term; maximizes
    surrogate minus mf_coef * feedback loss."""
    return _policy_update(policy, ref, batch, config, mf_coef=config.mf_coef)


def run_policy_optimization(
    policy: Policy,
    ref: ReferencePolicy,
    X: np.ndarray,
    y_true: np.ndarray,
    reward_model: RewardModel | None,
    config: TrainConfig,
    rounds: int,
    seed: int,
    use_mf: bool = False,
) -> list[UpdateStats]:
    """Repeated collect-then-update rounds over a fixed prompt set."""
    update = rlmf_update if use_mf else ppo_update
    stats: list[UpdateStats] = []
    for r in range(rounds):
        batch = collect_rollouts(
            policy, X, y_true, config.rollout_size, derive_seed(seed, r), reward_model
        )
        stats.append(update(policy, ref, batch, config))
    return stats


# ------------------------------------------------------------------ curve CSV

CURVE_CSV_HEADER = "step,loss,reward_mean,kl_mean,clip_frac,acc"


def curve_to_csv(rows: list[dict]) -> str:
    """Training curve artifact; missing fields render as empty cells."""
    lines = [CURVE_CSV_HEADER]
    for row in rows:
        cells = [str(int(row["step"]))]
        for key in ("loss", "reward_mean", "kl_mean", "clip_frac", "acc"):
            v = row.get(key)
            cells.append("" if v is None else f"{float(v):.6f}")
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
