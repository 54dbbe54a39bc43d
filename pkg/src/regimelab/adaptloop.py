"""Offline training phase and windowed online deployment.

Training phase: supervised stage, then a reward model warm-started from the
policy encoder and fit on preference pairs, then optional reward-driven
policy optimization against a frozen reference snapshot.

Deployment: the stream is consumed strictly predict-then-reveal. A frozen
executor serves each feedback window; at the end of a full window the
realized labels become preference pairs, the reward model is refit, the
window's episodes are rescored, and a student copy of the executor takes one
combined update (clipped surrogate plus market-feedback term). The student
then replaces the executor for the next window. A trailing partial window is
evaluated but never triggers updates.

Anchor semantics: the update's KL penalty rides on the rewards as
-kl_coef * (logp_collect - logp_anchor). With kl_anchor="window" the anchor
IS the collecting executor, so the penalty is identically zero and each
update is restrained only by the ratio clip; with kl_anchor="initial" the
penalty measures total drift from the policy the deployment started with
and actively pulls the executor back toward it.

Determinism: the prediction at stream step t uses an rng seeded by
derive_seed(seed, t) and nothing else, so a deployment whose updates are all
disabled is bit-identical to the frozen baseline. Window-level update seeds
live in disjoint substream families (index offsets of 2**32 and 2**33),
which cannot collide with step indices for any realistic stream length.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import POLICY_LABELS, RM_LABELS
from .models import (
    Policy,
    ReferencePolicy,
    RewardModel,
    init_reward_model_from_policy,
    kl_categorical,
    save_checkpoint,
)
from .seeding import derive_seed, rng_for
from .trainer import (
    PreferenceSet,
    RMTrainReport,
    RolloutBatch,
    TrainConfig,
    TrainingDiverged,
    UpdateStats,
    ranking_accuracy,
    rlmf_update,
    run_policy_optimization,
    train_reward_model,
    train_sft,
)

_PAIR_STREAM = 1 << 32
_UPDATE_STREAM = 1 << 33


class StageFailure(RuntimeError):
    """A pipeline stage failed; `stage` names which one."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


class LookaheadError(RuntimeError):
    """The predict-then-reveal protocol was violated."""


# ------------------------------------------------------------------ training phase


@dataclass
class TrainingPhaseConfig:
    arch: str = "mlp"
    hidden: int = 32
    sft: TrainConfig = field(default_factory=TrainConfig)
    rm: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=0.05, optimizer="adam"))
    rl: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=0.05))
    rl_rounds: int = 0
    use_mf: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.rl_rounds < 0:
            raise ValueError("rl_rounds must be >= 0")


@dataclass
class TrainingPhaseResult:
    policy: Policy
    reward_model: RewardModel
    reference: ReferencePolicy
    sft_curve: list[float]
    rm_report: RMTrainReport
    rl_stats: list[UpdateStats]


def run_training_phase(
    X: np.ndarray,
    y: np.ndarray,
    pairs: PreferenceSet,
    config: TrainingPhaseConfig,
    out_dir: str | None = None,
) -> TrainingPhaseResult:
    """Supervised stage, reward model stage, optional policy optimization.

    With rl_rounds=0 the returned policy is the supervised policy, untouched.
    When out_dir is given, sft.ckpt / rm.ckpt / policy.ckpt are saved there.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    policy = Policy(
        X.shape[1], arch=config.arch, hidden=config.hidden, seed=derive_seed(config.seed, 0)
    )
    try:
        sft_curve = train_sft(policy, X, y, config.sft)
    except TrainingDiverged as exc:
        raise StageFailure("sft", str(exc)) from exc
    if out_dir is not None:
        save_checkpoint(policy, os.path.join(out_dir, "sft.ckpt"))

    rm = init_reward_model_from_policy(policy, seed=derive_seed(config.seed, 1))
    try:
        rm_report = train_reward_model(rm, pairs, config.rm)
    except TrainingDiverged as exc:
        raise StageFailure("reward-model", str(exc)) from exc
    if out_dir is not None:
        save_checkpoint(rm, os.path.join(out_dir, "rm.ckpt"))

    reference = ReferencePolicy(policy)
    rl_stats: list[UpdateStats] = []
    if config.rl_rounds > 0:
        try:
            rl_stats = run_policy_optimization(
                policy,
                reference,
                X,
                y,
                rm,
                config.rl,
                rounds=config.rl_rounds,
                seed=derive_seed(config.seed, 2),
                use_mf=config.use_mf,
            )
        except TrainingDiverged as exc:
            raise StageFailure("policy-optimization", str(exc)) from exc
    if out_dir is not None:
        save_checkpoint(policy, os.path.join(out_dir, "policy.ckpt"))
    return TrainingPhaseResult(policy, rm, reference, sft_curve, rm_report, rl_stats)


# ------------------------------------------------------------------ stream


class MarketStream:
    """Array-backed stream enforcing predict-then-reveal order.

    Each step must call `features()` once, then `resolve(prediction)` once;
    the realized label is only ever released through `resolve`. Any other
    order raises LookaheadError.
    """

    def __init__(self, features: np.ndarray, labels: np.ndarray):
        self._features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        self.__labels = np.asarray(labels, dtype=np.int64)
        if self._features.shape[0] != self.__labels.shape[0]:
            raise ValueError("features and labels disagree on length")
        self._cursor = 0
        self._pending = False

    def __len__(self) -> int:
        return self._features.shape[0]

    @property
    def cursor(self) -> int:
        return self._cursor

    @property
    def exhausted(self) -> bool:
        return self._cursor >= len(self)

    def features(self) -> np.ndarray:
        if self.exhausted:
            raise LookaheadError("stream exhausted")
        if self._pending:
            raise LookaheadError(
                f"step {self._cursor} awaits a prediction before new features"
            )
        self._pending = True
        return self._features[self._cursor]

    def resolve(self, prediction: int) -> int:
        """Record the prediction for the current step; reveals the realized label."""
        if not self._pending:
            raise LookaheadError(
                f"no prediction pending at step {self._cursor}; call features() first"
            )
        if not 0 <= int(prediction) < len(POLICY_LABELS):
            raise ValueError(f"prediction {prediction} is not a known label index")
        truth = int(self.__labels[self._cursor])
        self._pending = False
        self._cursor += 1
        return truth


# ------------------------------------------------------------------ feedback pairs


def derive_preferences_from_feedback(
    features: np.ndarray,
    predictions: np.ndarray,
    realized: np.ndarray,
    seed: int,
) -> PreferenceSet:
    """Window feedback to preference pairs: chosen is the realized label; the
    rejected side is the wrong prediction when there was one, else a seeded
    draw from the remaining reward-model vocabulary."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    predictions = np.asarray(predictions, dtype=np.int64)
    realized = np.asarray(realized, dtype=np.int64)
    n = features.shape[0]
    if predictions.shape != (n,) or realized.shape != (n,):
        raise ValueError("predictions/realized must align with features")
    rejected = np.empty(n, dtype=np.int64)
    k = len(RM_LABELS)
    for i in range(n):
        if predictions[i] != realized[i]:
            rejected[i] = predictions[i]
        else:
            rng = rng_for(seed, i)
            alternatives = [j for j in range(k) if j != realized[i]]
            rejected[i] = alternatives[int(rng.integers(0, len(alternatives)))]
    return PreferenceSet(features, realized, rejected)


# ------------------------------------------------------------------ deployment


@dataclass
class DeployConfig:
    window: int = 10
    rm_epochs: int = 2
    rlmf_epochs: int = 2
    kl_anchor: str = "window"
    replay: bool = False
    updates: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=0.05))
    seed: int = 0

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.rm_epochs < 0 or self.rlmf_epochs < 0:
            raise ValueError("rm_epochs and rlmf_epochs must be >= 0")
        if self.kl_anchor not in ("window", "initial"):
            raise ValueError("kl_anchor must be 'window' or 'initial'")


@dataclass
class StepRecord:
    step: int
    window: int
    prediction: int
    truth: int
    correct: bool
    swapped: bool


@dataclass
class WindowRecord:
    window: int
    rm_accuracy: float | None
    kl_to_initial: float
    post_update_accuracy: float


@dataclass
class DeploymentLog:
    steps: list[StepRecord]
    windows: list[WindowRecord]
    window_size: int

    def accuracy(self) -> float:
        if not self.steps:
            raise ValueError("empty deployment log")
        return float(np.mean([s.correct for s in self.steps]))

    def window_accuracies(self) -> list[float]:
        """Mean step accuracy per window id, the trailing partial one included."""
        out: list[float] = []
        by_window: dict[int, list[bool]] = {}
        for s in self.steps:
            by_window.setdefault(s.window, []).append(s.correct)
        for w in sorted(by_window):
            out.append(float(np.mean(by_window[w])))
        return out

    def summary(self) -> dict:
        return {
            "n_steps": len(self.steps),
            "window_size": self.window_size,
            "completed_windows": len(self.windows),
            "accuracy": self.accuracy(),
            "window_accuracy": self.window_accuracies(),
            "kl_to_initial": [w.kl_to_initial for w in self.windows],
            "swaps": int(sum(s.swapped for s in self.steps)),
        }


DEPLOY_STEP_CSV_HEADER = "step,window,prediction,truth,correct,swapped"
DEPLOY_WINDOW_CSV_HEADER = "window,rm_accuracy,kl_to_initial,post_update_accuracy"


def steps_to_csv(log: DeploymentLog) -> str:
    lines = [DEPLOY_STEP_CSV_HEADER]
    for s in log.steps:
        lines.append(
            f"{s.step},{s.window},{POLICY_LABELS[s.prediction]},"
            f"{POLICY_LABELS[s.truth]},{int(s.correct)},{int(s.swapped)}"
        )
    return "\n".join(lines) + "\n"


def windows_to_csv(log: DeploymentLog) -> str:
    lines = [DEPLOY_WINDOW_CSV_HEADER]
    for w in log.windows:
        rm = "" if w.rm_accuracy is None else f"{w.rm_accuracy:.6f}"
        lines.append(
            f"{w.window},{rm},{w.kl_to_initial:.6f},{w.post_update_accuracy:.6f}"
        )
    return "\n".join(lines) + "\n"


def _predict(policy: Policy, feats: np.ndarray, seed: int, step: int) -> int:
    rng = rng_for(seed, step)
    return int(policy.sample(feats[None, :], rng)[0])


def run_deployment(
    policy: Policy,
    reward_model: RewardModel,
    stream: MarketStream,
    config: DeployConfig,
) -> DeploymentLog:
    """Windowed online adaptation over the stream; returns the full log.

    The executor serving predictions is frozen within each window. Updates
    mutate `reward_model` in place and swap the executor; the `policy`
    argument itself is never mutated. Drift is measured per window as mean
    KL(executor || initial policy) over that window's features.
    """
    executor = policy.copy()
    initial = ReferencePolicy(policy)
    steps: list[StepRecord] = []
    windows: list[WindowRecord] = []
    replay_pairs: list[PreferenceSet] = []

    win_feats: list[np.ndarray] = []
    win_actions: list[int] = []
    win_truth: list[int] = []

    for t in range(len(stream)):
        w = t // config.window
        feats = stream.features()
        action = _predict(executor, feats, config.seed, t)
        truth = stream.resolve(action)
        win_feats.append(feats)
        win_actions.append(action)
        win_truth.append(truth)

        if len(win_feats) < config.window:
            steps.append(StepRecord(t, w, action, truth, action == truth, False))
            continue

        # window complete: derive feedback, update, swap
        F = np.asarray(win_feats)
        A = np.asarray(win_actions, dtype=np.int64)
        T = np.asarray(win_truth, dtype=np.int64)
        # the executor is frozen within the window, so collection-time
        # log-probs can be computed in one batched call; this keeps them
        # bitwise consistent with how the update evaluates its anchor
        L = executor.log_probs(F)[np.arange(config.window), A]
        win_feats, win_actions, win_truth = [], [], []

        pairs = derive_preferences_from_feedback(
            F, A, T, seed=derive_seed(config.seed, _PAIR_STREAM + w)
        )
        rm_acc: float | None = None
        if config.rm_epochs > 0:
            replay_pairs.append(pairs)
            if config.replay and len(replay_pairs) > 1:
                fit_on = PreferenceSet(
                    np.concatenate([p.features for p in replay_pairs]),
                    np.concatenate([p.chosen for p in replay_pairs]),
                    np.concatenate([p.rejected for p in replay_pairs]),
                )
            else:
                fit_on = pairs
            rm_cfg = replace(
                config.updates,
                epochs=config.rm_epochs,
                seed=derive_seed(config.seed, _UPDATE_STREAM + 2 * w),
            )
            try:
                train_reward_model(reward_model, fit_on, rm_cfg, holdout_frac=0.0)
            except TrainingDiverged as exc:
                raise StageFailure("deployment", str(exc)) from exc
            rm_acc = ranking_accuracy(reward_model, pairs)

        swapped = False
        if config.rlmf_epochs > 0:
            # rescore the window's episodes with the freshly updated model
            batch = RolloutBatch(F, A, L, T, reward_model.score(F, A))
            anchor = (
                ReferencePolicy(executor) if config.kl_anchor == "window" else initial
            )
            update_cfg = replace(
                config.updates,
                ppo_epochs=config.rlmf_epochs,
                seed=derive_seed(config.seed, _UPDATE_STREAM + 2 * w + 1),
            )
            student = executor.copy()
            try:
                rlmf_update(student, anchor, batch, update_cfg)
            except TrainingDiverged as exc:
                raise StageFailure("deployment", str(exc)) from exc
            executor = student
            swapped = True

        steps.append(StepRecord(t, w, action, truth, action == truth, swapped))
        windows.append(
            WindowRecord(
                window=w,
                rm_accuracy=rm_acc,
                kl_to_initial=float(
                    np.mean(kl_categorical(executor.probs(F), initial.probs(F)))
                ),
                post_update_accuracy=float(np.mean(executor.greedy(F) == T)),
            )
        )
    return DeploymentLog(steps, windows, config.window)


def run_frozen_baseline(
    policy: Policy, stream: MarketStream, config: DeployConfig
) -> DeploymentLog:
    """Same per-step predictions as run_deployment, but no updates ever."""
    steps: list[StepRecord] = []
    for t in range(len(stream)):
        feats = stream.features()
        action = _predict(policy, feats, config.seed, t)
        truth = stream.resolve(action)
        steps.append(StepRecord(t, t // config.window, action, truth, action == truth, False))
    return DeploymentLog(steps, [], config.window)
