"""Discrete belief filtering over hidden market regimes.

A partially observed decision process with finite states, actions, and
observations: `transition[a, s, s']` moves the hidden state, `emission[s', o]`
emits what the agent sees from the landed state. `belief_update` is the
standard two-stage recursion: push the belief through the transition for the
chosen action, then reweight by the likelihood of the observation and
renormalize. An observation the predicted belief gives zero probability is
reported as an error rather than silently renormalized.

`pomdp_from_regime_spec` specializes this to the return-generating chain:
with no autoregressive carryover (phi = 0) and normal shocks, the return at
each step is an iid draw from the active regime's normal, so binning returns
gives an exact finite observation alphabet whose emission probabilities are
normal CDF differences.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .ioutil import atomic_write_text
from .market_sim import RegimeSpec


@dataclass
class POMDPSpec:
    states: tuple[str, ...]
    actions: tuple[str, ...]
    observations: tuple[str, ...]
    transition: np.ndarray
    emission: np.ndarray

    def __post_init__(self) -> None:
        self.states = tuple(self.states)
        self.actions = tuple(self.actions)
        self.observations = tuple(self.observations)
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.emission = np.asarray(self.emission, dtype=np.float64)
        k, a, m = len(self.states), len(self.actions), len(self.observations)
        if k < 1 or a < 1 or m < 1:
            raise ValueError("states, actions, and observations must be non-empty")
        for group in (self.states, self.actions, self.observations):
            if len(set(group)) != len(group):
                raise ValueError("names must be unique")
            if not all(isinstance(n, str) and n for n in group):
                raise ValueError("names must be non-empty strings")
        if self.transition.shape != (a, k, k):
            raise ValueError(f"transition must have shape ({a}, {k}, {k})")
        if self.emission.shape != (k, m):
            raise ValueError(f"emission must have shape ({k}, {m})")
        for name, table in (("transition", self.transition), ("emission", self.emission)):
            if np.any(table < 0) or np.any(table > 1):
                raise ValueError(f"{name} entries must lie in [0, 1]")
        if np.any(np.abs(self.transition.sum(axis=2) - 1.0) > 1e-12):
            raise ValueError("transition rows must sum to 1 within 1e-12")
        if np.any(np.abs(self.emission.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("emission rows must sum to 1 within 1e-12")

    @property
    def n_states(self) -> int:
        return len(self.states)

    def to_json_dict(self) -> dict:
        return {
            "states": list(self.states),
            "actions": list(self.actions),
            "observations": list(self.observations),
            "transition": self.transition.tolist(),
            "emission": self.emission.tolist(),
        }


_POMDP_FIELDS = {"states", "actions", "observations", "transition", "emission"}


def pomdp_from_json_dict(data: dict) -> POMDPSpec:
    if not isinstance(data, dict):
        raise ValueError("expected a JSON object")
    missing = _POMDP_FIELDS - set(data)
    if missing:
        raise ValueError(f"missing fields: {sorted(missing)}")
    unknown = set(data) - _POMDP_FIELDS
    if unknown:
        raise ValueError(f"unknown fields: {sorted(unknown)}")
    return POMDPSpec(
        states=tuple(data["states"]),
        actions=tuple(data["actions"]),
        observations=tuple(data["observations"]),
        transition=np.asarray(data["transition"], dtype=np.float64),
        emission=np.asarray(data["emission"], dtype=np.float64),
    )


def save_pomdp(spec: POMDPSpec, path: str) -> None:
    atomic_write_text(
        path, json.dumps(spec.to_json_dict(), indent=2, allow_nan=False) + "\n"
    )


def load_pomdp(path: str) -> POMDPSpec:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path} is not valid JSON: {exc}") from exc
    return pomdp_from_json_dict(data)


# ------------------------------------------------------------------ filtering


def _check_belief(spec: POMDPSpec, belief: np.ndarray) -> np.ndarray:
    belief = np.asarray(belief, dtype=np.float64)
    if belief.shape != (spec.n_states,):
        raise ValueError(f"belief must have shape ({spec.n_states},)")
    if np.any(belief < 0) or abs(belief.sum() - 1.0) > 1e-9:
        raise ValueError("belief must be a distribution over states")
    return belief


def obs_likelihood(spec: POMDPSpec, belief: np.ndarray, action: int, observation: int) -> float:
    """Probability of seeing the observation after acting from this belief."""
    belief = _check_belief(spec, belief)
    predicted = belief @ spec.transition[action]
    return float(predicted @ spec.emission[:, observation])


def belief_update(
    spec: POMDPSpec, belief: np.ndarray, action: int, observation: int
) -> np.ndarray:
    """Bayes step: transition push-forward, then observation reweighting."""
    belief = _check_belief(spec, belief)
    if not 0 <= action < len(spec.actions):
        raise ValueError(f"action index {action} out of range")
    if not 0 <= observation < len(spec.observations):
        raise ValueError(f"observation index {observation} out of range")
    predicted = belief @ spec.transition[action]
    numer = predicted * spec.emission[:, observation]
    norm = numer.sum()
    if norm <= 0.0:
        raise ValueError(
            f"observation {spec.observations[observation]!r} has zero probability "
            "under the predicted belief"
        )
    return numer / norm


# ------------------------------------------------------------------ regime specialization


def normal_cdf(x: float, mean: float = 0.0, std: float = 1.0) -> float:
    if std <= 0:
        raise ValueError("std must be > 0")
    return 0.5 * (1.0 + math.erf((x - mean) / (std * math.sqrt(2.0))))


def _check_bin_edges(bin_edges: np.ndarray) -> np.ndarray:
    edges = np.asarray(bin_edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 1:
        raise ValueError("need at least one bin edge")
    if not np.all(np.isfinite(edges)):
        raise ValueError("bin edges must be finite")
    if np.any(np.diff(edges) <= 0):
        raise ValueError("bin edges must be strictly increasing")
    return edges


def discretize_returns(returns: np.ndarray, bin_edges: np.ndarray) -> np.ndarray:
    """Map returns to bin ids: bin i covers (edge_{i-1}, edge_i], the first
    bin is open below and the last open above."""
    edges = _check_bin_edges(bin_edges)
    returns = np.asarray(returns, dtype=np.float64)
    if not np.all(np.isfinite(returns)):
        raise ValueError("returns must be finite")
    return np.searchsorted(edges, returns, side="left")


def pomdp_from_regime_spec(spec: RegimeSpec, bin_edges) -> POMDPSpec:
    """Exact observation model for a memoryless regime chain.

    Requires phi = 0 (no carryover: each return is iid given the regime) and
    normal shocks. Regimes with sigma = 0 emit their mean's bin with
    certainty.
    """
    edges = _check_bin_edges(bin_edges)
    if np.any(spec.phi != 0.0):
        raise ValueError("return binning is exact only for phi = 0 regimes")
    if spec.shock_dist != "normal":
        raise ValueError("emission model requires normal shocks")
    k = spec.n_regimes
    m = edges.size + 1
    emission = np.zeros((k, m))
    for s in range(k):
        if spec.sigma[s] == 0.0:
            emission[s, int(discretize_returns([spec.mu[s]], edges)[0])] = 1.0
            continue
        cdf = [0.0]
        cdf += [normal_cdf(e, spec.mu[s], spec.sigma[s]) for e in edges]
        cdf.append(1.0)
        emission[s] = np.diff(cdf)
    transition = spec.transition[None, :, :]
    return POMDPSpec(
        states=tuple(f"regime{i}" for i in range(k)),
        actions=("wait",),
        observations=tuple(f"bin{i}" for i in range(m)),
        transition=transition,
        emission=emission,
    )


def filter_regime_posteriors(
    spec: RegimeSpec,
    returns: np.ndarray,
    bin_edges,
    initial_belief: np.ndarray | None = None,
) -> np.ndarray:
    """Posterior over regimes after each observed return; row t conditions on
    returns[0..t]. The prior defaults to the spec's initial distribution."""
    pomdp = pomdp_from_regime_spec(spec, bin_edges)
    obs = discretize_returns(returns, bin_edges)
    belief = (
        np.asarray(spec.initial_dist, dtype=np.float64)
        if initial_belief is None
        else np.asarray(initial_belief, dtype=np.float64)
    )
    # the first observation updates the prior in place: s_0 is drawn from the
    # initial distribution directly, not pushed through the transition
    out = np.zeros((obs.size, pomdp.n_states))
    for t, o in enumerate(obs):
        if t == 0:
            numer = _check_belief(pomdp, belief) * pomdp.emission[:, o]
            norm = numer.sum()
            if norm <= 0.0:
                raise ValueError(
                    f"observation {pomdp.observations[o]!r} has zero probability "
                    "under the initial belief"
                )
            belief = numer / norm
        else:
            belief = belief_update(pomdp, belief, 0, int(o))
        out[t] = belief
    return out


# ------------------------------------------------------------------ trajectory CSV


def belief_trajectory_to_csv(posteriors: np.ndarray, observations: np.ndarray) -> str:
    posteriors = np.atleast_2d(np.asarray(posteriors, dtype=np.float64))
    observations = np.asarray(observations, dtype=np.int64)
    if observations.shape != (posteriors.shape[0],):
        raise ValueError("one observation per posterior row required")
    k = posteriors.shape[1]
    lines = ["step,observation," + ",".join(f"b{i}" for i in range(k))]
    for t in range(posteriors.shape[0]):
        probs = ",".join(f"{v:.6f}" for v in posteriors[t])
        lines.append(f"{t},{observations[t]},{probs}")
    return "\n".join(lines) + "\n"
