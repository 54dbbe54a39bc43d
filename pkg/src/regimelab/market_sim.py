"""Markov regime-switching return process and synthetic OHLCV series.

The generating process: a k-state Markov chain s_t picks, per step, the
parameters of a first-order autoregression on percentage returns

    o_t = mu[s_t] + phi[s_t] * o_{t-1} + sigma[s_t] * eps_t

with iid unit-variance shocks eps_t (normal by default). Returns are in
percent, so a return of 0.75 means the close moved +0.75%.

Mid-stream parameter changes are expressed as a `RegimeSchedule`, a piecewise
sequence of (start_step, RegimeSpec) segments. Simulating a schedule whose
segments share identical parameters is bit-identical to simulating the plain
spec: the chain consumes one uniform draw per step and shocks are drawn
up-front for the whole horizon, so segmentation never shifts the RNG streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .seeding import derive_seed

_SHOCK_DISTS = ("normal", "uniform", "laplace")

# Sub-stream indices under a simulation root seed.
_STREAM_PATH = 0
_STREAM_SHOCKS = 1
_STREAM_OHLCV = 2


@dataclass
class RegimeSpec:
    """Per-regime AR(1) parameters plus the switching chain.

    mu, phi, sigma are length-k arrays; transition is a k x k row-stochastic
    matrix; initial_dist is the distribution of s_0. Stationarity of the
    per-regime recursions requires |phi| < 1; sigma may be 0 (deterministic
    drift). shock_dist picks the unit-variance innovation family.
    """

    mu: np.ndarray
    phi: np.ndarray
    sigma: np.ndarray
    transition: np.ndarray
    initial_dist: np.ndarray
    shock_dist: str = "normal"

    def __post_init__(self) -> None:
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.phi = np.asarray(self.phi, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.initial_dist = np.asarray(self.initial_dist, dtype=np.float64)

        k = self.mu.shape[0]
        if k < 1:
            raise ValueError("need at least one regime")
        for name, arr in (("phi", self.phi), ("sigma", self.sigma)):
            if arr.shape != (k,):
                raise ValueError(f"{name} must have shape ({k},), got {arr.shape}")
        if self.transition.shape != (k, k):
            raise ValueError(f"transition must be {k}x{k}, got {self.transition.shape}")
        if self.initial_dist.shape != (k,):
            raise ValueError(f"initial_dist must have shape ({k},)")

        if not np.all(np.isfinite(self.mu)):
            raise ValueError("mu must be finite")
        if np.any(np.abs(self.phi) >= 1.0):
            raise ValueError("|phi| must be < 1 for every regime")
        if np.any(self.sigma < 0.0):
            raise ValueError("sigma must be >= 0")
        if np.any(self.transition < 0.0) or np.any(self.transition > 1.0):
            raise ValueError("transition entries must lie in [0, 1]")
        row_sums = self.transition.sum(axis=1)
        if np.any(np.abs(row_sums - 1.0) > 1e-12):
            raise ValueError(f"transition rows must sum to 1 within 1e-12, got {row_sums}")
        if np.any(self.initial_dist < 0.0) or abs(self.initial_dist.sum() - 1.0) > 1e-12:
            raise ValueError("initial_dist must be a distribution (sum 1 within 1e-12)")
        if self.shock_dist not in _SHOCK_DISTS:
            raise ValueError(f"shock_dist must be one of {_SHOCK_DISTS}, got {self.shock_dist!r}")

    @property
    def n_regimes(self) -> int:
        return self.mu.shape[0]


@dataclass
class RegimePath:
    """A sampled regime sequence: states[t] is the regime id active at step t."""

    states: np.ndarray
    n_regimes: int

    def __post_init__(self) -> None:
        self.states = np.asarray(self.states, dtype=np.int64)
        if self.states.ndim != 1:
            raise ValueError("states must be 1-D")
        if self.states.size and (self.states.min() < 0 or self.states.max() >= self.n_regimes):
            raise ValueError("regime ids must lie in [0, n_regimes)")

    def __len__(self) -> int:
        return self.states.size

    def occupancy(self) -> np.ndarray:
        """Fraction of steps spent in each regime."""
        if self.states.size == 0:
            return np.zeros(self.n_regimes)
        return np.bincount(self.states, minlength=self.n_regimes) / self.states.size


@dataclass
class RegimeSchedule:
    """Piecewise-constant spec: segments of (start_step, RegimeSpec).

    The first segment must start at 0 and starts must be strictly increasing.
    All segments must agree on the number of regimes so the chain state
    carries across boundaries.
    """

    segments: list[tuple[int, RegimeSpec]]

    def __post_init__(self) -> None:
        if not self.segments:
            raise ValueError("schedule needs at least one segment")
        starts = [s for s, _ in self.segments]
        if starts[0] != 0:
            raise ValueError("first segment must start at step 0")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("segment starts must be strictly increasing")
        k = self.segments[0][1].n_regimes
        if any(spec.n_regimes != k for _, spec in self.segments):
            raise ValueError("all segments must share the regime count")

    @property
    def n_regimes(self) -> int:
        return self.segments[0][1].n_regimes

    def active_spec(self, step: int) -> RegimeSpec:
        spec = self.segments[0][1]
        for start, seg_spec in self.segments:
            if step >= start:
                spec = seg_spec
            else:
                break
        return spec


def as_schedule(spec_or_schedule: RegimeSpec | RegimeSchedule) -> RegimeSchedule:
    if isinstance(spec_or_schedule, RegimeSchedule):
        return spec_or_schedule
    return RegimeSchedule(segments=[(0, spec_or_schedule)])


def inject_regime_shift(
    spec: RegimeSpec,
    at_step: int,
    mu: np.ndarray | None = None,
    phi: np.ndarray | None = None,
    sigma: np.ndarray | None = None,
    transition: np.ndarray | None = None,
) -> RegimeSchedule:
    """Schedule that runs `spec` before `at_step` and swapped parameters after.

    Only the supplied fields change; the regime count stays fixed so the chain
    state survives the boundary.
    """
    if at_step <= 0:
        raise ValueError("at_step must be >= 1")
    shifted = RegimeSpec(
        mu=spec.mu if mu is None else mu,
        phi=spec.phi if phi is None else phi,
        sigma=spec.sigma if sigma is None else sigma,
        transition=spec.transition if transition is None else transition,
        initial_dist=spec.initial_dist,
        shock_dist=spec.shock_dist,
    )
    return RegimeSchedule(segments=[(0, spec), (at_step, shifted)])


def _draw_state(rng: np.random.Generator, dist: np.ndarray) -> int:
    # One uniform per draw, inverted through the CDF: keeps stream consumption
    # independent of the distribution values, which segmented simulation relies on.
    u = rng.random()
    return int(np.searchsorted(np.cumsum(dist), u, side="right").clip(max=dist.size - 1))


def sample_regime_path(
    spec_or_schedule: RegimeSpec | RegimeSchedule, horizon: int, seed: int
) -> RegimePath:
    """Walk the switching chain for `horizon` steps."""
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    schedule = as_schedule(spec_or_schedule)
    rng = np.random.default_rng(derive_seed(seed, _STREAM_PATH))
    states = np.empty(horizon, dtype=np.int64)
    for t in range(horizon):
        spec = schedule.active_spec(t)
        if t == 0:
            states[0] = _draw_state(rng, spec.initial_dist)
        else:
            states[t] = _draw_state(rng, spec.transition[states[t - 1]])
    return RegimePath(states=states, n_regimes=schedule.n_regimes)


def draw_shocks(
    spec_or_schedule: RegimeSpec | RegimeSchedule, horizon: int, seed: int
) -> np.ndarray:
    """Unit-variance iid shocks for the whole horizon, one stream per run."""
    schedule = as_schedule(spec_or_schedule)
    dist = schedule.segments[0][1].shock_dist
    rng = np.random.default_rng(derive_seed(seed, _STREAM_SHOCKS))
    if dist == "normal":
        return rng.standard_normal(horizon)
    if dist == "uniform":
        return rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size=horizon)
    # laplace with scale 1/sqrt(2) has unit variance
    return rng.laplace(0.0, 1.0 / math.sqrt(2.0), size=horizon)


def simulate_returns(
    spec_or_schedule: RegimeSpec | RegimeSchedule,
    path: RegimePath,
    seed: int | None = None,
    o_init: float = 0.0,
    shocks: np.ndarray | None = None,
) -> np.ndarray:
    """Run the return recursion along a sampled path.

    Either pass `seed` (shocks drawn internally) or an explicit `shocks`
    array, which lets callers stitch segment simulations together exactly.
    o_init is the pre-sample return o_{-1} (0 by default).
    """
    schedule = as_schedule(spec_or_schedule)
    if schedule.n_regimes != path.n_regimes:
        raise ValueError("path and spec disagree on regime count")
    horizon = len(path)
    if shocks is None:
        if seed is None:
            raise ValueError("need a seed when shocks are not supplied")
        shocks = draw_shocks(schedule, horizon, seed)
    shocks = np.asarray(shocks, dtype=np.float64)
    if shocks.shape != (horizon,):
        raise ValueError(f"shocks must have shape ({horizon},)")

    out = np.empty(horizon, dtype=np.float64)
    prev = float(o_init)
    for t in range(horizon):
        spec = schedule.active_spec(t)
        s = path.states[t]
        prev = spec.mu[s] + spec.phi[s] * prev + spec.sigma[s] * shocks[t]
        out[t] = prev
    return out


@dataclass
class PriceSeries:
    """Daily OHLCV bars plus the percentage change of the close.

    dates are plain day indices (0, 1, 2, ...); the dataset layer maps them to
    calendar dates. adj_close equals close for simulated series (no corporate
    actions). pct_change[t] is the close-to-close move in percent; row 0 is
    measured against the pre-sample base price.
    """

    dates: np.ndarray
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    adj_close: np.ndarray
    volume: np.ndarray
    pct_change: np.ndarray

    def __post_init__(self) -> None:
        self.dates = np.asarray(self.dates, dtype=np.int64)
        for name in ("open", "high", "low", "close", "adj_close", "volume", "pct_change"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        n = self.dates.size
        for name in ("open", "high", "low", "close", "adj_close", "volume", "pct_change"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have length {n}")
        if n == 0:
            return
        # Tolerances admit values that went through the 6-decimal CSV format.
        body_hi = np.maximum(self.open, self.close)
        body_lo = np.minimum(self.open, self.close)
        if np.any(self.high < body_hi - 2e-6) or np.any(self.low > body_lo + 2e-6):
            raise ValueError("low <= min(open, close) <= max(open, close) <= high violated")
        if np.any(self.close <= 0.0):
            raise ValueError("close must stay positive")
        if np.any(self.volume < 0.0):
            raise ValueError("volume must be >= 0")
        if n > 1:
            implied = (self.close[1:] / self.close[:-1] - 1.0) * 100.0
            if np.any(np.abs(implied - self.pct_change[1:]) > 1e-4):
                raise ValueError("pct_change inconsistent with closes")

    def __len__(self) -> int:
        return self.dates.size


def returns_to_ohlcv(
    returns: np.ndarray,
    init_price: float = 100.0,
    seed: int = 0,
    base_volume: float = 1_000_000.0,
) -> PriceSeries:
    """Wrap a percent-return path into daily bars.

    close_t = close_{t-1} * (1 + o_t / 100); open_t = close_{t-1}. High/low
    pad the open/close body with seeded half-normal spreads scaled by the
    realized daily return sigma, so a flat path yields flat bars. Volume is
    log-normal around base_volume.
    """
    returns = np.asarray(returns, dtype=np.float64)
    if returns.ndim != 1:
        raise ValueError("returns must be 1-D")
    if init_price <= 0:
        raise ValueError("init_price must be > 0")
    if np.any(returns <= -100.0):
        raise ValueError("a return of -100% or worse would wipe out the price")
    n = returns.size

    growth = 1.0 + returns / 100.0
    close = init_price * np.cumprod(growth) if n else np.empty(0)
    open_ = np.empty(n)
    if n:
        open_[0] = init_price
        open_[1:] = close[:-1]

    rng = np.random.default_rng(derive_seed(seed, _STREAM_OHLCV))
    sigma_frac = float(np.std(returns)) / 100.0 if n else 0.0
    up = np.abs(rng.standard_normal(n)) * sigma_frac
    down = np.abs(rng.standard_normal(n)) * sigma_frac
    body_hi = np.maximum(open_, close)
    body_lo = np.minimum(open_, close)
    high = body_hi * (1.0 + up)
    low = np.maximum(body_lo * (1.0 - down), 1e-12)
    volume = base_volume * np.exp(0.25 * rng.standard_normal(n))

    return PriceSeries(
        dates=np.arange(n, dtype=np.int64),
        open=open_,
        high=high,
        low=low,
        close=close,
        adj_close=close.copy(),
        volume=volume,
        pct_change=returns.copy(),
    )


@dataclass
class SimulationResult:
    series: PriceSeries
    path: RegimePath
    returns: np.ndarray
    schedule: RegimeSchedule = field(repr=False)


def simulate_market(
    spec_or_schedule: RegimeSpec | RegimeSchedule,
    horizon: int,
    seed: int,
    init_price: float = 100.0,
    o_init: float = 0.0,
) -> SimulationResult:
    """Path + returns + OHLCV in one deterministic shot from a root seed."""
    schedule = as_schedule(spec_or_schedule)
    path = sample_regime_path(schedule, horizon, seed)
    returns = simulate_returns(schedule, path, seed=seed, o_init=o_init)
    series = returns_to_ohlcv(returns, init_price=init_price, seed=seed)
    return SimulationResult(series=series, path=path, returns=returns, schedule=schedule)


def stationary_distribution(transition: np.ndarray) -> np.ndarray:
    """Stationary distribution of a row-stochastic matrix (left eigenvector)."""
    transition = np.asarray(transition, dtype=np.float64)
    vals, vecs = np.linalg.eig(transition.T)
    idx = int(np.argmin(np.abs(vals - 1.0)))
    v = np.real(vecs[:, idx])
    v = np.abs(v)
    return v / v.sum()


# ---------------------------------------------------------------- CSV round trip

PRICE_CSV_HEADER = "date,open,high,low,close,adj_close,volume,pct_change"


def price_series_to_csv(series: PriceSeries) -> str:
    lines = [PRICE_CSV_HEADER]
    for i in range(len(series)):
        lines.append(
            f"{series.dates[i]},{series.open[i]:.6f},{series.high[i]:.6f},"
            f"{series.low[i]:.6f},{series.close[i]:.6f},{series.adj_close[i]:.6f},"
            f"{series.volume[i]:.6f},{series.pct_change[i]:.6f}"
        )
    return "\n".join(lines) + "\n"


def price_series_from_csv(text: str) -> PriceSeries:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != PRICE_CSV_HEADER:
        raise ValueError(f"bad price CSV header, expected {PRICE_CSV_HEADER!r}")
    cols: list[list[float]] = [[] for _ in range(8)]
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != 8:
            raise ValueError(f"price CSV line {lineno}: expected 8 fields, got {len(parts)}")
        try:
            for j, p in enumerate(parts):
                cols[j].append(float(p))
        except ValueError as exc:
            raise ValueError(f"price CSV line {lineno}: {exc}") from None
    return PriceSeries(
        dates=np.array(cols[0], dtype=np.int64),
        open=np.array(cols[1]),
        high=np.array(cols[2]),
        low=np.array(cols[3]),
        close=np.array(cols[4]),
        adj_close=np.array(cols[5]),
        volume=np.array(cols[6]),
        pct_change=np.array(cols[7]),
    )


REGIME_CSV_HEADER = "step,regime"


def regime_path_to_csv(path: RegimePath) -> str:
    lines = [REGIME_CSV_HEADER]
    lines.extend(f"{t},{path.states[t]}" for t in range(len(path)))
    return "\n".join(lines) + "\n"


def regime_path_from_csv(text: str, n_regimes: int) -> RegimePath:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != REGIME_CSV_HEADER:
        raise ValueError(f"bad regime CSV header, expected {REGIME_CSV_HEADER!r}")
    states = []
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != 2:
            raise ValueError(f"regime CSV line {lineno}: expected 2 fields")
        states.append(int(parts[1]))
    return RegimePath(states=np.array(states, dtype=np.int64), n_regimes=n_regimes)
