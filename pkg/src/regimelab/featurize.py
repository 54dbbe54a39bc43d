"""Technical indicator table and prompt context windows.

Conventions (pinned; changing any of these changes downstream artifacts):

- MACD      : EMA(12) - EMA(26); EMAs seeded at the first close, alpha = 2/(span+1),
              defined from index 0 (no warm-up gap).
- Bollinger : n=20 simple mean +/- k=2 population standard deviations.
- RSI       : n=30, Wilder smoothing; first value at index n. Flat window
              (no up and no down moves) reads 50; zero-loss windows read 100,
              zero-gain windows read 0.
- CCI       : n=30, constant 0.015, typical price (high+low+close)/3, mean
              absolute deviation around the window mean; zero deviation reads 0.
- DX        : n=30, Wilder-smoothed +DM/-DM/TR; DX = 100*|+DI - -DI|/(+DI + -DI),
              0 when both DIs vanish. First value at index n.
- SMA       : 30 and 60 day simple means.

Warm-up positions are NaN in arrays and empty fields in CSV; they are never
back-filled. All indicators are causal: value at t depends only on bars <= t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .market_sim import PriceSeries

# Column order used by context windows and prompts (leading columns come from
# the raw bars, the rest from the indicator table).
CONTEXT_COLUMNS = (
    "date",
    "open",
    "high",
    "low",
    "close",
    "adj_close",
    "volume",
    "pct_change",
    "macd",
    "boll_up",
    "boll_low",
    "rsi30",
    "cci30",
    "dx30",
    "sma30",
    "sma60",
)


def pct_change(close: np.ndarray) -> np.ndarray:
    """Close-to-close move in percent; index 0 has no predecessor, so NaN."""
    close = np.asarray(close, dtype=np.float64)
    out = np.full(close.shape, np.nan)
    if close.size > 1:
        out[1:] = (close[1:] / close[:-1] - 1.0) * 100.0
    return out


def sma(x: np.ndarray, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if n < 1:
        raise ValueError("window must be >= 1")
    out = np.full(x.shape, np.nan)
    if x.size >= n:
        cs = np.concatenate([[0.0], np.cumsum(x)])
        out[n - 1 :] = (cs[n:] - cs[:-n]) / n
    return out


def ema(x: np.ndarray, span: int) -> np.ndarray:
    """Exponential mean seeded at x[0]; alpha = 2 / (span + 1)."""
    x = np.asarray(x, dtype=np.float64)
    if span < 1:
        raise ValueError("span must be >= 1")
    out = np.empty_like(x)
    if x.size == 0:
        return out
    alpha = 2.0 / (span + 1.0)
    out[0] = x[0]
    for t in range(1, x.size):
        out[t] = alpha * x[t] + (1.0 - alpha) * out[t - 1]
    return out


def macd_line(close: np.ndarray, fast: int = 12, slow: int = 26) -> np.ndarray:
    return ema(close, fast) - ema(close, slow)


def bollinger(close: np.ndarray, n: int = 20, k: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    """(upper, lower) = window mean +/- k population standard deviations."""
    close = np.asarray(close, dtype=np.float64)
    upper = np.full(close.shape, np.nan)
    lower = np.full(close.shape, np.nan)
    if close.size >= n:
        win = sliding_window_view(close, n)
        mid = win.mean(axis=1)
        sd = win.std(axis=1)  # ddof=0: population
        upper[n - 1 :] = mid + k * sd
        lower[n - 1 :] = mid - k * sd
    return upper, lower


def rsi(close: np.ndarray, n: int = 30) -> np.ndarray:
    close = np.asarray(close, dtype=np.float64)
    out = np.full(close.shape, np.nan)
    if close.size < n + 1:
        return out
    delta = np.diff(close)
    gains = np.maximum(delta, 0.0)
    losses = np.maximum(-delta, 0.0)
    avg_gain = gains[:n].mean()
    avg_loss = losses[:n].mean()

    def value(ag: float, al: float) -> float:
        if al == 0.0 and ag == 0.0:
            return 50.0
        if al == 0.0:
            return 100.0
        if ag == 0.0:
            return 0.0
        return 100.0 - 100.0 / (1.0 + ag / al)

    out[n] = value(avg_gain, avg_loss)
    for t in range(n + 1, close.size):
        avg_gain = (avg_gain * (n - 1) + gains[t - 1]) / n
        avg_loss = (avg_loss * (n - 1) + losses[t - 1]) / n
        out[t] = value(avg_gain, avg_loss)
    return out


def cci(high: np.ndarray, low: np.ndarray, close: np.ndarray, n: int = 30) -> np.ndarray:
    tp = (np.asarray(high) + np.asarray(low) + np.asarray(close)) / 3.0
    out = np.full(tp.shape, np.nan)
    if tp.size >= n:
        win = sliding_window_view(tp, n)
        mid = win.mean(axis=1)
        md = np.abs(win - mid[:, None]).mean(axis=1)
        cur = tp[n - 1 :]
        with np.errstate(invalid="ignore", divide="ignore"):
            raw = (cur - mid) / (0.015 * md)
        out[n - 1 :] = np.where(md == 0.0, 0.0, raw)
    return out


def dx(high: np.ndarray, low: np.ndarray, close: np.ndarray, n: int = 30) -> np.ndarray:
    high = np.asarray(high, dtype=np.float64)
    low = np.asarray(low, dtype=np.float64)
    close = np.asarray(close, dtype=np.float64)
    out = np.full(high.shape, np.nan)
    if high.size < n + 1:
        return out

    up = high[1:] - high[:-1]
    down = low[:-1] - low[1:]
    plus_dm = np.where((up > down) & (up > 0.0), up, 0.0)
    minus_dm = np.where((down > up) & (down > 0.0), down, 0.0)
    tr = np.maximum.reduce(
        [
            high[1:] - low[1:],
            np.abs(high[1:] - close[:-1]),
            np.abs(low[1:] - close[:-1]),
        ]
    )

    s_plus = plus_dm[:n].mean()
    s_minus = minus_dm[:n].mean()
    s_tr = tr[:n].mean()

    def value(sp: float, sm: float, st: float) -> float:
        if st == 0.0:
            return 0.0
        pdi = 100.0 * sp / st
        mdi = 100.0 * sm / st
        if pdi + mdi == 0.0:
            return 0.0
        return 100.0 * abs(pdi - mdi) / (pdi + mdi)

    out[n] = value(s_plus, s_minus, s_tr)
    for t in range(n + 1, high.size):
        s_plus = (s_plus * (n - 1) + plus_dm[t - 1]) / n
        s_minus = (s_minus * (n - 1) + minus_dm[t - 1]) / n
        s_tr = (s_tr * (n - 1) + tr[t - 1]) / n
        out[t] = value(s_plus, s_minus, s_tr)
    return out


@dataclass
class IndicatorTable:
    """Pinned 10-column indicator artifact aligned with a PriceSeries."""

    dates: np.ndarray
    pct_change: np.ndarray
    macd: np.ndarray
    boll_up: np.ndarray
    boll_low: np.ndarray
    rsi30: np.ndarray
    cci30: np.ndarray
    dx30: np.ndarray
    sma30: np.ndarray
    sma60: np.ndarray

    _FLOAT_COLS = (
        "pct_change",
        "macd",
        "boll_up",
        "boll_low",
        "rsi30",
        "cci30",
        "dx30",
        "sma30",
        "sma60",
    )

    def __post_init__(self) -> None:
        self.dates = np.asarray(self.dates, dtype=np.int64)
        n = self.dates.size
        for name in self._FLOAT_COLS:
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have length {n}")
            setattr(self, name, arr)

    def __len__(self) -> int:
        return self.dates.size

    def row(self, t: int) -> dict[str, float]:
        """Indicator values at step t; NaN kept as NaN (caller decides rendering)."""
        if not 0 <= t < len(self):
            raise IndexError(f"row {t} out of range")
        return {name: float(getattr(self, name)[t]) for name in self._FLOAT_COLS}


def compute_indicators(series: PriceSeries) -> IndicatorTable:
    return IndicatorTable(
        dates=series.dates.copy(),
        pct_change=series.pct_change.copy(),
        macd=macd_line(series.close),
        boll_up=bollinger(series.close)[0],
        boll_low=bollinger(series.close)[1],
        rsi30=rsi(series.close, 30),
        cci30=cci(series.high, series.low, series.close, 30),
        dx30=dx(series.high, series.low, series.close, 30),
        sma30=sma(series.close, 30),
        sma60=sma(series.close, 60),
    )


INDICATOR_CSV_HEADER = "date,pct_change,macd,boll_up,boll_low,rsi30,cci30,dx30,sma30,sma60"


def _fmt(v: float) -> str:
    return "" if np.isnan(v) else f"{v:.6f}"


def indicator_table_to_csv(table: IndicatorTable) -> str:
    lines = [INDICATOR_CSV_HEADER]
    for i in range(len(table)):
        vals = ",".join(_fmt(getattr(table, c)[i]) for c in IndicatorTable._FLOAT_COLS)
        lines.append(f"{table.dates[i]},{vals}")
    return "\n".join(lines) + "\n"


def indicator_table_from_csv(text: str) -> IndicatorTable:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != INDICATOR_CSV_HEADER:
        raise ValueError(f"bad indicator CSV header, expected {INDICATOR_CSV_HEADER!r}")
    n_cols = 1 + len(IndicatorTable._FLOAT_COLS)
    cols: list[list[float]] = [[] for _ in range(n_cols)]
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != n_cols:
            raise ValueError(f"indicator CSV line {lineno}: expected {n_cols} fields")
        try:
            cols[0].append(int(parts[0]))
            for j, p in enumerate(parts[1:], start=1):
                cols[j].append(np.nan if p == "" else float(p))
        except ValueError as exc:
            raise ValueError(f"indicator CSV line {lineno}: {exc}") from None
    arrays = dict(zip(IndicatorTable._FLOAT_COLS, (np.array(c) for c in cols[1:])))
    return IndicatorTable(dates=np.array(cols[0], dtype=np.int64), **arrays)


@dataclass
class ContextWindow:
    """Up to `depth` most recent complete rows ending at a given step.

    A row is complete when its pct_change is defined; indicator warm-up gaps
    inside a complete row are fine and stay as NaN (prompt rendering and
    serialization drop them). rows[i] maps column name -> value with "date"
    holding the integer day index.
    """

    rows: list[dict[str, float]]
    depth: int

    def __post_init__(self) -> None:
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if not self.rows:
            raise ValueError("a context window cannot be empty")
        if len(self.rows) > self.depth:
            raise ValueError("more rows than depth")
        dates = [int(r["date"]) for r in self.rows]
        if any(b <= a for a, b in zip(dates, dates[1:])):
            raise ValueError("rows must be in increasing date order")

    @property
    def end_date(self) -> int:
        return int(self.rows[-1]["date"])


def build_context_window(
    series: PriceSeries, table: IndicatorTable, t: int, depth: int = 10
) -> ContextWindow:
    """Window of the most recent complete rows ending at step t.

    Early in a series fewer than `depth` rows exist; that is legal. Asking for
    a window before any complete row exists is an error.
    """
    if len(series) != len(table):
        raise ValueError("series and indicator table must be aligned")
    if not 0 <= t < len(series):
        raise ValueError(f"step {t} outside the series")
    if depth < 1:
        raise ValueError("depth must be >= 1")

    complete = [i for i in range(t + 1) if not np.isnan(table.pct_change[i])]
    if not complete:
        raise ValueError(f"no complete rows at or before step {t}")
    chosen = complete[-depth:]

    rows = []
    for i in chosen:
        row: dict[str, float] = {
            "date": float(series.dates[i]),
            "open": float(series.open[i]),
            "high": float(series.high[i]),
            "low": float(series.low[i]),
            "close": float(series.close[i]),
            "adj_close": float(series.adj_close[i]),
            "volume": float(series.volume[i]),
        }
        row.update(table.row(i))
        rows.append(row)
    return ContextWindow(rows=rows, depth=depth)
