"""Labeled examples, preference pairs, splits, and their JSONL round trip.

Label scheme (percent close-to-close move):

    Fall     pct < -0.5
    Neutral  -0.5 <= pct <= 0.5   (band edges are Neutral)
    Rise     pct > 0.5

The policy vocabulary is {Rise, Fall, Neutral}; the reward-model vocabulary
adds {Surrender} as a rejected-only alternative.

A day-t example pairs a context window that ends at day t-1 with the day-t
news channel; the day-t label is derived from the day-t pct_change and never
leaks into the features. For simulated markets the news channel is a synthetic
embedding correlated with the day's regime (signal-to-noise is a config knob),
standing in for encoded headlines.
"""

from __future__ import annotations

import datetime as _dt
import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .featurize import CONTEXT_COLUMNS, IndicatorTable, build_context_window
from .market_sim import PriceSeries, RegimePath
from .seeding import derive_seed

POLICY_LABELS = ("Rise", "Fall", "Neutral")
RM_LABELS = ("Rise", "Fall", "Neutral", "Surrender")
LABEL_TO_INDEX = {name: i for i, name in enumerate(POLICY_LABELS)}
RM_LABEL_TO_INDEX = {name: i for i, name in enumerate(RM_LABELS)}

NEUTRAL_BAND = 0.5


def assign_label(pct: float) -> str:
    """Map a percent move to its label; the +/-0.5 band edges are Neutral."""
    pct = float(pct)
    if math.isnan(pct):
        raise ValueError("cannot label a NaN percent change")
    if pct < -NEUTRAL_BAND:
        return "Fall"
    if pct > NEUTRAL_BAND:
        return "Rise"
    return "Neutral"


def load_instruction_templates() -> list[str]:
    """The 20 shipped instruction variants, each holding a {DATE} placeholder."""
    text = resources.files("regimelab.templates").joinpath("instructions.txt").read_text("utf-8")
    templates = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not templates:
        raise ValueError("instruction template file is empty")
    if any("{DATE}" not in t for t in templates):
        raise ValueError("every instruction template must contain {DATE}")
    return templates


def date_for_index(base_date: str, index: int) -> str:
    """Synthetic calendar: base date plus `index` days, ISO formatted."""
    base = _dt.date.fromisoformat(base_date)
    return (base + _dt.timedelta(days=int(index))).isoformat()


@dataclass
class Example:
    """One prompt/response record.

    context holds rows in CONTEXT_COLUMNS order; entry 0 is the calendar date
    string and the rest are floats with None for indicator warm-up gaps.
    """

    id: str
    date: str
    question: str
    context: list[list]
    news: str | None
    news_embedding: list[float] | None
    response: str
    pct_change: float

    def __post_init__(self) -> None:
        _dt.date.fromisoformat(self.date)  # raises on a malformed date
        if self.response not in POLICY_LABELS:
            raise ValueError(f"response must be one of {POLICY_LABELS}, got {self.response!r}")
        if not math.isfinite(self.pct_change):
            raise ValueError("pct_change must be finite")
        if not self.context:
            raise ValueError("context must hold at least one row")
        for row in self.context:
            if len(row) != len(CONTEXT_COLUMNS):
                raise ValueError(f"context rows must have {len(CONTEXT_COLUMNS)} entries")
        if self.news_embedding is not None:
            emb = np.asarray(self.news_embedding, dtype=np.float64)
            if emb.ndim != 1 or not np.all(np.isfinite(emb)):
                raise ValueError("news_embedding must be a flat list of finite floats")

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "date": self.date,
            "question": self.question,
            "context": self.context,
            "news": self.news,
            "news_embedding": self.news_embedding,
            "response": self.response,
            "pct_change": self.pct_change,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "Example":
        required = {"id", "date", "question", "context", "news", "news_embedding", "response", "pct_change"}
        missing = required - obj.keys()
        if missing:
            raise ValueError(f"example record missing fields {sorted(missing)}")
        extra = obj.keys() - required
        if extra:
            raise ValueError(f"example record has unknown fields {sorted(extra)}")
        return cls(**{k: obj[k] for k in required})


@dataclass
class PreferencePair:
    """chosen beats rejected for this prompt; rejected may be Surrender."""

    prompt_id: str
    chosen: str
    rejected: str

    def __post_init__(self) -> None:
        if self.chosen not in POLICY_LABELS:
            raise ValueError(f"chosen must be in {POLICY_LABELS}")
        if self.rejected not in RM_LABELS:
            raise ValueError(f"rejected must be in {RM_LABELS}")
        if self.chosen == self.rejected:
            raise ValueError("chosen and rejected must differ")


# ------------------------------------------------------------------ news channel


def synthesize_news_embeddings(
    path: RegimePath, dim: int = 8, snr: float = 4.0, seed: int = 0
) -> np.ndarray:
    """Per-day embeddings: snr * unit regime prototype + standard normal noise.

    snr=0 gives pure noise (no regime signal); large snr makes the day's
    regime readable from the embedding.
    """
    if dim < 1:
        raise ValueError("embedding dim must be >= 1")
    if snr < 0:
        raise ValueError("snr must be >= 0")
    rng = np.random.default_rng(derive_seed(seed, 10))
    protos = rng.standard_normal((path.n_regimes, dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    noise = rng.standard_normal((len(path), dim))
    return snr * protos[path.states] + noise


# ------------------------------------------------------------------ prompt text


def _render_value(name: str, value) -> str | None:
    if name == "date":
        return f"date={value}"
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return None
    return f"{name}={value:.6f}"


def assemble_prompt(
    question: str,
    context: list[list],
    news: str | None,
    date: str | None = None,
) -> str:
    """Deterministic prompt text: instruction, one line per context day, news.

    A surviving {DATE} placeholder in `question` is substituted with `date`.
    Warm-up gaps (None) are simply omitted from their line.
    """
    if "{DATE}" in question:
        if date is None:
            raise ValueError("question still has a {DATE} placeholder but no date was given")
        question = question.replace("{DATE}", date)
    lines = [question, "", "Market data (most recent day last):"]
    for row in context:
        parts = [_render_value(name, v) for name, v in zip(CONTEXT_COLUMNS, row)]
        lines.append(" ".join(p for p in parts if p is not None))
    lines.append("")
    lines.append(f"News: {news if news else 'none'}")
    return "\n".join(lines)


# ------------------------------------------------------------------ building


def _context_to_rows(window, base_date: str) -> list[list]:
    rows = []
    for r in window.rows:
        row: list = [date_for_index(base_date, int(r["date"]))]
        for name in CONTEXT_COLUMNS[1:]:
            v = r[name]
            row.append(None if math.isnan(v) else float(v))
        rows.append(row)
    return rows


def build_examples(
    series: PriceSeries,
    table: IndicatorTable,
    news_embeddings: np.ndarray | None = None,
    templates: list[str] | None = None,
    depth: int = 10,
    base_date: str = "2010-01-04",
) -> list[Example]:
    """One example per day that has both a prior context window and a label."""
    if templates is None:
        templates = load_instruction_templates()
    if len(series) != len(table):
        raise ValueError("series and indicator table must be aligned")
    if news_embeddings is not None and len(news_embeddings) != len(series):
        raise ValueError("news embeddings must be aligned with the series")

    complete = np.where(~np.isnan(table.pct_change))[0]
    examples: list[Example] = []
    for t in range(1, len(series)):
        if np.isnan(table.pct_change[t]):
            continue
        if complete.size == 0 or complete[0] > t - 1:
            continue  # no context available yet
        window = build_context_window(series, table, t - 1, depth)
        date = date_for_index(base_date, int(series.dates[t]))
        question = templates[t % len(templates)].replace("{DATE}", date)
        emb = None if news_embeddings is None else [float(x) for x in news_embeddings[t]]
        examples.append(
            Example(
                id=f"day-{int(series.dates[t]):05d}",
                date=date,
                question=question,
                context=_context_to_rows(window, base_date),
                news=None,
                news_embedding=emb,
                response=assign_label(table.pct_change[t]),
                pct_change=float(table.pct_change[t]),
            )
        )
    return examples


def label_counts(examples: list[Example]) -> dict[str, int]:
    counts = {name: 0 for name in POLICY_LABELS}
    for ex in examples:
        counts[ex.response] += 1
    return counts


# ------------------------------------------------------------------ filtering


def filter_headlines_by_similarity(
    headline_vecs: np.ndarray, reference_vecs: np.ndarray, threshold: float = 0.2
) -> list[int]:
    """Indices of headlines whose best cosine match to any reference clears
    the threshold. Zero-norm vectors have similarity 0 to everything."""
    h = np.asarray(headline_vecs, dtype=np.float64)
    r = np.asarray(reference_vecs, dtype=np.float64)
    if h.ndim != 2 or r.ndim != 2 or h.shape[1] != r.shape[1]:
        raise ValueError("headline and reference vectors must be 2-D with equal width")
    hn = np.linalg.norm(h, axis=1)
    rn = np.linalg.norm(r, axis=1)
    sims = h @ r.T
    denom = np.outer(hn, rn)
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = np.where(denom > 0, sims / denom, 0.0)
    best = sims.max(axis=1) if r.shape[0] else np.zeros(h.shape[0])
    return [i for i in range(h.shape[0]) if best[i] >= threshold]


@dataclass
class CorpusStats:
    """Document frequencies for tf-idf pruning. Unseen tokens count df=1."""

    n_docs: int
    doc_freq: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.n_docs < 1:
            raise ValueError("corpus must have at least one document")

    @classmethod
    def from_documents(cls, docs: list[list[str]]) -> "CorpusStats":
        df: dict[str, int] = {}
        for doc in docs:
            for tok in set(doc):
                df[tok] = df.get(tok, 0) + 1
        return cls(n_docs=len(docs), doc_freq=df)

    def idf(self, token: str) -> float:
        return math.log(self.n_docs / max(self.doc_freq.get(token, 1), 1))


def prune_low_tfidf(
    tokens: list[str],
    stats: CorpusStats,
    threshold: float = 0.2,
    max_words: int = 3000,
) -> list[str]:
    """Long-document pruning: drop tokens scoring tf*idf below the threshold,
    then hard-truncate. Documents at or under max_words pass through as-is.

    tf is count/len(document); idf is ln(n_docs/df).
    """
    if len(tokens) <= max_words:
        return list(tokens)
    n = len(tokens)
    counts: dict[str, int] = {}
    for tok in tokens:
        counts[tok] = counts.get(tok, 0) + 1
    kept = [tok for tok in tokens if (counts[tok] / n) * stats.idf(tok) >= threshold]
    return kept[:max_words]


# ------------------------------------------------------------------ preferences


def make_preference_pair(example: Example, seed: int) -> PreferencePair:
    """Pair the true response with a uniformly drawn wrong alternative
    (Surrender included)."""
    rng = np.random.default_rng(seed)
    alternatives = [l for l in RM_LABELS if l != example.response]
    rejected = alternatives[int(rng.integers(len(alternatives)))]
    return PreferencePair(prompt_id=example.id, chosen=example.response, rejected=rejected)


def make_preference_dataset(examples: list[Example], seed: int = 0) -> list[PreferencePair]:
    return [make_preference_pair(ex, derive_seed(seed, i)) for i, ex in enumerate(examples)]


# ------------------------------------------------------------------ splits


def split_dataset(
    examples: list[Example],
    ratios: tuple[float, float, float] = (0.7, 0.15, 0.15),
    seed: int = 0,
    shuffle: bool = False,
) -> tuple[list[Example], list[Example], list[Example]]:
    """(train, test, eval) blocks, chronological by default.

    Cut points are cumulative floors: train ends at floor(n * r0), test at
    floor(n * (r0 + r1)), eval takes the rest. shuffle=True permutes before
    cutting (seeded), for ablations only.
    """
    r = tuple(float(x) for x in ratios)
    if len(r) != 3 or any(x < 0 for x in r) or abs(sum(r) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three non-negatives summing to 1, got {ratios}")
    items = list(examples)
    if shuffle:
        rng = np.random.default_rng(seed)
        items = [items[i] for i in rng.permutation(len(items))]
    n = len(items)
    cut1 = int(n * r[0])
    cut2 = int(n * (r[0] + r[1]))
    return items[:cut1], items[cut1:cut2], items[cut2:]


# ------------------------------------------------------------------ JSONL


def examples_to_jsonl(examples: list[Example]) -> str:
    lines = [
        json.dumps(ex.to_json_dict(), separators=(",", ":"), allow_nan=False)
        for ex in examples
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def examples_from_jsonl(text: str) -> list[Example]:
    out: list[Example] = []
    for lineno, ln in enumerate(text.splitlines(), start=1):
        if not ln.strip():
            continue
        try:
            obj = json.loads(ln)
            out.append(Example.from_json_dict(obj))
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise ValueError(f"examples JSONL line {lineno}: {exc}") from None
    return out


def preferences_to_jsonl(pairs: list[PreferencePair]) -> str:
    lines = [
        json.dumps(
            {"prompt_id": p.prompt_id, "chosen": p.chosen, "rejected": p.rejected},
            separators=(",", ":"),
        )
        for p in pairs
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def preferences_from_jsonl(text: str) -> list[PreferencePair]:
    out: list[PreferencePair] = []
    for lineno, ln in enumerate(text.splitlines(), start=1):
        if not ln.strip():
            continue
        try:
            obj = json.loads(ln)
            out.append(PreferencePair(**obj))
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise ValueError(f"preference JSONL line {lineno}: {exc}") from None
    return out
