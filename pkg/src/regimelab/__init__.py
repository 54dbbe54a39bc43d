"""regimelab: regime-switching market simulator, label-policy training, and an
online adaptation loop, plus embedding diagnostics and a belief-update layer.

Subpackage map:

- market_sim  -- Markov regime chains, autoregressive return paths, OHLCV series
- featurize   -- technical indicator table and prompt context windows
- dataset     -- labeled examples, preference pairs, splits, JSONL round trip
- models      -- small categorical policies and a scalar reward model (numpy)
- trainer     -- supervised, preference (reward-model) and clipped policy updates
- adaptloop   -- offline training pipeline + windowed deployment adaptation
- metrics     -- accuracy / F1 / MCC on the three-label scheme
- igtools     -- entropy, information gain, variance reduction, 2-D projection,
                 density clustering over embedding sets
- belief      -- discrete belief updates and a regime-filter diagnostic
- cli         -- `regimelab` command line front end
"""

__version__ = "0.1.0"
