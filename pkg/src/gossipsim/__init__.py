"""Byzantine-robust decentralized learning with random pull-based peer sampling.

Library pieces: deterministic numerics and keyed random streams, synthetic
objectives, hypergeometric sampling theory and hyperparameter selection,
robust aggregation rules with a robustness-coefficient harness, omniscient
attack crafting, and the round engines (random-pull and fixed-graph
baseline) with metric extraction and a convergence-bound evaluator.
"""

__version__ = "0.1.0"
