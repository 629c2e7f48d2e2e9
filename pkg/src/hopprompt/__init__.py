"""Few-shot node/graph classification: link-prediction pre-training of a GCN,
dual low-rank adaptation of its projections and message passing, and
hop-specific class prompting, plus the measurement and experiment tooling
around them."""

__version__ = "0.1.0"
