"""Federated semi-supervised network intrusion detection on NSL-KDD.

Contrastive learning on unlabeled client shards, sample-weighted
aggregation with EMA fusion, and supervised server fine-tuning, built
around a lightweight 1D CNN.
"""

__version__ = "0.1.0"
