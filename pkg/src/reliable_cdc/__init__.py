"""Reputation-aware worker selection and incentives for coded distributed computing.

Modules:

- ``reputation``: subjective-logic opinions and composite reputation
- ``coalition``: miner coalition formation by merge and split
- ``stackelberg``: reward and speed equilibrium between an MSP and its workers
- ``cdc``: MDS-coded matrix-vector multiplication and latency sampling
- ``ledger``: hash-chained reputation and resource ledgers
- ``experiments``: scenario runner and CLI
"""

__version__ = "0.1.0"
