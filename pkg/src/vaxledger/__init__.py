"""vaxledger: a deterministic, replicated vaccination supply-chain ledger."""

__version__ = "0.1.0"
