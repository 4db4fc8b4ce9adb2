"""Deterministic seed derivation shared by every stochastic component.

A single user-facing seed fans out to per-component, per-epoch and
per-example seeds through a cryptographic hash of the labelled parts, so
results never depend on call order, worker count, or Python's builtin
``hash`` (which is salted per process).
"""

import hashlib


def derive_seed(*parts) -> int:
    """Map a tuple of ints and strings to a stable 63-bit seed."""
    blob = repr(parts).encode("utf-8")
    digest = hashlib.sha256(blob).digest()
    return int.from_bytes(digest[:8], "big") >> 1
