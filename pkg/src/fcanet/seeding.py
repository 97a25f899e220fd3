"""Deterministic seed derivation.

Every random decision in the package draws from a generator seeded through
:func:`derive_seed`, so independent pipeline stages (augmentation per item,
weight init per run, eval-set construction, ...) get decorrelated streams
that do not depend on iteration order or process scheduling.
"""

import hashlib


def derive_seed(root_seed: int, *purpose) -> int:
    """Derive a 64-bit sub-seed from ``root_seed`` and a purpose path.

    Purpose components may be strings or ints; the mapping is stable across
    runs, platforms and Python versions (SHA-256 of a canonical encoding).
    """
    h = hashlib.sha256()
    h.update(str(int(root_seed)).encode("utf-8"))
    for part in purpose:
        h.update(b"\x1f")
        h.update(str(part).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little")
