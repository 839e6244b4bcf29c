"""Root-seed fan-out.

Every random component derives its own seed from the single root seed plus a
stable component name, so adding or removing a pipeline stage never changes
the randomness seen by the others. Hashing goes through hashlib, not the
builtin hash(), which is salted per process.
"""

import hashlib


def derive_seed(root: int, name: str) -> int:
    """Return a 32-bit seed determined by (root, name)."""
    digest = hashlib.sha256(f"{root}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") % (2**32)
