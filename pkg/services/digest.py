"""
Digest - Stable SHA-256 fingerprints of physics-affecting settings
"""

import hashlib
import json
from typing import Any


def canonical_json(payload: Any) -> str:
    # repr-exact floats, sorted keys, no whitespace variance
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=True)


def canonical_digest(payload: Any) -> str:
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()
