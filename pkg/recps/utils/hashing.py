# recps/utils/hashing.py
import hashlib
import json
from pathlib import Path
from typing import Any, Union

import numpy as np


def derive_seed(seed: int, *path: Union[int, str]) -> int:
    """Derive an independent 32-bit seed from a master seed and a key path."""
    entropy = [int(seed) & 0xFFFFFFFF]
    for key in path:
        if isinstance(key, str):
            key = int.from_bytes(hashlib.sha256(key.encode()).digest()[:4], "little")
        entropy.append(int(key) & 0xFFFFFFFF)
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def config_hash(payload: Any) -> str:
    """Short stable hash of a JSON-serialisable configuration."""
    encoded = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(encoded).hexdigest()[:16]
