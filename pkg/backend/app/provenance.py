# app/provenance.py
"""Hashes and run metadata embedded in every report."""
import hashlib
import json
import os
from typing import Any, Optional

from app import __version__


def hash_dict(d: dict[str, Any]) -> str:
    # default=str covers enums and paths left in resolved configs
    payload = json.dumps(d, sort_keys=True, separators=(",", ":"), default=str).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


def file_hash(path: str, block: int = 1 << 16) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(block), b""):
            digest.update(chunk)
    return digest.hexdigest()


def make_provenance(config: Optional[dict] = None, data_path: Optional[str] = None, seed: Optional[int] = None) -> dict:
    return {
        "library": "gp-cbocpd",
        "library_version": __version__,
        "code_version": os.getenv("GIT_COMMIT_SHA"),
        "created_by": os.getenv("USER") or os.getenv("USERNAME"),
        "config_hash": hash_dict(config or {}),
        "data_hash": file_hash(data_path) if data_path else None,
        "seed": seed,
    }
