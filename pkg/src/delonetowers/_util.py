"""Small shared helpers: JSON sanitation and deterministic file writing."""

from __future__ import annotations

import hashlib
import json

import numpy as np


def to_jsonable(obj):
    """Recursively convert numpy scalars/arrays so json can serialize."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(to_jsonable(payload), fh, sort_keys=True, indent=1)
        fh.write("\n")


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()
