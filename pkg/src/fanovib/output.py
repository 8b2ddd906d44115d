"""Deterministic output writing: atomic file replacement, canonical JSON
and 17-significant-digit floats so identical configs reproduce
byte-identical artifacts."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile


def fmt17(x) -> str:
    return f"{float(x):.17g}"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def sha256_of(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def atomic_write_text(path, content: str) -> None:
    """Write via a temp file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def header_block(params: dict, config_hash: str) -> list:
    """Echo lines for CSV headers: every effective parameter plus the
    config content hash."""
    lines = [f"config_sha256 = {config_hash}"]
    for key in sorted(params):
        lines.append(f"{key} = {params[key]}")
    return lines
