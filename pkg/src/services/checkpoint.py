"""Single-file checkpoints.

Layout: a UTF-8 manifest with one ``name dim dim ...`` line per array, a ``---``
line, then every array's values as little-endian float64 in manifest order.
"""
import logging
import os
from typing import Dict, List, Tuple

import numpy as np

from src.utils.errors import CheckpointError

logger = logging.getLogger(__name__)

SEPARATOR = b"---\n"
DTYPE = np.dtype("<f8")


def save_checkpoint(path: str, state: Dict[str, np.ndarray]) -> None:
    """Write ``state`` in name order so identical states give identical bytes"""
    lines: List[str] = []
    blobs: List[bytes] = []
    for name in sorted(state):
        if not name or any(c.isspace() for c in name):
            raise CheckpointError(f"invalid parameter name {name!r}")
        value = np.asarray(state[name], dtype=DTYPE)
        lines.append(" ".join([name] + [str(d) for d in value.shape]))
        blobs.append(np.ascontiguousarray(value).tobytes())

    directory = os.path.dirname(path)
    try:
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "wb") as f:
            f.write(("\n".join(lines) + "\n").encode("utf-8") if lines else b"")
            f.write(SEPARATOR)
            for blob in blobs:
                f.write(blob)
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e
    logger.info(f"Saved checkpoint with {len(lines)} arrays to {path}")


def _parse_manifest(text: str, path: str) -> List[Tuple[str, Tuple[int, ...]]]:
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts:
            raise CheckpointError(f"{path}: empty manifest line {lineno}")
        try:
            shape = tuple(int(d) for d in parts[1:])
        except ValueError as e:
            raise CheckpointError(f"{path}: bad shape on manifest line {lineno}: {line!r}") from e
        if any(d < 0 for d in shape):
            raise CheckpointError(f"{path}: negative dimension on manifest line {lineno}")
        entries.append((parts[0], shape))
    return entries


def load_checkpoint(path: str) -> Dict[str, np.ndarray]:
    if not os.path.isfile(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        raw = f.read()

    if raw.startswith(SEPARATOR):
        header, payload = b"", raw[len(SEPARATOR):]
    else:
        marker = raw.find(b"\n" + SEPARATOR)
        if marker < 0:
            raise CheckpointError(f"{path}: manifest separator not found")
        header, payload = raw[:marker], raw[marker + 1 + len(SEPARATOR):]
    try:
        entries = _parse_manifest(header.decode("utf-8"), path)
    except UnicodeDecodeError as e:
        raise CheckpointError(f"{path}: manifest is not UTF-8") from e

    expected = sum(int(np.prod(shape, dtype=np.int64)) for _, shape in entries) * DTYPE.itemsize
    if len(payload) != expected:
        raise CheckpointError(f"{path}: expected {expected} bytes of values, found {len(payload)}")

    state: Dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in entries:
        if name in state:
            raise CheckpointError(f"{path}: duplicate entry {name}")
        count = int(np.prod(shape, dtype=np.int64))
        values = np.frombuffer(payload, dtype=DTYPE, count=count, offset=offset)
        state[name] = values.astype(np.float64).reshape(shape)
        offset += count * DTYPE.itemsize
    return state
