"""
Output persistence for multidag: atomic writes and stamped result files.

Every file goes through write-temp-then-rename so an interrupted run never
leaves a half-written cache or solution behind.
"""

import json
import os
import tempfile
from typing import Iterable, Optional

from errors import InputError

TOOL_NAME = 'multidag'
TOOL_VERSION = '1.0.0'


def atomic_write_text(path, text: str):
    """Write text to path atomically (temp file in the same directory, then rename)"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix='.tmp-', dir=directory)
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='\n') as f:
            f.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def atomic_write_many(files: Iterable[tuple]):
    """
    Write several (path, text) pairs; if any write fails, the ones already
    renamed into place are removed again.
    """
    written = []
    try:
        for path, text in files:
            atomic_write_text(path, text)
            written.append(path)
    except BaseException:
        for path in written:
            if os.path.exists(path):
                os.remove(path)
        raise


def stamp(config: Optional[dict]) -> dict:
    """Header block embedded in every output file"""
    return {'tool': TOOL_NAME, 'version': TOOL_VERSION, 'config': config or {}}


def dumps(data) -> str:
    """Canonical JSON text (sorted keys, fixed indent, trailing newline)"""
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def write_json(path, data):
    atomic_write_text(path, dumps(data))


def read_json(path) -> dict:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except FileNotFoundError:
        raise InputError(f"file not found: {path}")
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: invalid JSON: {e}")
