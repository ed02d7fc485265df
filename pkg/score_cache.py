"""
Score cache files.

Line-delimited JSON. The first line is a header record::

    {"kind": "multidag-score-cache", "version": 1, "subject": "s1", "p": 3, "d_max": 2, "meta": {...}}

followed by one record per (subject, node, parent-set bitmask, score)::

    {"subject": "s1", "node": 1, "parents": 6, "score": -12.345678901234567}

Scores are printed with 17 significant digits, which round-trips doubles
exactly. Only finite entries are written; |pi| > d_max is implicit -inf.
"""

import json
import os
import tempfile
from typing import Optional

from dag_core import members, popcount
from errors import CacheParseError, InputError
from mdm_scoring import ScoreTable, admissible_keys
from storage import atomic_write_text, stamp

CACHE_KIND = 'multidag-score-cache'
CACHE_VERSION = 1
CACHE_SUFFIX = '.scores.jsonl'


def format_score(value: float) -> str:
    return format(value, '.17g')


def dumps_score_table(table: ScoreTable, config: Optional[dict] = None) -> str:
    header = {
        'kind': CACHE_KIND,
        'version': CACHE_VERSION,
        'subject': table.subject,
        'p': table.p,
        'd_max': table.d_max,
        'meta': {**stamp(config), **table.meta},
    }
    lines = [json.dumps(header, sort_keys=True)]
    subject = json.dumps(table.subject)
    for node, mask in admissible_keys(table.p, table.d_max):
        record = f'{{"subject": {subject}, "node": {node}, "parents": {mask}, "score": {format_score(table.scores[node][mask])}'
        delta = table.deltas.get((node, mask))
        if delta is not None:
            record += f', "delta": {format_score(delta)}'
        lines.append(record + '}')
    return "\n".join(lines) + "\n"


def write_score_cache(table: ScoreTable, path, config: Optional[dict] = None):
    atomic_write_text(path, dumps_score_table(table, config))


def _parse_error(message, path, line):
    return CacheParseError(message, path=path, line=line)


def loads_score_table(text: str, path='<string>') -> ScoreTable:
    lines = text.splitlines()
    if not lines:
        raise _parse_error("empty cache file", path, 1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise _parse_error(f"bad header record: {e}", path, 1)
    if not isinstance(header, dict) or header.get('kind') != CACHE_KIND:
        raise _parse_error("not a multidag score cache", path, 1)
    if header.get('version') != CACHE_VERSION:
        raise _parse_error(f"unsupported cache version {header.get('version')}", path, 1)
    try:
        subject = str(header['subject'])
        p = int(header['p'])
        d_max = int(header['d_max'])
    except (KeyError, TypeError, ValueError) as e:
        raise _parse_error(f"incomplete header: {e}", path, 1)

    scores = {i: {} for i in range(1, p + 1)}
    deltas = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            node = int(record['node'])
            mask = int(record['parents'])
            score = float(record['score'])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise _parse_error(f"bad record: {e}", path, lineno)
        if str(record.get('subject', subject)) != subject:
            raise _parse_error(f"record for subject {record.get('subject')} in cache of {subject}", path, lineno)
        if not 1 <= node <= p or mask < 0 or mask >> p:
            raise _parse_error(f"node {node} / parents {mask} outside 1..{p}", path, lineno)
        if mask & (1 << (node - 1)):
            raise _parse_error(f"node {node} listed as its own parent", path, lineno)
        if popcount(mask) > d_max:
            raise _parse_error(f"parent set {members(mask)} exceeds d_max={d_max}", path, lineno)
        if mask in scores[node]:
            raise _parse_error(f"duplicate record for node {node}, parents {members(mask)}", path, lineno)
        scores[node][mask] = score
        if record.get('delta') is not None:
            deltas[(node, mask)] = float(record['delta'])

    meta = header.get('meta') or {}
    try:
        return ScoreTable(subject, p, d_max, scores, deltas=deltas, meta=meta)
    except InputError as e:
        raise _parse_error(str(e), path, None)


def read_score_cache(path) -> ScoreTable:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            text = f.read()
    except FileNotFoundError:
        raise InputError(f"score cache not found: {path}")
    return loads_score_table(text, path=path)


def cache_path(cache_dir, subject: str) -> str:
    return os.path.join(cache_dir, f"{subject}{CACHE_SUFFIX}")


def list_caches(cache_dir):
    """Cache files in a directory, sorted by file name"""
    if not os.path.isdir(cache_dir):
        raise InputError(f"cache directory not found: {cache_dir}")
    return sorted(os.path.join(cache_dir, name) for name in os.listdir(cache_dir)
                  if name.endswith(CACHE_SUFFIX))


def cache_roundtrip(table: ScoreTable) -> ScoreTable:
    """Write the table through the cache format and read it back"""
    with tempfile.TemporaryDirectory() as tmp:
        path = cache_path(tmp, 'roundtrip')
        write_score_cache(table, path)
        return read_score_cache(path)
