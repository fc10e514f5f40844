"""Run bookkeeping: deterministic RNG streams, CSV emission, manifests, job pools."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence

import numpy as np


def _stream_key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    digest = hashlib.sha256(repr(part).encode()).digest()
    return int.from_bytes(digest[:4], "little")


def generator(seed: int, *stream) -> np.random.Generator:
    """Counter-based RNG stream.

    The same (seed, stream...) pair always yields the same draws, independent
    of call order elsewhere, so parallel jobs can derive disjoint streams from
    one global seed plus their job coordinates.
    """
    ss = np.random.SeedSequence(
        entropy=int(seed) & ((1 << 128) - 1),
        spawn_key=tuple(_stream_key(p) for p in stream),
    )
    return np.random.Generator(np.random.Philox(ss))


def format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".10g")
    return str(value)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Write rows with a fixed float format so reruns are byte-identical."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(v) for v in row])


def read_csv(path: str) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]


def _git_hash() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"],
            capture_output=True,
            text=True,
            timeout=5,
            cwd=os.path.dirname(os.path.abspath(__file__)),
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_manifest(outdir: str, subcommand: str, config: dict, seed: int, decisions: dict) -> str:
    """Record everything needed to reproduce a run next to its outputs."""
    os.makedirs(outdir, exist_ok=True)
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "config_hash": config_hash(config),
        "seed": int(seed),
        "decisions": decisions,
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        "git_hash": _git_hash(),
    }
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return path


#: Fork-inherited registry for large read-only arrays shared with job workers.
_SHARED: dict = {}


def share(key: str, value) -> str:
    _SHARED[key] = value
    return key


def shared(key: str):
    return _SHARED[key]


def run_jobs(fn: Callable, jobs: Sequence, processes: int | None = None) -> list:
    """Run fn(job) for each job, preserving order.

    Uses a fork-based process pool when more than one worker is requested, so
    arrays registered via :func:`share` before the call are inherited for
    free.  processes=None picks the machine core count.
    """
    jobs = list(jobs)
    if processes is None:
        processes = os.cpu_count() or 1
    processes = max(1, min(processes, len(jobs) or 1))
    if processes == 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=processes) as pool:
        return list(pool.map(fn, jobs))
