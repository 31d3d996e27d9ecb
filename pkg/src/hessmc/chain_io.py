"""Chain and table serialization.

One CSV file per chain: comment headers carry the metadata, then one row
per step with columns k, accepted, log_post, cum_solves, m_1..m_n.
Floats are written with %.17g so a read-back is bit-exact and every
diagnostic recomputed from disk matches the in-memory value.
"""

from __future__ import annotations

import csv
import os

import numpy as np

from .samplers import Chain

_META_INT = ("seed", "chain_id", "n", "r", "l", "start_index")


def _fmt(x: float) -> str:
    return "%.17g" % x


def write_chain(chain: Chain, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    n = chain.samples.shape[1]
    with open(path, "w", newline="") as fh:
        fh.write(f"# method={chain.meta.get('method', '')}\n")
        for key in _META_INT:
            if key in chain.meta:
                fh.write(f"# {key}={int(chain.meta[key])}\n")
        cols = ["k", "accepted", "log_post", "cum_solves"] + \
            [f"m_{j + 1}" for j in range(n)]
        writer = csv.writer(fh)
        writer.writerow(cols)
        for k in range(chain.n_samples):
            row = [k + 1, int(chain.accepted[k]), _fmt(chain.log_post[k]),
                   int(chain.cum_solves[k])]
            row.extend(_fmt(v) for v in chain.samples[k])
            writer.writerow(row)


def read_chain(path: str) -> Chain:
    meta: dict = {}
    with open(path) as fh:
        pos = fh.tell()
        line = fh.readline()
        while line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            key = key.strip()
            meta[key] = int(value) if key in _META_INT else value
            pos = fh.tell()
            line = fh.readline()
        fh.seek(pos)
        reader = csv.reader(fh)
        header = next(reader)
        n = len(header) - 4
        rows = list(reader)
    count = len(rows)
    samples = np.empty((count, n))
    accepted = np.empty(count, dtype=bool)
    log_post = np.empty(count)
    cum_solves = np.empty(count, dtype=np.int64)
    for i, row in enumerate(rows):
        accepted[i] = bool(int(row[1]))
        log_post[i] = float(row[2])
        cum_solves[i] = int(row[3])
        samples[i] = [float(v) for v in row[4:]]
    return Chain(samples=samples, accepted=accepted, log_post=log_post,
                 cum_solves=cum_solves, meta=meta)


def write_table(path: str, header: list[str], rows, comments: list[str] | None = None) -> None:
    """Generic CSV writer used for every non-chain artifact."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        for line in comments or []:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) if isinstance(v, float) else v for v in row])
