"""Semantic vectors: per-instruction-type (frequency, loop depth, branch count).

Vectors are ``(N, 3)`` float arrays indexed by ``type_id - 1``. Two forms are
used and never mixed implicitly:

* accumulator form: columns ``(f, sum of depths, sum of branch counts)``
* averaged form: columns ``(f, mean depth, mean branch count)``

Method summaries are built callee-first over the call graph's SCC order and
spliced into callers at each call site, shifting the callee's averages by the
call site's own depth and branch count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cfg import MethodAnalysis, analyze_method
from .ir import CALL, COND, PLAIN, RECURSIVE_CALL, RESERVED, UNKNOWN_API, CallGraph, Method, Program, Vocabulary, build_call_graph


def empty(n: int) -> np.ndarray:
    return np.zeros((n, 3))


def averaged(acc: np.ndarray) -> np.ndarray:
    out = acc.copy()
    f = acc[:, 0]
    nz = f > 0
    out[nz, 1] = acc[nz, 1] / f[nz]
    out[nz, 2] = acc[nz, 2] / f[nz]
    out[~nz] = 0.0
    return out


def accumulated(avg: np.ndarray) -> np.ndarray:
    out = avg.copy()
    out[:, 1] *= avg[:, 0]
    out[:, 2] *= avg[:, 0]
    return out


def api_type_id(callee: str, vocab: Vocabulary) -> int:
    if callee in vocab and callee not in RESERVED:
        return vocab.id(callee)
    return vocab.id(UNKNOWN_API)


def intra_vector(m: Method, vocab: Vocabulary, depths, counts, reachable=None, internal=()) -> np.ndarray:
    """Accumulator vector of one method's own instructions.

    Calls to names in ``internal`` are skipped (they are spliced in by
    :func:`apply_summary`); other calls count as API instructions.
    """
    acc = empty(vocab.size)
    for ins in m.instructions:
        if reachable is not None and ins.index not in reachable:
            continue
        if ins.kind in (PLAIN, COND):
            k = ins.type_id
        elif ins.kind == CALL:
            if ins.callee in internal:
                continue
            k = api_type_id(ins.callee, vocab)
        else:
            continue
        row = acc[k - 1]
        row[0] += 1
        row[1] += depths[ins.index]
        row[2] += counts[ins.index]
    return acc


def apply_summary(acc: np.ndarray, depth: float, count: float, callee_avg: np.ndarray) -> np.ndarray:
    """Splice an averaged callee summary into ``acc`` in place and return it."""
    f = callee_avg[:, 0]
    nz = f > 0
    acc[nz, 0] += f[nz]
    acc[nz, 1] += (depth + callee_avg[nz, 1]) * f[nz]
    acc[nz, 2] += (count + callee_avg[nz, 2]) * f[nz]
    return acc


@dataclass(frozen=True)
class SemanticResult:
    summaries: dict[str, np.ndarray]  # averaged, per method
    app: np.ndarray  # averaged


def merge_entries(summaries: dict[str, np.ndarray], entry_points, n: int) -> np.ndarray:
    """Frequency-weighted merge of averaged summaries (sum of accumulators)."""
    acc = empty(n)
    for name in entry_points:
        acc += accumulated(summaries[name])
    return averaged(acc)


def inter_vector(
    p: Program,
    vocab: Vocabulary,
    cg: CallGraph | None = None,
    analyses: dict[str, MethodAnalysis] | None = None,
) -> SemanticResult:
    if cg is None:
        cg = build_call_graph(p)
    if analyses is None:
        analyses = {name: analyze_method(m) for name, m in p.methods.items()}
    rec_id = vocab.id(RECURSIVE_CALL)
    summaries: dict[str, np.ndarray] = {}
    for comp in cg.scc_order:
        for name in sorted(comp):
            m = p.methods[name]
            a = analyses[name]
            acc = intra_vector(m, vocab, a.depths, a.counts, a.cfg.reachable, internal=p.methods)
            for ins in m.instructions:
                if ins.kind != CALL or ins.callee not in p.methods or ins.index not in a.cfg.reachable:
                    continue
                d, c = a.depths[ins.index], a.counts[ins.index]
                if ins.callee in comp:
                    row = acc[rec_id - 1]
                    row += (1, d, c)
                else:
                    apply_summary(acc, d, c, summaries[ins.callee])
            summaries[name] = averaged(acc)
    return SemanticResult(summaries, merge_entries(summaries, p.entry_points, vocab.size))
