"""Brute-force reference computations used to cross-check the fast analyses.

None of these share code with the summary-based paths they check beyond the
IR data model: semantic vectors are recomputed after textual inlining,
layout vectors after textual include expansion, dominators by set iteration.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .cfg import AnalysisError, analyze_method
from .ir import CALL, COND, JUMP, RET, Instruction, Method, Program, Vocabulary, build_call_graph
from .layout import LayoutDoc, LayoutError, UiVocabulary, classify_element, root_docs
from .defaults import LEGACY_PREFIXES
from .semvec import averaged, intra_vector


class RecursionRefused(AnalysisError):
    pass


def inline_method(p: Program, name: str) -> Method:
    """Flatten ``name`` by recursively substituting every internal call's body.

    Callee ``ret`` becomes a jump to the instruction after the call site;
    falling off a callee's end falls through to it as well.
    """
    cg = build_call_graph(p)
    for comp in cg.scc_order:
        if len(comp) > 1 or any((m, m) in cg.edges for m in comp):
            raise RecursionRefused("oracle refuses recursive programs")

    flat: list[tuple] = []  # (kind, type_id, target_key, callee, labels)
    pending: list = []
    serial = [0]

    def emit(kind, type_id=0, target=None, callee=""):
        flat.append((kind, type_id, target, callee, pending.copy()))
        pending.clear()

    def emit_return(cont):
        if cont is None:
            emit(RET)
        else:
            emit(JUMP, target=cont)

    def expand(mname: str, cont):
        inst = serial[0]
        serial[0] += 1
        body = p.methods[mname].instructions
        if not body:  # keep the call site as a distinct node
            emit_return(cont)
        for ins in body:
            pending.append((inst, ins.index))
            nxt = (inst, ins.index + 1) if ins.index + 1 < len(body) else cont
            if ins.kind == CALL and ins.callee in p.methods:
                expand(ins.callee, nxt)
            elif ins.kind == RET:
                emit_return(cont)
            elif ins.kind in (COND, JUMP):
                emit(ins.kind, ins.type_id, (inst, ins.target))
            else:
                emit(ins.kind, ins.type_id, None, ins.callee)

    expand(name, None)
    if pending:
        emit(RET)

    where: dict = {}
    for k, (_, _, _, _, labels) in enumerate(flat):
        for lab in labels:
            where[lab] = k

    instrs = []
    for k, (kind, type_id, target, callee, _) in enumerate(flat):
        if kind in (COND, JUMP):
            t = where[target]
            if kind == COND and t == k + 1:
                raise AnalysisError("inlining collapsed a conditional jump")
            instrs.append(Instruction(k, kind, type_id=type_id, target=t))
        else:
            instrs.append(Instruction(k, kind, type_id=type_id, callee=callee))
    return Method(f"{name}#inlined", tuple(instrs))


def oracle_semantic_vector(p: Program, vocab: Vocabulary) -> np.ndarray:
    """Averaged app vector via full inlining of each entry point."""
    acc = np.zeros((vocab.size, 3))
    for name in p.entry_points:
        flat = inline_method(p, name)
        a = analyze_method(flat)
        acc += intra_vector(flat, vocab, a.depths, a.counts, a.cfg.reachable)
    return averaged(acc)


def expand_layout(docs: Mapping[str, LayoutDoc], name: str, depth: int = 0, _stack=()) -> list[tuple[str, int]]:
    """(tag, depth) of every element after textually inlining references."""
    if name in _stack:
        raise LayoutError(f"reference cycle through {name!r}")
    if name not in docs:
        raise LayoutError(f"unresolved reference target {name!r}")
    out = []

    def walk(e, d):
        if e.is_ref:
            out.extend(expand_layout(docs, e.target, d, _stack + (name,)))
            return
        out.append((e.tag, d))
        for c in e.children:
            walk(c, d + 1)

    walk(docs[name].root, depth)
    return out


def oracle_layout_vector(docs, ui_vocab: UiVocabulary, legacy_prefixes=LEGACY_PREFIXES) -> np.ndarray:
    if not isinstance(docs, Mapping):
        docs = {d.name: d for d in docs}
    for name in docs:  # surfaces cycles even among non-root docs
        expand_layout(docs, name)
    n = np.zeros(ui_vocab.slots)
    dsum = np.zeros(ui_vocab.slots)
    for name in root_docs(docs):
        for tag, d in expand_layout(docs, name):
            k = classify_element(tag, ui_vocab, legacy_prefixes) - 1
            n[k] += 1
            dsum[k] += d
    out = np.zeros((ui_vocab.slots, 2))
    out[:, 0] = n
    nz = n > 0
    out[nz, 1] = dsum[nz] / n[nz]
    return out


def dominator_sets(root, succ: Mapping) -> dict:
    """dom(n) for every node reachable from root, by naive set iteration."""
    nodes = {root}
    work = [root]
    while work:
        for v in succ.get(work.pop(), ()):
            if v not in nodes:
                nodes.add(v)
                work.append(v)
    pred = {u: [] for u in nodes}
    for u in nodes:
        for v in succ.get(u, ()):
            pred[v].append(u)
    dom = {u: set(nodes) for u in nodes}
    dom[root] = {root}
    changed = True
    while changed:
        changed = False
        for u in nodes - {root}:
            ps = [dom[q] for q in pred[u]]
            new = set.intersection(*ps) | {u} if ps else {u}
            if new != dom[u]:
                dom[u] = new
                changed = True
    return dom


def oracle_idom(root, succ: Mapping) -> dict:
    dom = dominator_sets(root, succ)
    idom = {}
    for u, ds in dom.items():
        if u == root:
            continue
        strict = ds - {u}
        # the strict dominator dominated by all others
        for d in strict:
            if strict <= dom[d]:
                idom[u] = d
                break
    return idom


def enumerate_paths(succ: Mapping, s, limit: int = 100000):
    """All maximal paths from ``s`` in a DAG."""
    out = []
    stack = [(s, [s])]
    while stack:
        u, path = stack.pop()
        nxt = succ.get(u, ())
        if not nxt:
            out.append(path)
            if len(out) > limit:
                raise RuntimeError("too many paths")
        for v in nxt:
            stack.append((v, path + [v]))
    return out
