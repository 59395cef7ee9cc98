"""Instruction-level control-flow analyses for one method.

Nodes ``0..n-1`` are instructions; ``n`` is the virtual ENTRY and ``n+1`` the
virtual EXIT. Loop depth and branch counts follow the usual natural-loop and
post-dominator constructions:

* a back edge ``u -> v`` is one whose target dominates its source;
* the natural loop of ``u -> v`` is ``v`` plus every node reaching ``u``
  without passing ``v``; loops sharing a header are merged;
* a branch region starts at a conditional jump that is not a back-edge
  source and ends at its immediate post-dominator, computed after back
  edges are removed and dangling nodes are wired to EXIT.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import _accel
from .ir import CALL, COND, JUMP, PLAIN, RET, Method

log = logging.getLogger(__name__)


class AnalysisError(ValueError):
    """A method or app cannot be analyzed."""


class IrreducibleError(AnalysisError):
    pass


@dataclass(frozen=True)
class Cfg:
    n: int  # instruction count
    succ: tuple[tuple[int, ...], ...]
    pred: tuple[tuple[int, ...], ...]
    reachable: frozenset[int]  # reachable instructions

    @property
    def entry(self) -> int:
        return self.n

    @property
    def exit(self) -> int:
        return self.n + 1

    def edges(self):
        for u, vs in enumerate(self.succ):
            for v in vs:
                yield u, v


@dataclass(frozen=True)
class BranchRegion:
    s: int
    e: int
    body: frozenset[int]


@dataclass(frozen=True)
class MethodAnalysis:
    cfg: Cfg
    idom: dict[int, int]
    ipdom: dict[int, int]
    back_edges: frozenset[tuple[int, int]]
    depths: np.ndarray
    counts: np.ndarray
    regions: tuple[BranchRegion, ...]


def _make(n: int, succ: list[list[int]], name: str = "") -> Cfg:
    entry = n
    seen = {entry}
    work = [entry]
    while work:
        u = work.pop()
        for v in succ[u]:
            if v not in seen:
                seen.add(v)
                work.append(v)
    dead = [i for i in range(n) if i not in seen]
    if dead:
        log.warning("method %s: dropping %d unreachable instruction(s) %s", name or "?", len(dead), dead[:8])
        for i in dead:
            succ[i] = []
    pred: list[list[int]] = [[] for _ in range(n + 2)]
    for u, vs in enumerate(succ):
        for v in vs:
            pred[v].append(u)
    return Cfg(
        n,
        tuple(tuple(s) for s in succ),
        tuple(tuple(p) for p in pred),
        frozenset(i for i in range(n) if i in seen),
    )


def build_cfg(m: Method) -> Cfg:
    n = len(m.instructions)
    exit_ = n + 1

    def nxt(i):
        return i + 1 if i + 1 < n else exit_

    succ: list[list[int]] = []
    for ins in m.instructions:
        if ins.kind in (PLAIN, CALL):
            succ.append([nxt(ins.index)])
        elif ins.kind == COND:
            succ.append([ins.target, nxt(ins.index)])
        elif ins.kind == JUMP:
            succ.append([ins.target])
        elif ins.kind == RET:
            succ.append([exit_])
        else:  # pragma: no cover
            raise AnalysisError(f"unknown instruction kind {ins.kind!r}")
    succ.append([0] if n else [exit_])  # ENTRY
    succ.append([])  # EXIT
    return _make(n, succ, m.name)


def cfg_from_edges(n: int, edges) -> Cfg:
    """Build a Cfg directly from an edge list (testing and oracles)."""
    succ: list[list[int]] = [[] for _ in range(n + 2)]
    for u, v in edges:
        if v not in succ[u]:
            succ[u].append(v)
    return _make(n, succ)


def _postorder(root: int, succ) -> list[int]:
    order = []
    seen = {root}
    stack = [(root, iter(succ[root]))]
    while stack:
        u, it = stack[-1]
        for v in it:
            if v not in seen:
                seen.add(v)
                stack.append((v, iter(succ[v])))
                break
        else:
            stack.pop()
            order.append(u)
    return order


def immediate_dominators(root: int, succ, pred) -> dict[int, int]:
    """Iterative dominator computation (Cooper, Harvey and Kennedy).

    Returns ``idom`` for every node reachable from ``root`` except ``root``.
    """
    post = _postorder(root, succ)
    rank = {u: k for k, u in enumerate(post)}
    rpo = post[::-1]
    idom = {root: root}

    def intersect(a, b):
        while a != b:
            while rank[a] < rank[b]:
                a = idom[a]
            while rank[b] < rank[a]:
                b = idom[b]
        return a

    changed = True
    while changed:
        changed = False
        for u in rpo[1:]:
            new = None
            for p in pred[u]:
                if p in idom:
                    new = p if new is None else intersect(p, new)
            if idom.get(u) != new:
                idom[u] = new
                changed = True
    del idom[root]
    return idom


def dominators(g: Cfg) -> dict[int, int]:
    return immediate_dominators(g.entry, g.succ, g.pred)


def dominates(idom: dict[int, int], a: int, b: int) -> bool:
    while True:
        if a == b:
            return True
        if b not in idom:
            return False
        b = idom[b]


def back_edges(g: Cfg, idom: dict[int, int]) -> frozenset[tuple[int, int]]:
    return frozenset((u, v) for u, v in g.edges() if dominates(idom, v, u))


def _topological(nodes, succ) -> list[int] | None:
    indeg = {u: 0 for u in nodes}
    for u in nodes:
        for v in succ[u]:
            indeg[v] += 1
    queue = deque(u for u in nodes if indeg[u] == 0)
    order = []
    while queue:
        u = queue.popleft()
        order.append(u)
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                queue.append(v)
    return order if len(order) == len(indeg) else None


def forward_graph(g: Cfg, backedges) -> tuple[list[list[int]], list[int]]:
    """Back edges removed, reachable nodes with no successors wired to EXIT.

    Returns (successor lists, topological order of live nodes). Raises
    :class:`IrreducibleError` if a cycle survives back-edge removal.
    """
    live = sorted(g.reachable) + [g.entry, g.exit]
    succ: list[list[int]] = [[] for _ in range(g.n + 2)]
    for u in live:
        succ[u] = [v for v in g.succ[u] if (u, v) not in backedges]
        if not succ[u] and u != g.exit:
            succ[u] = [g.exit]
    topo = _topological(live, succ)
    if topo is None:
        raise IrreducibleError("irreducible control flow: a cycle remains after removing back edges")
    return succ, topo


def post_dominators(g: Cfg, backedges=None) -> dict[int, int]:
    if backedges is None:
        backedges = back_edges(g, dominators(g))
    fsucc, _ = forward_graph(g, backedges)
    rsucc: list[list[int]] = [[] for _ in range(g.n + 2)]
    for u, vs in enumerate(fsucc):
        for v in vs:
            rsucc[v].append(u)
    return immediate_dominators(g.exit, rsucc, fsucc)


def loop_depths(g: Cfg, backedges) -> np.ndarray:
    forward_graph(g, backedges)  # reducibility check
    bodies: dict[int, set[int]] = {}
    for u, v in backedges:
        body = bodies.setdefault(v, {v})
        work = [u]
        while work:
            x = work.pop()
            if x in body:
                continue
            body.add(x)
            work.extend(g.pred[x])
    depth = np.zeros(g.n, dtype=np.int64)
    for body in bodies.values():
        idx = [i for i in body if i < g.n]
        depth[idx] += 1
    return depth


def branch_counts(g: Cfg, backedges, ipdom: dict[int, int]):
    """Per-instruction branch counts and the regions they come from."""
    args = branch_kernel_args(g, backedges, ipdom)
    return _accel.branch_counts(*args), list(args[4]), list(args[5])


def branch_kernel_args(g: Cfg, backedges, ipdom: dict[int, int]):
    """CSR forward graph, topological order and region endpoints for the count kernel."""
    sources = {u for u, _ in backedges}
    fsucc, topo = forward_graph(g, backedges)
    starts = [
        s for s in sorted(g.reachable)
        if len(g.succ[s]) == 2 and s not in sources
    ]
    ends = [ipdom[s] for s in starts]
    indptr = np.zeros(g.n + 3, dtype=np.int64)
    indptr[1:] = np.cumsum([len(fsucc[u]) for u in range(g.n + 2)])
    indices = np.fromiter((v for u in range(g.n + 2) for v in fsucc[u]), dtype=np.int64, count=int(indptr[-1]))
    placed = set(topo)
    full_topo = topo + [u for u in range(g.n + 2) if u not in placed]
    return (g.n, indptr, indices, np.array(full_topo, dtype=np.int64), np.array(starts, dtype=np.int64),
            np.array(ends, dtype=np.int64))


def branch_regions(g: Cfg, backedges, ipdom: dict[int, int]) -> list[BranchRegion]:
    """Explicit region bodies (diagnostics and tests; the counts path is faster)."""
    sources = {u for u, _ in backedges}
    fsucc, _ = forward_graph(g, backedges)
    fpred: list[list[int]] = [[] for _ in range(g.n + 2)]
    for u, vs in enumerate(fsucc):
        for v in vs:
            fpred[v].append(u)

    def closure(start, adj):
        seen = {start}
        work = [start]
        while work:
            for v in adj[work.pop()]:
                if v not in seen:
                    seen.add(v)
                    work.append(v)
        return seen

    out = []
    for s in sorted(g.reachable):
        if len(g.succ[s]) != 2 or s in sources:
            continue
        e = ipdom[s]
        body = (closure(s, fsucc) & closure(e, fpred)) - {s, e, g.entry, g.exit}
        out.append(BranchRegion(s, e, frozenset(body)))
    return out


def analyze_method(m: Method, with_regions: bool = False) -> MethodAnalysis:
    g = build_cfg(m)
    idom = dominators(g)
    be = back_edges(g, idom)
    try:
        depths = loop_depths(g, be)
    except IrreducibleError as exc:
        raise IrreducibleError(f"method {m.name}: {exc}") from None
    ipdom = post_dominators(g, be)
    counts, _, _ = branch_counts(g, be, ipdom)
    regions = tuple(branch_regions(g, be, ipdom)) if with_regions else ()
    return MethodAnalysis(g, idom, ipdom, be, depths, counts, regions)


def dump_cfg(name: str, a: MethodAnalysis) -> str:
    """Line-oriented debug dump: ``node: succ...`` plus idom/ipdom/depth/count."""

    def label(u):
        if u == a.cfg.entry:
            return "ENTRY"
        if u == a.cfg.exit:
            return "EXIT"
        return str(u)

    lines = [f"# method {name}"]
    for u in [a.cfg.entry, *range(a.cfg.n), a.cfg.exit]:
        if u < a.cfg.n and u not in a.cfg.reachable:
            continue
        succ = " ".join(label(v) for v in a.cfg.succ[u])
        extra = []
        if u in a.idom:
            extra.append(f"idom={label(a.idom[u])}")
        if u in a.ipdom:
            extra.append(f"ipdom={label(a.ipdom[u])}")
        if u < a.cfg.n:
            extra.append(f"depth={a.depths[u]} branches={a.counts[u]}")
        lines.append(f"{label(u)}: {succ}" + ("  ; " + " ".join(extra) if extra else ""))
    if a.back_edges:
        lines.append("back: " + " ".join(f"{label(u)}->{label(v)}" for u, v in sorted(a.back_edges)))
    return "\n".join(lines) + "\n"
