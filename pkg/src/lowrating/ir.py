"""Textual executable IR: vocabulary, program model, parser, renderer and call graph.

The IR is unstructured (labels and jumps), one method per ``method`` block::

    vocab add cmp assign
    entry main
    method main {
        assign
    top:
        add
        call helper
        if cmp top
        ret
    }

Plain lines name an instruction type from the vocabulary. ``if <type> <label>``
is a conditional jump whose comparison is counted under ``<type>``; control
falls through to the next instruction when the condition is false.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable

UNKNOWN_API = "__unknown_api__"
RECURSIVE_CALL = "__recursive_call__"
RESERVED = (UNKNOWN_API, RECURSIVE_CALL)

# Instruction kinds
PLAIN = "plain"
COND = "if"
JUMP = "jump"
CALL = "call"
RET = "ret"

KEYWORDS = {"if", "jump", "call", "ret", "method", "entry", "vocab"}
_NAME = re.compile(r"^[A-Za-z_$][\w$.<>\-]*$")


class ParseError(ValueError):
    """Malformed vocabulary or IR text. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class Vocabulary:
    entries: tuple[str, ...]
    ids: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = {}
        for k, name in enumerate(self.entries, start=1):
            if name in ids:
                raise ValueError(f"duplicate vocabulary entry {name!r}")
            ids[name] = k
        for name in RESERVED:
            if name not in ids:
                raise ValueError(f"vocabulary lacks reserved entry {name!r}")
        object.__setattr__(self, "ids", ids)

    @classmethod
    def from_names(cls, names: Iterable[str]) -> "Vocabulary":
        names = list(names)
        names += [r for r in RESERVED if r not in names]
        return cls(tuple(names))

    @property
    def size(self) -> int:
        return len(self.entries)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, name):
        return name in self.ids

    def id(self, name: str) -> int:
        return self.ids[name]

    def name(self, type_id: int) -> str:
        return self.entries[type_id - 1]

    def render(self) -> str:
        return "".join(f"{n}\n" for n in self.entries)


def load_vocabulary(text: str) -> Vocabulary:
    """Parse a manifest with one name per line; ids follow line order from 1."""
    names: list[str] = []
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        name = raw.split("#", 1)[0].strip()
        if not name:
            continue
        if name in seen:
            raise ParseError(f"duplicate vocabulary name {name!r} (first on line {seen[name]})", lineno)
        seen[name] = lineno
        names.append(name)
    return Vocabulary.from_names(names)


@dataclass(frozen=True)
class Instruction:
    index: int
    kind: str
    type_id: int = 0  # plain / if
    target: int = -1  # if / jump
    callee: str = ""  # call

    @property
    def fallthrough(self) -> int:
        return self.index + 1


@dataclass(frozen=True)
class Method:
    name: str
    instructions: tuple[Instruction, ...] = ()

    def __len__(self):
        return len(self.instructions)


@dataclass(frozen=True)
class Program:
    methods: dict[str, Method]
    entry_points: tuple[str, ...]

    def callees(self, name: str) -> list[str]:
        """Internal callees of ``name`` in call-site order (with repeats)."""
        return [i.callee for i in self.methods[name].instructions if i.kind == CALL and i.callee in self.methods]


def _is_name(tok: str) -> bool:
    return bool(_NAME.match(tok))


def parse_program(text: str, vocab: Vocabulary | None = None) -> tuple[Program, Vocabulary]:
    """Parse IR text into a :class:`Program`.

    An explicit ``vocab`` takes precedence over a ``vocab`` line in the file;
    with neither, the built-in default vocabulary is used.
    Returns the program and the vocabulary it was parsed under.
    """
    lines = []
    for n, raw in enumerate(text.splitlines(), start=1):
        # braces end a line, so "method m { ret }" is a whole method
        cur = ""
        for piece in re.split(r"([{}])", raw.split("#", 1)[0]):
            if piece == "{":
                lines.append((n, (cur + " {").strip()))
                cur = ""
            elif piece == "}":
                lines.append((n, cur.strip()))
                lines.append((n, "}"))
                cur = ""
            else:
                cur += piece
        lines.append((n, cur.strip()))
    lines = [(n, s) for n, s in lines if s]

    inline_vocab: list[str] | None = None
    entries: list[tuple[int, str]] = []
    pos = 0
    while pos < len(lines) and lines[pos][1].split()[0] in ("vocab", "entry"):
        n, s = lines[pos]
        head, *rest = s.split()
        if not rest:
            raise ParseError(f"'{head}' directive needs at least one name", n)
        if head == "vocab":
            if entries:
                raise ParseError("'vocab' must precede 'entry' directives", n)
            inline_vocab = (inline_vocab or []) + rest
        else:
            entries.extend((n, name) for name in rest)
        pos += 1

    if vocab is None:
        if inline_vocab is not None:
            try:
                vocab = load_vocabulary("\n".join(inline_vocab))
            except ParseError as exc:
                raise ParseError(str(exc), lines[0][0]) from None
        else:
            from .defaults import default_vocabulary

            vocab = default_vocabulary()

    raw_methods: list[tuple[int, str, list[tuple[int, list[str], list[str]]]]] = []
    while pos < len(lines):
        n, s = lines[pos]
        m = re.match(r"^method\s+(\S+)\s*\{\s*(\})?$", s)
        if not m:
            raise ParseError(f"expected 'method <name> {{', got {s!r}", n)
        name = m.group(1)
        if not _is_name(name) or name in KEYWORDS:
            raise ParseError(f"invalid method name {name!r}", n)
        body: list[tuple[int, list[str], list[str]]] = []
        pos += 1
        if m.group(2) is None:
            pending: list[str] = []
            while True:
                if pos >= len(lines):
                    raise ParseError(f"method {name!r} not closed with '}}'", n)
                ln, s = lines[pos]
                pos += 1
                if s == "}":
                    break
                toks = s.split()
                labels = []
                while toks and toks[0].endswith(":"):
                    labels.append(toks.pop(0)[:-1])
                    if not _is_name(labels[-1]):
                        raise ParseError(f"invalid label {labels[-1]!r}", ln)
                if not toks:
                    pending.extend(labels)
                    continue
                body.append((ln, pending + labels, toks))
                pending = []
            if pending:
                raise ParseError(f"label {pending[0]!r} does not precede an instruction", ln)
        raw_methods.append((n, name, body))

    methods: dict[str, Method] = {}
    for n, name, body in raw_methods:
        if name in methods:
            raise ParseError(f"duplicate method name {name!r}", n)
        label_at: dict[str, int] = {}
        for idx, (ln, labels, _) in enumerate(body):
            for lab in labels:
                if lab in label_at:
                    raise ParseError(f"duplicate label {lab!r} in method {name!r}", ln)
                label_at[lab] = idx

        def resolve(lab: str, ln: int) -> int:
            if lab not in label_at:
                raise ParseError(f"unresolved label {lab!r} in method {name!r}", ln)
            return label_at[lab]

        instrs = []
        for idx, (ln, _, toks) in enumerate(body):
            op = toks[0]
            if op == "ret" and len(toks) == 1:
                ins = Instruction(idx, RET)
            elif op == "jump" and len(toks) == 2:
                ins = Instruction(idx, JUMP, target=resolve(toks[1], ln))
            elif op == "call" and len(toks) == 2:
                ins = Instruction(idx, CALL, callee=toks[1])
            elif op == "if" and len(toks) == 3:
                if toks[1] not in vocab:
                    raise ParseError(f"unknown opcode {toks[1]!r}", ln)
                target = resolve(toks[2], ln)
                if target == idx + 1:
                    raise ParseError("conditional jump to its own fallthrough has a single successor", ln)
                ins = Instruction(idx, COND, type_id=vocab.id(toks[1]), target=target)
            elif len(toks) == 1 and op not in KEYWORDS:
                if op not in vocab or op in RESERVED:
                    raise ParseError(f"unknown opcode {op!r}", ln)
                ins = Instruction(idx, PLAIN, type_id=vocab.id(op))
            else:
                raise ParseError(f"malformed instruction {' '.join(toks)!r}", ln)
            instrs.append(ins)
        methods[name] = Method(name, tuple(instrs))

    for n, name in entries:
        if name not in methods:
            raise ParseError(f"entry {name!r} is not a method", n)
    if entries:
        entry_points = tuple(dict.fromkeys(name for _, name in entries))
    else:
        entry_points = default_entry_points(methods)
    return Program(methods, entry_points), vocab


def default_entry_points(methods: dict[str, Method]) -> tuple[str, ...]:
    called = {
        i.callee
        for m in methods.values()
        for i in m.instructions
        if i.kind == CALL and i.callee in methods and i.callee != m.name
    }
    roots = tuple(name for name in methods if name not in called)
    if not roots and methods:
        # every method sits on a call cycle; fall back to the first one
        roots = (next(iter(methods)),)
    return roots


def render_program(p: Program, vocab: Vocabulary, inline_vocab: bool = False) -> str:
    out = []
    if inline_vocab:
        names = [n for n in vocab.entries if n not in RESERVED]
        if names:
            out.append("vocab " + " ".join(names))
    if p.entry_points:
        out.append("entry " + " ".join(p.entry_points))
    for m in p.methods.values():
        targets = {i.target for i in m.instructions if i.kind in (COND, JUMP)}
        out.append(f"method {m.name} {{")
        for i in m.instructions:
            prefix = f"L{i.index}: " if i.index in targets else "    "
            if i.kind == PLAIN:
                body = vocab.name(i.type_id)
            elif i.kind == COND:
                body = f"if {vocab.name(i.type_id)} L{i.target}"
            elif i.kind == JUMP:
                body = f"jump L{i.target}"
            elif i.kind == CALL:
                body = f"call {i.callee}"
            else:
                body = "ret"
            out.append(prefix + body)
        out.append("}")
    return "\n".join(out) + "\n"


@dataclass(frozen=True)
class CallGraph:
    nodes: tuple[str, ...]
    edges: frozenset[tuple[str, str]]
    scc_order: tuple[frozenset[str], ...]

    def scc_index(self) -> dict[str, int]:
        return {name: k for k, comp in enumerate(self.scc_order) for name in comp}


def strongly_connected_components(nodes: list, succ: dict) -> list[list]:
    """Tarjan's algorithm, iterative. Components come out in reverse topological order."""
    index: dict = {}
    low: dict = {}
    on_stack: set = set()
    stack: list = []
    out: list[list] = []
    counter = 0
    for root in nodes:
        if root in index:
            continue
        work = [(root, iter(succ.get(root, ())))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(succ.get(w, ()))))
                    advanced = True
                    break
                if w in on_stack:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                u = work[-1][0]
                low[u] = min(low[u], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                out.append(comp)
    return out


def build_call_graph(p: Program) -> CallGraph:
    nodes = list(p.methods)
    succ: dict[str, list[str]] = {}
    edges = set()
    for name in nodes:
        targets = list(dict.fromkeys(p.callees(name)))
        succ[name] = targets
        edges.update((name, t) for t in targets)
    comps = strongly_connected_components(nodes, succ)
    return CallGraph(tuple(nodes), frozenset(edges), tuple(frozenset(c) for c in comps))
