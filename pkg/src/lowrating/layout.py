"""Layout documents and layout vectors: per-element-type (count, mean tree depth).

Layout vectors are ``(M + 2, 2)`` float arrays indexed by ``slot - 1``; slot
``M + 1`` collects legacy-library elements and ``M + 2`` custom elements.
``<ref target="doc"/>`` splices another document in place of the tag, the
target's root taking the tag's depth.
"""

from __future__ import annotations

import graphlib
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .defaults import LEGACY_PREFIXES

REF_TAG = "ref"


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class UiVocabulary:
    names: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate UI element name")
        object.__setattr__(self, "_ids", {n: k for k, n in enumerate(self.names, start=1)})

    @property
    def m(self) -> int:
        return len(self.names)

    @property
    def slots(self) -> int:
        return len(self.names) + 2

    def id(self, name: str) -> int:
        return self._ids[name]

    def __contains__(self, name):
        return name in self._ids


def load_ui_vocabulary(text: str) -> UiVocabulary:
    names = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        name = raw.split("#", 1)[0].strip()
        if not name:
            continue
        if name in names:
            raise LayoutError(f"line {lineno}: duplicate UI element name {name!r}")
        names.append(name)
    return UiVocabulary(tuple(names))


@dataclass(frozen=True)
class Element:
    tag: str
    children: tuple["Element", ...] = ()
    target: str | None = None  # set only on reference nodes

    @property
    def is_ref(self) -> bool:
        return self.target is not None


@dataclass(frozen=True)
class LayoutDoc:
    name: str
    root: Element

    def references(self) -> list[str]:
        out = []
        stack = [self.root]
        while stack:
            e = stack.pop()
            if e.is_ref:
                out.append(e.target)
            stack.extend(e.children)
        return out


def _convert(node: ET.Element) -> Element:
    if node.tag == REF_TAG:
        if len(node):
            raise LayoutError("reference tag must not have children")
        target = node.get("target")
        if not target:
            raise LayoutError("reference tag lacks a 'target' attribute")
        return Element(REF_TAG, (), target)
    return Element(node.tag, tuple(_convert(c) for c in node))


def parse_layout(text: str, name: str = "layout") -> LayoutDoc:
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        line, col = exc.position
        raise LayoutError(f"{name}: malformed markup at line {line}, column {col}: {exc}") from None
    try:
        return LayoutDoc(name, _convert(root))
    except LayoutError as exc:
        raise LayoutError(f"{name}: {exc}") from None


def render_layout(doc: LayoutDoc) -> str:
    out = []

    def walk(e: Element, depth: int):
        pad = "  " * depth
        if e.is_ref:
            out.append(f'{pad}<{REF_TAG} target="{e.target}"/>')
        elif not e.children:
            out.append(f"{pad}<{e.tag}/>")
        else:
            out.append(f"{pad}<{e.tag}>")
            for c in e.children:
                walk(c, depth + 1)
            out.append(f"{pad}</{e.tag}>")

    walk(doc.root, 0)
    return "\n".join(out) + "\n"


def classify_element(tag: str, ui_vocab: UiVocabulary, legacy_prefixes: Iterable[str] = LEGACY_PREFIXES) -> int:
    if tag in ui_vocab:
        return ui_vocab.id(tag)
    if any(tag.startswith(p) for p in legacy_prefixes):
        return ui_vocab.m + 1
    return ui_vocab.m + 2


def averaged(acc: np.ndarray) -> np.ndarray:
    out = np.zeros_like(acc)
    out[:, 0] = acc[:, 0]
    nz = acc[:, 0] > 0
    out[nz, 1] = acc[nz, 1] / acc[nz, 0]
    return out


def reference_order(docs: Mapping[str, LayoutDoc]) -> list[str]:
    """Documents ordered so every reference target precedes its referrers."""
    deps = {}
    for name, doc in docs.items():
        refs = doc.references()
        for t in refs:
            if t not in docs:
                raise LayoutError(f"{name}: unresolved reference target {t!r}")
        deps[name] = set(refs)
    try:
        return list(graphlib.TopologicalSorter(deps).static_order())
    except graphlib.CycleError as exc:
        raise LayoutError(f"reference cycle among layouts: {' -> '.join(exc.args[1])}") from None


def root_docs(docs: Mapping[str, LayoutDoc]) -> list[str]:
    referenced = {t for d in docs.values() for t in d.references()}
    return [n for n in docs if n not in referenced]


def layout_vector(
    docs: Mapping[str, LayoutDoc] | Iterable[LayoutDoc],
    ui_vocab: UiVocabulary,
    legacy_prefixes: Iterable[str] = LEGACY_PREFIXES,
) -> np.ndarray:
    """Averaged layout vector over all root documents of an app."""
    if not isinstance(docs, Mapping):
        docs = {d.name: d for d in docs}
    legacy_prefixes = tuple(legacy_prefixes)
    summaries: dict[str, np.ndarray] = {}
    for name in reference_order(docs):
        acc = np.zeros((ui_vocab.slots, 2))
        stack = [(docs[name].root, 0)]
        while stack:
            e, depth = stack.pop()
            if e.is_ref:
                sub = summaries[e.target]
                acc[:, 0] += sub[:, 0]
                acc[:, 1] += sub[:, 1] + depth * sub[:, 0]
                continue
            k = classify_element(e.tag, ui_vocab, legacy_prefixes)
            acc[k - 1] += (1, depth)
            stack.extend((c, depth + 1) for c in e.children)
        summaries[name] = acc
    total = np.zeros((ui_vocab.slots, 2))
    for name in root_docs(docs):
        total += summaries[name]
    return averaged(total)
