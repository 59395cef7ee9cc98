"""App bundles on disk and a seeded synthetic corpus with a planted class signal.

A bundle is a directory holding ``program.sir``, ``layout/*.sxml`` and a
``meta`` file of ``key=value`` lines (``id``, ``stars``). A corpus is a
directory of bundles plus ``manifest.tsv``, ``vocab.txt``, ``ui_vocab.txt``
and ``corpus.json`` (the generator settings).

Class 0 (low rating) and class 1 draw programs and layouts from generators
whose parameters differ by ``margin``; with ``margin == 0`` both classes
share one generator and labels carry no signal.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .defaults import APIS, OPCODES, UI_ELEMENTS, default_ui_vocabulary, default_vocabulary
from .ir import Program, Vocabulary, load_vocabulary, parse_program
from .layout import LayoutDoc, UiVocabulary, load_ui_vocabulary, parse_layout

MANIFEST_VERSION = "lowrating-corpus 1"
LOW, NOT_LOW = 0, 1

HEAVY_APIS = (
    "java.net.URL.openConnection",
    "android.database.sqlite.SQLiteDatabase.query",
    "android.graphics.BitmapFactory.decode",
    "java.io.File.open",
    "java.lang.Thread.start",
)
THIRD_PARTY = tuple(f"com.thirdparty.sdk{k}.Api.call" for k in range(6))
LEGACY_TAGS = (
    "android.support.v7.widget.Toolbar",
    "android.support.v7.widget.RecyclerView",
    "android.support.v4.view.ViewPager",
    "android.support.design.widget.FloatingActionButton",
)
CUSTOM_TAGS = tuple(f"com.example.ui.Custom{k}" for k in range(5))
CONTAINERS = ("LinearLayout", "RelativeLayout", "FrameLayout", "ScrollView", "TableLayout", "GridLayout", "RadioGroup")


class BundleError(ValueError):
    pass


def label_for(stars: float, boundary: float = 3.0) -> int:
    """Low rating (0) iff stars < boundary; exactly ``boundary`` is not low."""
    return LOW if stars < boundary else NOT_LOW


@dataclass(frozen=True)
class AppBundle:
    app_id: str
    stars: float
    program: Program
    layouts: dict[str, LayoutDoc]

    @property
    def label(self) -> int:
        return label_for(self.stars)


def read_meta(path: Path) -> dict[str, str]:
    meta = {}
    for n, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise BundleError(f"{path}: line {n}: expected key=value")
        k, v = line.split("=", 1)
        meta[k.strip()] = v.strip()
    return meta


def read_bundle(path, vocab: Vocabulary | None = None) -> tuple[AppBundle, Vocabulary]:
    path = Path(path)
    if not path.is_dir():
        raise BundleError(f"{path}: not a bundle directory")
    prog_file = path / "program.sir"
    meta_file = path / "meta"
    for f in (prog_file, meta_file):
        if not f.is_file():
            raise BundleError(f"{path}: missing {f.name}")
    meta = read_meta(meta_file)
    try:
        stars = float(meta.get("stars", "nan"))
    except ValueError:
        raise BundleError(f"{path}: stars is not a number") from None
    if not 1.0 <= stars <= 5.0:
        raise BundleError(f"{path}: stars must lie in [1, 5], got {meta.get('stars')!r}")
    program, vocab = parse_program(prog_file.read_text(encoding="utf-8"), vocab)
    layouts = {}
    layout_dir = path / "layout"
    if layout_dir.is_dir():
        for f in sorted(layout_dir.glob("*.sxml")):
            layouts[f.stem] = parse_layout(f.read_text(encoding="utf-8"), f.stem)
    return AppBundle(meta.get("id", path.name), stars, program, layouts), vocab


def write_bundle(path, app_id: str, stars: float, program_text: str, layouts: dict[str, str]) -> None:
    path = Path(path)
    (path / "layout").mkdir(parents=True, exist_ok=True)
    (path / "program.sir").write_text(program_text, encoding="utf-8")
    (path / "meta").write_text(f"id={app_id}\nstars={stars:.2f}\n", encoding="utf-8")
    for name, text in layouts.items():
        (path / "layout" / f"{name}.sxml").write_text(text, encoding="utf-8")


# ---------------------------------------------------------------- generation


@dataclass
class CorpusSpec:
    seed: int = 7
    n_apps: int = 1000
    margin: float = 1.0
    low_share: float = 0.5
    acyclic_share: float = 1.0
    methods: tuple[int, int] = (3, 10)
    method_size: tuple[int, int] = (6, 40)
    # class-conditional knobs; each is (shared value, per-unit-margin shift)
    loop_rate: tuple[float, float] = (0.12, 0.03)
    branch_rate: tuple[float, float] = (0.15, 0.03)
    profile_shift: float = 0.8
    heavy_in_loop: float = 1.5
    app_noise: float = 0.45
    layout_docs: tuple[int, int] = (1, 4)
    layout_size: tuple[int, int] = (4, 30)
    layout_depth: tuple[float, float] = (3.0, 1.0)
    ui_shift: float = 1.1
    ui_noise: float = 0.35
    structure_seed: int = 20231
    notes: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CorpusSpec":
        d = json.loads(text)
        for k in ("methods", "method_size", "loop_rate", "branch_rate", "layout_docs", "layout_size", "layout_depth"):
            d[k] = tuple(d[k])
        return cls(**d)


PLAIN_OPS = tuple(o for o in OPCODES if o not in ("cmp", "throw", "monitor"))
EXEC_TYPES = PLAIN_OPS + APIS


@dataclass(frozen=True)
class ClassProfile:
    """Sampling parameters for one class (before per-app noise)."""

    type_logits: np.ndarray  # over EXEC_TYPES
    heavy_bias: float
    loop_rate: float
    branch_rate: float
    ui_logits: np.ndarray  # over UI_ELEMENTS + legacy + custom
    layout_depth: float


def class_profiles(spec: CorpusSpec) -> dict[int, ClassProfile]:
    # fixed structure shared by both classes, independent of the corpus seed
    rng = np.random.default_rng(spec.structure_seed)
    base = np.log(rng.dirichlet(np.full(len(EXEC_TYPES), 2.0)))
    direction = rng.choice([-1.0, 0.0, 1.0], size=len(EXEC_TYPES), p=[0.3, 0.4, 0.3])
    ui_base = np.log(rng.dirichlet(np.full(len(UI_ELEMENTS) + 2, 2.0)))
    ui_dir = rng.choice([-1.0, 0.0, 1.0], size=len(UI_ELEMENTS) + 2, p=[0.3, 0.4, 0.3])
    out = {}
    for cls, sign in ((LOW, 1.0), (NOT_LOW, -1.0)):
        s = sign * spec.margin / 2
        out[cls] = ClassProfile(
            type_logits=base + s * spec.profile_shift * direction,
            heavy_bias=spec.heavy_in_loop * s,
            loop_rate=spec.loop_rate[0] + s * spec.loop_rate[1],
            branch_rate=spec.branch_rate[0] + s * spec.branch_rate[1],
            ui_logits=ui_base + s * spec.ui_shift * ui_dir,
            layout_depth=spec.layout_depth[0] + s * spec.layout_depth[1],
        )
    return out


def _softmax(z):
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


class ProgramWriter:
    """Emits structured, reducible IR (rotated loops, if / if-else, early returns).

    Every back-edge source is a conditional jump with a fallthrough, so no
    node dangles once back edges are removed.
    """

    def __init__(self, rng, type_logits, heavy_bias=0.0, loop_rate=0.12, branch_rate=0.15,
                 call_rate=0.08, ret_rate=0.1, max_loop_depth=3, third_party_rate=0.03):
        self.rng = rng
        self.type_logits = np.asarray(type_logits, dtype=float)
        self.heavy_mask = np.array([t in HEAVY_APIS for t in EXEC_TYPES], dtype=float)
        self.heavy_bias = heavy_bias
        self.loop_rate = loop_rate
        self.branch_rate = branch_rate
        self.call_rate = call_rate
        self.ret_rate = ret_rate
        self.max_loop_depth = max_loop_depth
        self.third_party_rate = third_party_rate
        self._probs = {}
        self.lines: list[tuple[list[str], str]] = []
        self.pending: list[str] = []
        self.n_labels = 0

    def label(self) -> str:
        self.n_labels += 1
        return f"L{self.n_labels}"

    def put(self, text: str) -> None:
        self.lines.append((self.pending, text))
        self.pending = []

    def _type(self, depth):
        key = min(depth, 1)
        if key not in self._probs:
            self._probs[key] = _softmax(self.type_logits + self.heavy_bias * key * self.heavy_mask)
        return EXEC_TYPES[self.rng.choice(len(EXEC_TYPES), p=self._probs[key])]

    def simple(self, depth, callees) -> str:
        rng = self.rng
        if callees and rng.random() < self.call_rate:
            return f"call {callees[rng.integers(len(callees))]}"
        if rng.random() < self.third_party_rate:
            return f"call {THIRD_PARTY[rng.integers(len(THIRD_PARTY))]}"
        t = self._type(depth)
        return f"call {t}" if t in APIS else t

    def block(self, budget: int, depth: int, callees) -> None:
        """Emit a statement sequence of about ``budget`` instructions (at least one)."""
        rng = self.rng
        start = len(self.lines)
        self.put(self.simple(depth, callees))
        while (room := budget - (len(self.lines) - start)) > 0:
            r = rng.random()
            if room >= 3 and depth < self.max_loop_depth and r < self.loop_rate:
                head = self.label()
                self.pending.append(head)
                self.block(int(rng.integers(1, room - 1)), depth + 1, callees)
                self.put(f"if cmp {head}")
            elif room >= 3 and r < self.loop_rate + self.branch_rate:
                skip = self.label()
                self.put(f"if cmp {skip}")
                u = rng.random()
                if u < self.ret_rate:
                    self.put(self.simple(depth, callees))
                    self.put("ret")
                    self.pending.append(skip)
                elif u < 0.45 and room >= 5:
                    done = self.label()
                    self.block(int(rng.integers(1, room // 2)), depth, callees)
                    self.put(f"jump {done}")
                    self.pending.append(skip)
                    self.block(int(rng.integers(1, room // 2)), depth, callees)
                    self.pending.append(done)
                else:
                    self.block(int(rng.integers(1, room - 1)), depth, callees)
                    self.pending.append(skip)
            else:
                self.put(self.simple(depth, callees))

    def method(self, name: str, size: int, callees, terminate: bool = True) -> str:
        self.lines, self.pending, self.n_labels = [], [], 0
        if size > 0:
            self.block(size, 0, callees)
            if terminate:
                self.put("ret")
            elif self.pending:
                self.put(self.simple(0, callees))
        body = "".join(
            "    " + "".join(f"{lab}: " for lab in labels) + text + "\n" for labels, text in self.lines
        )
        return f"method {name} {{\n{body}}}\n"


def random_program_text(rng, max_methods=30, max_instructions=400, type_logits=None, writer_kwargs=None,
                        acyclic=True, method_count=None, empty_rate=0.05) -> str:
    """A random program with an (optionally) acyclic call graph."""
    if type_logits is None:
        type_logits = np.zeros(len(EXEC_TYPES))
    k = method_count or int(rng.integers(1, max_methods + 1))
    names = [f"m{j}" for j in range(k)]
    per = max(1, max_instructions // k - 3)
    parts = []
    for j, name in enumerate(names):
        callees = names[j + 1:]
        if not acyclic and rng.random() < 0.3:
            callees = callees + [names[int(rng.integers(0, j + 1))]]
        w = ProgramWriter(rng, type_logits, **(writer_kwargs or {}))
        size = 0 if rng.random() < empty_rate else int(rng.integers(1, per + 1))
        parts.append(w.method(name, size, callees, terminate=rng.random() < 0.9))
    return "".join(parts)


def _layout_tree(rng, probs, tags, budget, max_depth, refs):
    """Random tree as nested markup; ``refs`` are doc names that may be included."""
    count = [0]

    def node(depth):
        count[0] += 1
        if refs and depth > 0 and rng.random() < 0.12:
            return f'<ref target="{refs[rng.integers(len(refs))]}"/>'
        if depth == 0:
            tag = CONTAINERS[rng.integers(len(CONTAINERS))]
        else:
            tag = tags[rng.choice(len(tags), p=probs)]
        kids = []
        if depth < max_depth:
            n_kids = int(rng.poisson(1.6 if depth == 0 else 1.1))
            for _ in range(n_kids):
                if count[0] >= budget:
                    break
                kids.append(node(depth + 1))
        if not kids:
            return f"<{tag}/>"
        return f"<{tag}>" + "".join(kids) + f"</{tag}>"

    return node(0) + "\n"


def generate_app(spec: CorpusSpec, index: int, profiles=None) -> tuple[str, float, str, dict[str, str]]:
    """One app: (id, stars, program text, {doc name: markup})."""
    profiles = profiles or class_profiles(spec)
    rng = np.random.default_rng([spec.seed, index])
    cls = LOW if rng.random() < spec.low_share else NOT_LOW
    prof = profiles[cls]
    stars = round(float(rng.uniform(1.0, 2.99) if cls == LOW else rng.uniform(3.01, 5.0)), 2)

    logits = prof.type_logits + spec.app_noise * rng.standard_normal(len(EXEC_TYPES))
    loop_rate = float(np.clip(prof.loop_rate + 0.03 * rng.standard_normal(), 0.02, 0.4))
    branch_rate = float(np.clip(prof.branch_rate + 0.03 * rng.standard_normal(), 0.02, 0.4))
    acyclic = rng.random() < spec.acyclic_share
    k = int(rng.integers(spec.methods[0], spec.methods[1] + 1))
    names = [f"m{j}" for j in range(k)]
    parts = []
    for j, name in enumerate(names):
        callees = names[j + 1:]
        if not acyclic and rng.random() < 0.3:
            callees = callees + [names[int(rng.integers(0, j + 1))]]
        w = ProgramWriter(rng, logits, heavy_bias=prof.heavy_bias, loop_rate=loop_rate, branch_rate=branch_rate)
        size = int(rng.integers(spec.method_size[0], spec.method_size[1] + 1))
        parts.append(w.method(name, size, callees))
    program = "".join(parts)

    tags = UI_ELEMENTS + (LEGACY_TAGS[0], CUSTOM_TAGS[0])
    ui_logits = prof.ui_logits + spec.ui_noise * rng.standard_normal(len(tags))
    probs = _softmax(ui_logits)
    n_docs = int(rng.integers(spec.layout_docs[0], spec.layout_docs[1] + 1))
    doc_names = [f"screen{j}" for j in range(n_docs)]
    layouts = {}
    for j in reversed(range(n_docs)):
        budget = int(rng.integers(spec.layout_size[0], spec.layout_size[1] + 1))
        max_depth = max(1, int(round(prof.layout_depth + 0.7 * rng.standard_normal())))
        # legacy and custom slots stand for whole families of tags
        fam = list(tags)
        fam[-2] = LEGACY_TAGS[rng.integers(len(LEGACY_TAGS))]
        fam[-1] = CUSTOM_TAGS[rng.integers(len(CUSTOM_TAGS))]
        layouts[doc_names[j]] = _layout_tree(rng, probs, fam, budget, max_depth, doc_names[j + 1:])
    return f"app{index:05d}", stars, program, layouts


def gen_corpus(spec: CorpusSpec, out_dir) -> list[tuple[str, float, int]]:
    """Write a corpus; returns manifest rows (id, stars, label)."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise BundleError(f"{out}: cannot write corpus: {exc}") from None
    profiles = class_profiles(spec)
    rows = []
    for i in range(spec.n_apps):
        app_id, stars, program, layouts = generate_app(spec, i, profiles)
        write_bundle(out / app_id, app_id, stars, program, layouts)
        rows.append((app_id, stars, label_for(stars)))
    (out / "vocab.txt").write_text(default_vocabulary().render(), encoding="utf-8")
    (out / "ui_vocab.txt").write_text("".join(f"{n}\n" for n in default_ui_vocabulary().names), encoding="utf-8")
    (out / "corpus.json").write_text(spec.to_json() + "\n", encoding="utf-8")
    write_manifest(out / "manifest.tsv", rows)
    return rows


def write_manifest(path, rows) -> None:
    lines = [MANIFEST_VERSION, "id\tstars\tlabel"]
    lines += [f"{i}\t{s:.2f}\t{lab}" for i, s, lab in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> list[tuple[str, float, int]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != MANIFEST_VERSION:
        raise BundleError(f"{path}: not a '{MANIFEST_VERSION}' manifest")
    rows = []
    for line in lines[2:]:
        if line.strip():
            i, s, lab = line.split("\t")
            rows.append((i, float(s), int(lab)))
    return rows


def corpus_vocabularies(corpus_dir) -> tuple[Vocabulary, UiVocabulary]:
    d = Path(corpus_dir)
    vocab = load_vocabulary((d / "vocab.txt").read_text()) if (d / "vocab.txt").is_file() else default_vocabulary()
    ui = load_ui_vocabulary((d / "ui_vocab.txt").read_text()) if (d / "ui_vocab.txt").is_file() else default_ui_vocabulary()
    return vocab, ui


def large_app_text(rng, n_methods=50, n_instructions=10_000) -> str:
    """A program of roughly ``n_instructions`` spread over ``n_methods``."""
    names = [f"m{j}" for j in range(n_methods)]
    per = n_instructions // n_methods - 2
    parts = []
    for j, name in enumerate(names):
        w = ProgramWriter(rng, np.zeros(len(EXEC_TYPES)), call_rate=0.02)
        parts.append(w.method(name, per, names[j + 1:]))
    return "".join(parts)
