"""Analysis-to-prediction pipeline and k-fold evaluation.

Stages: analyze bundles into semantic and layout vectors, pre-train an
executable model and a UI model, extract their 50-unit feature layers, and
train a fusion classifier on the concatenated features. Class 0 is the low
rating class and is the positive class for precision and recall.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import nn
from .corpus import AppBundle, label_for, read_bundle, read_manifest
from .ir import Vocabulary, build_call_graph
from .layout import UiVocabulary, layout_vector
from .semvec import inter_vector

log = logging.getLogger(__name__)

REPORT_VERSION = "lowrating-report 1"
CONFIGS = ("full", "exec-only", "ui-only", "bow-dense", "bow-conv")
METRICS = ("accuracy", "precision", "recall")


@dataclass(frozen=True)
class AppRecord:
    app_id: str
    stars: float
    semantic: np.ndarray  # (N, 3) averaged
    layout: np.ndarray  # (M + 2, 2) averaged

    @property
    def label(self) -> int:
        return label_for(self.stars)


def analyze_app(app: AppBundle, vocab: Vocabulary, ui_vocab: UiVocabulary) -> AppRecord:
    sem = inter_vector(app.program, vocab, build_call_graph(app.program)).app
    lay = layout_vector(app.layouts, ui_vocab)
    return AppRecord(app.app_id, app.stars, sem, lay)


def analyze_bundle(path, vocab: Vocabulary | None, ui_vocab: UiVocabulary) -> tuple[AppRecord, Vocabulary]:
    app, vocab = read_bundle(path, vocab)
    return analyze_app(app, vocab, ui_vocab), vocab


def load_records(corpus_dir, vocab: Vocabulary, ui_vocab: UiVocabulary) -> list[AppRecord]:
    corpus_dir = Path(corpus_dir)
    rows = read_manifest(corpus_dir / "manifest.tsv")
    return [analyze_bundle(corpus_dir / app_id, vocab, ui_vocab)[0] for app_id, _, _ in rows]


# ---------------------------------------------------------------- inputs


def exec_inputs(records: Sequence[AppRecord]) -> np.ndarray:
    """(B, 3, N): rows are frequency, loop depth, branch count."""
    return np.stack([r.semantic.T for r in records])


def ui_inputs(records: Sequence[AppRecord]) -> np.ndarray:
    """(B, 2, M + 2): rows are count and depth."""
    return np.stack([r.layout.T for r in records])


def bow_inputs(records: Sequence[AppRecord], flat: bool) -> np.ndarray:
    f = np.stack([r.semantic[:, 0] for r in records])
    return f if flat else f[:, None, :]


def labels_of(records: Sequence[AppRecord]) -> np.ndarray:
    return np.array([r.label for r in records], dtype=np.int64)


def fit_standardizer(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell mean and scale over the batch axis; constant cells get scale 1."""
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale < 1e-8] = 1.0
    return mean, scale


# ---------------------------------------------------------------- stages

KIND_INPUTS: dict[str, Callable] = {
    "exec": exec_inputs,
    "ui": ui_inputs,
    "bow-dense": lambda rs: bow_inputs(rs, flat=True),
    "bow-conv": lambda rs: bow_inputs(rs, flat=False),
}


def kind_spec(kind: str, x: np.ndarray, classes: int = 2, arch: dict | None = None) -> nn.ModelSpec:
    arch = arch or {}
    width = x.shape[-1]
    if kind == "exec":
        return nn.exec_spec(width, classes, **arch)
    if kind == "ui":
        return nn.ui_spec(width, classes, **arch)
    if kind == "bow-dense":
        return nn.bow_dense_spec(width, classes, **arch)
    if kind == "bow-conv":
        return nn.bow_conv_spec(width, classes, **arch)
    raise ValueError(f"unknown model kind {kind!r}")


def fit_model(kind: str, x: np.ndarray, y: np.ndarray, hyper: nn.Hyper, arch: dict | None = None,
              classes: int = 2, audit: Callable | None = None) -> nn.Model:
    if len(x) == 0:
        raise ValueError("no training records")
    if len(np.unique(y)) < 2:
        raise ValueError("training set holds a single class")
    mean, scale = fit_standardizer(x)
    spec = kind_spec(kind, x, classes, arch)
    res = nn.train(spec, (x - mean) / scale, y, hyper, audit=audit)
    return nn.Model(spec, res.params, hyper.seed, mean, scale, {"kind": kind, "losses": res.losses})


def pretrain(kind: str, records: Sequence[AppRecord], hyper: nn.Hyper = nn.Hyper(), arch: dict | None = None,
             audit: Callable | None = None) -> nn.Model:
    """Train the executable (``exec``) or UI (``ui``) model on labeled records."""
    x = KIND_INPUTS[kind](records) if records else np.zeros((0,))
    return fit_model(kind, x, labels_of(records) if records else np.zeros(0, dtype=np.int64), hyper, arch, audit=audit)


def extract_features(model: nn.Model, records_or_inputs) -> np.ndarray:
    """Feature-layer activations in inference mode, shape (B, feature units)."""
    x = records_or_inputs
    if len(x) and isinstance(x[0], AppRecord):
        x = KIND_INPUTS[model.meta.get("kind", "exec")](x)
    return model.run(x).features


def train_fusion(exec_feats: np.ndarray, ui_feats: np.ndarray, labels, hyper: nn.Hyper = nn.Hyper(),
                 hidden=(100, 20), audit: Callable | None = None) -> nn.Model:
    exec_feats = np.asarray(exec_feats)
    ui_feats = np.asarray(ui_feats)
    labels = np.asarray(labels, dtype=np.int64)
    if len(exec_feats) == 0:
        raise ValueError("no training records")
    if exec_feats.ndim != 2 or ui_feats.ndim != 2 or len(exec_feats) != len(ui_feats) or len(labels) != len(exec_feats):
        raise nn.ShapeError("feature blocks and labels must align row for row")
    x = np.concatenate([exec_feats, ui_feats], axis=1)
    if len(np.unique(labels)) < 2:
        raise ValueError("training set holds a single class")
    spec = nn.fusion_spec(x.shape[1], hidden)
    res = nn.train(spec, x, labels, hyper, audit=audit)
    return nn.Model(spec, res.params, hyper.seed, meta={"kind": "fusion", "losses": res.losses})


@dataclass
class ModelBundle:
    exec_model: nn.Model
    ui_model: nn.Model
    fusion: nn.Model

    def probs(self, records: Sequence[AppRecord]) -> np.ndarray:
        fe = extract_features(self.exec_model, records)
        fu = extract_features(self.ui_model, records)
        return self.fusion.run(np.concatenate([fe, fu], axis=1)).probs


BUNDLE_VERSION = "lowrating-bundle 1"


def bundle_to_text(b: ModelBundle) -> str:
    parts = [nn.model_to_text(m) for m in (b.exec_model, b.ui_model, b.fusion)]
    return BUNDLE_VERSION + "\n" + "".join(parts)


def bundle_from_text(text: str) -> ModelBundle:
    lines = text.splitlines()
    if not lines or lines[0].strip() != BUNDLE_VERSION:
        raise ValueError(f"not a '{BUNDLE_VERSION}' file")
    models = [nn.model_from_text("\n".join(lines[i:i + 2])) for i in (1, 3, 5)]
    return ModelBundle(*models)


def predict(bundle: ModelBundle, app_path, vocab: Vocabulary | None, ui_vocab: UiVocabulary) -> tuple[int, np.ndarray]:
    record, _ = analyze_bundle(app_path, vocab, ui_vocab)
    probs = bundle.probs([record])[0]
    return int(np.argmax(probs)), probs


def train_bundle(records: Sequence[AppRecord], seed: int = 7, hyper: nn.Hyper = nn.Hyper(), arch=None) -> ModelBundle:
    seeds = stage_seeds(seed)
    exec_m = pretrain("exec", records, _seeded(hyper, seeds[0]), arch)
    ui_m = pretrain("ui", records, _seeded(hyper, seeds[1]), arch and {k: v for k, v in arch.items() if k != "hidden"})
    fusion = train_fusion(extract_features(exec_m, records), extract_features(ui_m, records), labels_of(records),
                          _seeded(hyper, seeds[2]))
    return ModelBundle(exec_m, ui_m, fusion)


def stage_seeds(*key) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(list(key)).spawn(3)]


def _seeded(hyper: nn.Hyper, seed: int) -> nn.Hyper:
    return nn.Hyper(hyper.batch_size, hyper.epochs, hyper.lr, hyper.momentum, seed)


# ---------------------------------------------------------------- evaluation


def confusion(pred, truth, positive: int = 0) -> tuple[int, int, int, int]:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    tp = int(np.sum((pred == positive) & (truth == positive)))
    fp = int(np.sum((pred == positive) & (truth != positive)))
    fn = int(np.sum((pred != positive) & (truth == positive)))
    tn = int(np.sum((pred != positive) & (truth != positive)))
    return tp, fp, fn, tn


def metrics(tp: int, fp: int, fn: int, tn: int) -> dict[str, float]:
    """Accuracy, precision and recall; an empty denominator yields 0."""
    total = tp + fp + fn + tn
    return {
        "accuracy": (tp + tn) / total if total else 0.0,
        "precision": tp / (tp + fp) if tp + fp else 0.0,
        "recall": tp / (tp + fn) if tp + fn else 0.0,
    }


def fold_partition(n: int, k: int, rng) -> list[np.ndarray]:
    """Random partition of ``range(n)`` into ``k`` folds whose sizes differ by at most one."""
    return [np.sort(f) for f in np.array_split(rng.permutation(n), k)]


class LeakageAudit:
    """Records which records feed each training stage and flags test-fold contact."""

    def __init__(self):
        self.violations: list[str] = []
        self.touched: list[tuple[int, int, str, frozenset]] = []  # (repeat, fold, stage, ids)
        self._test: frozenset = frozenset()
        self._where = (0, 0)

    def begin(self, repeat: int, fold: int, test_ids):
        self._where = (repeat, fold)
        self._test = frozenset(test_ids)

    def stage(self, name: str, ids) -> Callable:
        ids = np.asarray(list(ids))
        seen: set = set()
        self.touched.append((*self._where, name, frozenset()))
        slot = len(self.touched) - 1

        def hook(batch_idx):
            batch = set(ids[batch_idx].tolist())
            bad = batch & self._test
            if bad:
                self.violations.append(f"repeat {self._where[0]} fold {self._where[1]} {name}: {sorted(bad)[:5]}")
            seen.update(batch)
            self.touched[slot] = (*self._where, name, frozenset(seen))

        return hook

    def fitted(self, name: str, ids):
        """Record a non-batched fit (input standardization statistics)."""
        ids = frozenset(ids)
        bad = ids & self._test
        if bad:
            self.violations.append(f"repeat {self._where[0]} fold {self._where[1]} {name}: {sorted(bad)[:5]}")
        self.touched.append((*self._where, name, ids))


@dataclass
class EvalReport:
    config: str
    k: int
    repeats: int
    seed: int
    folds: list[dict] = field(default_factory=list)
    mean: dict[str, float] = field(default_factory=dict)
    std: dict[str, float] = field(default_factory=dict)

    def finalize(self) -> "EvalReport":
        for m in METRICS:
            vals = np.array([f[m] for f in self.folds])
            self.mean[m] = float(vals.mean())
            self.std[m] = float(vals.std())  # population form
        return self

    def table(self) -> str:
        lines = ["metric\tmean\tstddev"]
        lines += [f"{m}\t{self.mean[m]:.9f}\t{self.std[m]:.9f}" for m in METRICS]
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        return REPORT_VERSION + "\n" + json.dumps(asdict(self), sort_keys=True) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        head, _, body = text.partition("\n")
        if head.strip() != REPORT_VERSION:
            raise ValueError(f"not a '{REPORT_VERSION}' file")
        return cls(**json.loads(body))


def _fit_round(config: str, train: Sequence[AppRecord], seeds, hyper: nn.Hyper, arch, audit: LeakageAudit | None):
    ids = [r.app_id for r in train]
    y = labels_of(train)

    def hook(name):
        if audit is None:
            return None
        audit.fitted(f"{name}-standardize", ids)
        return audit.stage(name, ids)

    def fit(kind, seed, kind_arch):
        return fit_model(kind, KIND_INPUTS[kind](train), y, _seeded(hyper, seed), kind_arch, audit=hook(kind))

    ui_arch = {k: v for k, v in (arch or {}).items() if k != "hidden"} or None
    if config == "exec-only":
        return fit("exec", seeds[0], arch), None
    if config == "ui-only":
        return fit("ui", seeds[1], ui_arch), None
    if config == "bow-dense":
        return fit("bow-dense", seeds[0], arch), None
    if config == "bow-conv":
        return fit("bow-conv", seeds[0], arch), None
    exec_m = fit("exec", seeds[0], arch)
    ui_m = fit("ui", seeds[1], ui_arch)
    fusion = train_fusion(
        extract_features(exec_m, train), extract_features(ui_m, train), y, _seeded(hyper, seeds[2]),
        audit=None if audit is None else audit.stage("fusion", ids),
    )
    return ModelBundle(exec_m, ui_m, fusion), None


def _predict_round(config: str, model, test: Sequence[AppRecord]) -> np.ndarray:
    if isinstance(model, ModelBundle):
        return model.probs(test).argmax(axis=1)
    return model.run(KIND_INPUTS[model.meta["kind"]](test)).probs.argmax(axis=1)


def kfold_evaluate(records: Sequence[AppRecord], k: int = 10, repeats: int = 10, config: str = "full", seed: int = 7,
                   hyper: nn.Hyper = nn.Hyper(), arch: dict | None = None, audit: LeakageAudit | None = None,
                   progress: Callable | None = None) -> EvalReport:
    """Repeated random k-fold evaluation; each repeat draws a fresh partition."""
    if config not in CONFIGS:
        raise ValueError(f"unknown config {config!r}; choose from {', '.join(CONFIGS)}")
    if len(records) < k:
        raise ValueError(f"need at least k={k} records, got {len(records)}")
    report = EvalReport(config, k, repeats, seed)
    for rep in range(repeats):
        folds = fold_partition(len(records), k, np.random.default_rng([seed, rep]))
        for f, test_idx in enumerate(folds):
            mask = np.ones(len(records), dtype=bool)
            mask[test_idx] = False
            train = [records[i] for i in np.flatnonzero(mask)]
            test = [records[i] for i in test_idx]
            if audit is not None:
                audit.begin(rep, f, [r.app_id for r in test])
            model, _ = _fit_round(config, train, stage_seeds(seed, rep, f), hyper, arch, audit)
            pred = _predict_round(config, model, test)
            tp, fp, fn, tn = confusion(pred, labels_of(test))
            row = {"repeat": rep, "fold": f, "tp": tp, "fp": fp, "fn": fn, "tn": tn, **metrics(tp, fp, fn, tn)}
            report.folds.append(row)
            if progress is not None:
                progress(row)
    return report.finalize()
