"""Command-line entry point.

Exit status: 0 success, 1 usage error, 2 input error (unreadable or malformed
bundles, vocabularies, models), 3 internal invariant violation (for example an
oracle mismatch).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import nn
from .cfg import AnalysisError, analyze_method, dump_cfg
from .corpus import BundleError, CorpusSpec, corpus_vocabularies, gen_corpus, read_bundle, read_manifest
from .defaults import default_ui_vocabulary
from .formats import VECTOR_VERSION, fmt, vector_line
from .ir import ParseError, Vocabulary, build_call_graph, load_vocabulary
from .layout import LayoutError, UiVocabulary, layout_vector, load_ui_vocabulary
from .oracles import oracle_layout_vector, oracle_semantic_vector
from .pipeline import (
    CONFIGS, ModelBundle, analyze_app, bundle_from_text, bundle_to_text, extract_features, kfold_evaluate,
    labels_of, load_records, predict, pretrain, stage_seeds, train_fusion,
)
from .semvec import inter_vector

log = logging.getLogger("lowrating")

# summaries and inlined recounts add the same terms in different orders
ORACLE_TOL = 1e-9

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_INVARIANT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class InvariantError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- helpers


def _read_text(path, what: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise BundleError(f"{path}: cannot read {what}: {exc.strerror or exc}") from None


def _vocabs(args, corpus_dir=None, bundle=None) -> tuple[Vocabulary | None, UiVocabulary]:
    """Explicit flags win, then the corpus (or the bundle's parent corpus) files.

    A ``None`` executable vocabulary lets the program's inline list or the
    built-in default apply.
    """
    vocab = ui = None
    if args.vocab:
        vocab = load_vocabulary(_read_text(args.vocab, "vocabulary"))
    if args.ui_vocab:
        ui = load_ui_vocabulary(_read_text(args.ui_vocab, "UI vocabulary"))
    home = Path(corpus_dir) if corpus_dir else (Path(bundle).parent if bundle else None)
    if home is not None and (vocab is None or ui is None):
        if (home / "vocab.txt").is_file() or (home / "ui_vocab.txt").is_file():
            cv, cu = corpus_vocabularies(home)
            if vocab is None and (home / "vocab.txt").is_file():
                vocab = cv
            ui = ui or cu
    return vocab, ui or default_ui_vocabulary()


def _hyper(args, seed: int) -> nn.Hyper:
    return nn.Hyper(batch_size=args.batch_size, epochs=args.epochs, lr=args.lr, seed=seed)


def _arch(args) -> dict | None:
    if args.hidden is None:
        return None
    hidden = tuple(int(v) for v in args.hidden.split(",") if v.strip())
    return {"hidden": hidden}


def _emit(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _require_out(args) -> Path:
    if not args.out:
        raise UsageError("--out is required")
    return Path(args.out)


def _load_model(path) -> nn.Model:
    text = _read_text(path, "model")
    try:
        return nn.model_from_text(text)
    except (ValueError, KeyError) as exc:
        raise BundleError(f"{path}: {exc}") from None


# ---------------------------------------------------------------- commands


def cmd_analyze(args) -> int:
    vocab, ui = _vocabs(args, bundle=args.bundle)
    app, vocab = read_bundle(args.bundle, vocab)
    if args.dump_cfg:
        for name in sorted(app.program.methods):
            sys.stdout.write(dump_cfg(name, analyze_method(app.program.methods[name])))
    rec = analyze_app(app, vocab, ui)
    lines = [f"app {app.app_id} stars {app.stars:.2f} label {rec.label}", "semantic"]
    for k, (f, l, b) in enumerate(rec.semantic):
        if f > 0:
            lines.append(f"  {vocab.name(k + 1)}\t({int(f)}, {fmt(l)}, {fmt(b)})")
    lines.append("layout")
    names = list(ui.names) + ["<legacy>", "<custom>"]
    for k, (n, d) in enumerate(rec.layout):
        if n > 0:
            lines.append(f"  {names[k]}\t({int(n)}, {fmt(d)})")
    sys.stdout.write("\n".join(lines) + "\n")
    if args.out:
        Path(args.out).write_text(VECTOR_VERSION + "\n" + vector_line(rec.app_id, rec.label, rec.semantic, rec.layout) + "\n")
    return EXIT_OK


def cmd_gen_corpus(args) -> int:
    out = _require_out(args)
    if args.spec:
        spec = CorpusSpec.from_json(_read_text(args.spec, "corpus spec"))
    else:
        spec = CorpusSpec()
    overrides = {"seed": args.seed}
    if args.n_apps is not None:
        overrides["n_apps"] = args.n_apps
    if args.margin is not None:
        overrides["margin"] = args.margin
    spec = CorpusSpec.from_json(json.dumps({**json.loads(spec.to_json()), **overrides}))
    rows = gen_corpus(spec, out)
    low = sum(1 for _, _, lab in rows if lab == 0)
    print(f"wrote {len(rows)} apps to {out} ({low} low, {len(rows) - low} not-low)")
    return EXIT_OK


def _records(args):
    if not args.corpus:
        raise UsageError("--corpus is required")
    vocab, ui = _vocabs(args, corpus_dir=args.corpus)
    if vocab is None:
        vocab, _ = corpus_vocabularies(args.corpus)
    return load_records(args.corpus, vocab, ui)


def _cmd_pretrain(kind: str, args) -> int:
    out = _require_out(args)
    records = _records(args)
    seed = stage_seeds(args.seed)[0 if kind == "exec" else 1]
    arch = _arch(args) if kind == "exec" else None
    model = pretrain(kind, records, _hyper(args, seed), arch)
    out.write_text(nn.model_to_text(model), encoding="utf-8")
    print(f"{kind} model trained on {len(records)} apps, final loss {model.meta['losses'][-1]:.9f}")
    return EXIT_OK


def cmd_pretrain_exec(args) -> int:
    return _cmd_pretrain("exec", args)


def cmd_pretrain_ui(args) -> int:
    return _cmd_pretrain("ui", args)


def cmd_train_fusion(args) -> int:
    out = _require_out(args)
    if not args.exec_model or not args.ui_model:
        raise UsageError("--exec-model and --ui-model are required")
    exec_m, ui_m = _load_model(args.exec_model), _load_model(args.ui_model)
    records = _records(args)
    fusion = train_fusion(extract_features(exec_m, records), extract_features(ui_m, records), labels_of(records),
                          _hyper(args, stage_seeds(args.seed)[2]))
    out.write_text(bundle_to_text(ModelBundle(exec_m, ui_m, fusion)), encoding="utf-8")
    print(f"fusion model trained on {len(records)} apps, final loss {fusion.meta['losses'][-1]:.9f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    if not args.model:
        raise UsageError("--model is required")
    text = _read_text(args.model, "model bundle")
    try:
        bundle = bundle_from_text(text)
    except (ValueError, KeyError) as exc:
        raise BundleError(f"{args.model}: {exc}") from None
    vocab, ui = _vocabs(args, bundle=args.bundle)
    cls, probs = predict(bundle, args.bundle, vocab, ui)
    name = "low" if cls == 0 else "not-low"
    _emit(args, f"class {cls} ({name})\tp_low {fmt(probs[0])}\tp_not_low {fmt(probs[1])}\n")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    records = _records(args)
    report = kfold_evaluate(records, k=args.k, repeats=args.repeats, config=args.config, seed=args.seed,
                            hyper=_hyper(args, 0), arch=_arch(args))
    if args.out:
        Path(args.out).write_text(report.to_text(), encoding="utf-8")
    sys.stdout.write(f"config {args.config}, {args.repeats} x {args.k}-fold, seed {args.seed}\n" + report.table())
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    corpus = Path(args.corpus_dir)
    vocab, ui = _vocabs(args, corpus_dir=corpus)
    rows = read_manifest(corpus / "manifest.tsv")
    bad = []
    for app_id, _, _ in rows:
        app, v = read_bundle(corpus / app_id, vocab)
        got = inter_vector(app.program, v, build_call_graph(app.program)).app
        want = oracle_semantic_vector(app.program, v)
        if np.abs(got - want).max(initial=0.0) >= ORACLE_TOL:
            bad.append(f"{app_id}: semantic vector differs (max {np.abs(got - want).max():.3g})")
        got = layout_vector(app.layouts, ui)
        want = oracle_layout_vector(app.layouts, ui)
        if np.abs(got - want).max(initial=0.0) >= ORACLE_TOL:
            bad.append(f"{app_id}: layout vector differs (max {np.abs(got - want).max():.3g})")
    for line in bad:
        print(line, file=sys.stderr)
    if bad:
        raise InvariantError(f"{len(bad)} mismatches over {len(rows)} apps")
    print(f"oracle-check: {len(rows)} apps, all slots within {ORACLE_TOL:g}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=7)
    common.add_argument("--vocab", help="instruction-type vocabulary file")
    common.add_argument("--ui-vocab", help="UI element vocabulary file")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("-v", "--verbose", action="store_true")

    train = argparse.ArgumentParser(add_help=False)
    train.add_argument("--corpus", help="corpus directory with manifest.tsv")
    train.add_argument("--epochs", type=int, default=10)
    train.add_argument("--batch-size", type=int, default=128)
    train.add_argument("--lr", type=float, default=0.01)
    train.add_argument("--hidden", help="comma-separated hidden widths for the executable model (default 1000,1000)")

    p = _Parser(prog="lowrating", description="Static low-rating app classifier.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("analyze", parents=[common], help="print semantic and layout vectors of a bundle")
    s.add_argument("bundle")
    s.add_argument("--dump-cfg", action="store_true", help="also dump per-method CFG, dominators and depths")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("gen-corpus", parents=[common], help="generate a synthetic planted-signal corpus")
    s.add_argument("--n-apps", type=int)
    s.add_argument("--margin", type=float)
    s.add_argument("--spec", help="corpus spec JSON (as written to corpus.json)")
    s.set_defaults(func=cmd_gen_corpus)

    for name, fn in (("pretrain-exec", cmd_pretrain_exec), ("pretrain-ui", cmd_pretrain_ui)):
        s = sub.add_parser(name, parents=[common, train], help=f"train the {name[9:]} model")
        s.set_defaults(func=fn)

    s = sub.add_parser("train-fusion", parents=[common, train], help="train the fusion model, write a model bundle")
    s.add_argument("--exec-model")
    s.add_argument("--ui-model")
    s.set_defaults(func=cmd_train_fusion)

    s = sub.add_parser("predict", parents=[common], help="classify one app bundle")
    s.add_argument("bundle")
    s.add_argument("--model", help="model bundle from train-fusion")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", parents=[common, train], help="repeated k-fold evaluation")
    s.add_argument("--config", choices=CONFIGS, default="full")
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--repeats", type=int, default=10)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("oracle-check", parents=[common], help="compare summaries against the inlining oracles")
    s.add_argument("corpus_dir")
    s.set_defaults(func=cmd_oracle_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"lowrating {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantError as exc:
        print(f"lowrating {args.command}: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ParseError, LayoutError, BundleError, AnalysisError, nn.ShapeError) as exc:
        print(f"lowrating {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, OSError) as exc:
        print(f"lowrating {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
