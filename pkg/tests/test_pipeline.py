import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lowrating import nn
from lowrating.corpus import CorpusSpec, corpus_vocabularies, gen_corpus, generate_app, write_bundle
from lowrating.pipeline import (
    EvalReport, LeakageAudit, bundle_from_text, bundle_to_text, confusion, exec_inputs, extract_features,
    fold_partition, kfold_evaluate, labels_of, load_records, metrics, predict, pretrain, train_bundle, train_fusion,
    ui_inputs,
)

SMALL = {"hidden": (64,)}
FAST = nn.Hyper(batch_size=32, epochs=10, lr=0.01)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    spec = CorpusSpec(seed=11, n_apps=240, margin=2.0)
    gen_corpus(spec, out)
    vocab, ui = corpus_vocabularies(out)
    return spec, out, load_records(out, vocab, ui), vocab, ui


def test_metrics_formula():
    m = metrics(3, 1, 0, 6)
    assert m == {"accuracy": 0.9, "precision": 0.75, "recall": 1.0}
    assert metrics(*confusion([0, 1, 0], [0, 1, 0])) == {"accuracy": 1.0, "precision": 1.0, "recall": 1.0}
    assert metrics(0, 0, 2, 3)["precision"] == 0.0  # nothing predicted low


def test_confusion_uses_low_as_positive():
    assert confusion([0, 0, 1, 1], [0, 1, 0, 1]) == (1, 1, 1, 1)
    assert confusion([0, 0, 0], [0, 0, 1]) == (2, 1, 0, 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 300), st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_fold_partition_is_exact(n, k, seed):
    k = min(k, n)
    folds = fold_partition(n, k, np.random.default_rng(seed))
    flat = np.concatenate(folds)
    assert sorted(flat.tolist()) == list(range(n))
    sizes = [len(f) for f in folds]
    assert max(sizes) - min(sizes) <= 1 and len(folds) == k


def test_input_shapes(corpus):
    _, _, records, vocab, ui = corpus
    assert exec_inputs(records[:4]).shape == (4, 3, vocab.size)
    assert ui_inputs(records[:4]).shape == (4, 2, ui.slots)


def test_pretrain_errors(corpus):
    _, _, records, _, _ = corpus
    with pytest.raises(ValueError, match="no training"):
        pretrain("exec", [], FAST, SMALL)
    lows = [r for r in records if r.label == 0][:20]
    with pytest.raises(ValueError, match="single class"):
        pretrain("exec", lows, FAST, SMALL)


def test_exec_pretraining_separates_planted_classes(corpus):
    _, _, records, _, _ = corpus
    train, test = records[:180], records[180:]
    model = pretrain("exec", train, FAST, SMALL)
    pred = model.run(exec_inputs(test)).probs.argmax(axis=1)
    assert np.mean(pred == labels_of(test)) >= 0.9


def test_feature_extraction(corpus):
    _, _, records, _, _ = corpus
    model = pretrain("ui", records[:100], nn.Hyper(batch_size=32, epochs=2))
    f = extract_features(model, records[:10])
    assert f.shape == (10, 50)
    assert (np.abs(f) < 1).all()
    assert np.array_equal(f, extract_features(model, records[:10]))
    singles = np.concatenate([extract_features(model, [r]) for r in records[:10]])
    assert np.allclose(singles, f, atol=1e-12)


def test_fusion_errors():
    a = np.zeros((4, 50))
    with pytest.raises(nn.ShapeError):
        train_fusion(a, np.zeros((3, 50)), [0, 1, 0, 1])
    with pytest.raises(ValueError, match="no training"):
        train_fusion(np.zeros((0, 50)), np.zeros((0, 50)), [])


def test_bundle_round_trip_and_predict(corpus, tmp_path):
    spec, out, records, vocab, ui = corpus
    bundle = train_bundle(records, seed=3, hyper=FAST, arch=SMALL)
    text = bundle_to_text(bundle)
    again = bundle_from_text(text)
    assert bundle_to_text(again) == text
    assert np.array_equal(again.probs(records[:5]), bundle.probs(records[:5]))
    assert train_bundle(records, seed=3, hyper=FAST, arch=SMALL).fusion.meta == bundle.fusion.meta

    # a fresh member of the low family, never seen in training
    i = next(i for i in range(spec.n_apps, spec.n_apps + 100) if generate_app(spec, i)[1] < 3)
    app_id, stars, program, layouts = generate_app(spec, i)
    write_bundle(tmp_path / app_id, app_id, stars, program, layouts)
    cls, probs = predict(bundle, tmp_path / app_id, vocab, ui)
    assert cls == 0 and probs[0] > 0.5
    assert np.array_equal(predict(bundle, tmp_path / app_id, vocab, ui)[1], probs)


def test_kfold_report_and_leakage_audit(corpus):
    _, _, records, _, _ = corpus
    audit = LeakageAudit()
    rep = kfold_evaluate(records[:60], k=3, repeats=2, config="full", seed=7, hyper=nn.Hyper(epochs=1),
                         arch={"hidden": (8,)}, audit=audit)
    assert len(rep.folds) == 6
    assert audit.violations == []
    stages = {t[2] for t in audit.touched}
    assert {"exec", "ui", "fusion", "exec-standardize", "ui-standardize"} <= stages
    ids = [r.app_id for r in records[:60]]
    for repeat, fold, stage, touched in audit.touched:
        assert len(touched) == 40  # exactly the training folds
    text = rep.to_text()
    assert EvalReport.from_text(text).to_text() == text
    assert rep.table().splitlines()[0] == "metric\tmean\tstddev"
    assert set(ids) >= set().union(*(t[3] for t in audit.touched))


def test_leakage_audit_flags_test_ids():
    audit = LeakageAudit()
    audit.begin(0, 0, ["a"])
    hook = audit.stage("exec", ["a", "b"])
    hook(np.array([1]))
    assert audit.violations == []
    hook(np.array([0]))
    assert len(audit.violations) == 1
    audit.fitted("std", ["a"])
    assert len(audit.violations) == 2


def test_kfold_errors(corpus):
    _, _, records, _, _ = corpus
    with pytest.raises(ValueError, match="at least"):
        kfold_evaluate(records[:5], k=10)
    with pytest.raises(ValueError, match="unknown config"):
        kfold_evaluate(records, config="nope")


@pytest.mark.parametrize("config", ["exec-only", "ui-only", "bow-dense", "bow-conv"])
def test_single_channel_configs_run(corpus, config):
    _, _, records, _, _ = corpus
    rep = kfold_evaluate(records[:40], k=2, repeats=1, config=config, hyper=nn.Hyper(epochs=1),
                         arch={"hidden": (8,)})
    assert 0.0 <= rep.mean["accuracy"] <= 1.0
