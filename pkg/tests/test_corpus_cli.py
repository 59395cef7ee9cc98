import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lowrating import cli
from lowrating.cfg import analyze_method
from lowrating.corpus import (
    BundleError, CorpusSpec, class_profiles, gen_corpus, label_for, read_bundle, read_manifest,
)
from lowrating.layout import reference_order


def _tree(path):
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("c") / "corpus"
    gen_corpus(CorpusSpec(seed=7, n_apps=100), out)
    return out


def test_regeneration_is_byte_identical(small_corpus, tmp_path):
    gen_corpus(CorpusSpec(seed=7, n_apps=100), tmp_path / "again")
    assert _tree(small_corpus) == _tree(tmp_path / "again")


def test_manifest_and_labels(small_corpus):
    rows = read_manifest(small_corpus / "manifest.tsv")
    assert len(rows) == 100
    for app_id, stars, label in rows:
        assert label == label_for(stars)
        assert (1 <= stars < 3) if label == 0 else (3 < stars <= 5)
    assert (small_corpus / "manifest.tsv").read_text().startswith("lowrating-corpus 1\n")


def test_generated_apps_are_reducible_and_reference_acyclic(small_corpus):
    for app_id, _, _ in read_manifest(small_corpus / "manifest.tsv"):
        app, _ = read_bundle(small_corpus / app_id)
        for m in app.program.methods.values():
            analyze_method(m)  # raises on irreducible flow
        reference_order(app.layouts)  # raises on cycles


def test_class_profiles_follow_margin():
    same = class_profiles(CorpusSpec(margin=0.0))
    assert np.array_equal(same[0].type_logits, same[1].type_logits)
    assert same[0].layout_depth == same[1].layout_depth
    apart = class_profiles(CorpusSpec(margin=1.0))
    assert not np.array_equal(apart[0].type_logits, apart[1].type_logits)


def test_spec_json_round_trip():
    spec = CorpusSpec(seed=3, n_apps=9, notes={"why": "test"})
    assert CorpusSpec.from_json(spec.to_json()) == spec


@settings(max_examples=100)
@given(st.floats(1.0, 5.0))
def test_label_rule(stars):
    assert label_for(stars) == (0 if stars < 3.0 else 1)


def test_boundary_star_is_not_low():
    assert label_for(3.0) == 1
    assert label_for(2.99) == 0


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(BundleError, match="cannot write"):
        gen_corpus(CorpusSpec(n_apps=1), blocker / "sub")


def test_corrupt_bundles(tmp_path):
    (tmp_path / "b").mkdir()
    with pytest.raises(BundleError, match="missing"):
        read_bundle(tmp_path / "b")
    (tmp_path / "b" / "meta").write_text("stars=7\n")
    (tmp_path / "b" / "program.sir").write_text("method m {\n ret\n}\n")
    with pytest.raises(BundleError, match=r"\[1, 5\]"):
        read_bundle(tmp_path / "b")


# ---------------------------------------------------------------- CLI


def test_analyze_prints_worked_example(program1_dir, capsys):
    assert cli.main(["analyze", str(program1_dir)]) == 0
    out = capsys.readouterr().out
    assert "  add\t(4, 1.500000000, 0.250000000)" in out.splitlines()
    assert "  LinearLayout\t(2, 0.500000000)" in out.splitlines()


def test_analyze_writes_vector_file(program1_dir, tmp_path, capsys):
    from lowrating.formats import read_vectors

    out = tmp_path / "v.txt"
    assert cli.main(["analyze", str(program1_dir), "--out", str(out)]) == 0
    (rec,) = read_vectors(out)
    assert rec["app"] == "program1" and rec["label"] == 0
    assert tuple(rec["semantic"][2]) == (4, 1.5, 0.25)


def test_dump_cfg_flag(program1_dir, capsys):
    assert cli.main(["analyze", str(program1_dir), "--dump-cfg"]) == 0
    out = capsys.readouterr().out
    assert "# method program1" in out and "back: 10->6 12->3" in out


def test_exit_codes(tmp_path, program1_dir, capsys):
    assert cli.main([]) == 1
    assert cli.main(["frobnicate"]) == 1
    assert cli.main(["evaluate", "--k", "x"]) == 1
    assert cli.main(["predict", str(program1_dir)]) == 1  # --model missing
    assert cli.main(["analyze", str(tmp_path / "missing")]) == 2
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "meta").write_text("stars=4\n")
    (bad / "program.sir").write_text("method m {\n  nonsense\n}\n")
    (tmp_path / "model").write_text("garbage\n")
    assert cli.main(["predict", str(bad), "--model", str(tmp_path / "model")]) == 2
    assert cli.main(["analyze", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "line 2" in err and "unknown opcode" in err


def test_oracle_check_command(small_corpus, monkeypatch, capsys):
    assert cli.main(["oracle-check", str(small_corpus)]) == 0
    import lowrating.cli as mod

    real = mod.inter_vector

    def skewed(*a, **kw):
        res = real(*a, **kw)
        res.app[0, 0] += 1
        return res

    monkeypatch.setattr(mod, "inter_vector", skewed)
    assert cli.main(["oracle-check", str(small_corpus)]) == 3


def test_end_to_end_commands(small_corpus, tmp_path, capsys):
    c = str(small_corpus)
    fast = ["--epochs", "2", "--batch-size", "32"]
    e, u, b = (str(tmp_path / n) for n in ("e.m", "u.m", "b.m"))
    assert cli.main(["pretrain-exec", "--corpus", c, "--out", e, "--hidden", "16", *fast]) == 0
    assert cli.main(["pretrain-ui", "--corpus", c, "--out", u, *fast]) == 0
    assert cli.main(["train-fusion", "--corpus", c, "--exec-model", e, "--ui-model", u, "--out", b, *fast]) == 0
    capsys.readouterr()
    assert cli.main(["predict", str(small_corpus / "app00000"), "--model", b]) == 0
    line = capsys.readouterr().out
    assert line.startswith("class ") and "p_low 0." in line


def test_evaluate_twice_gives_identical_reports(small_corpus, tmp_path):
    args = ["evaluate", "--corpus", str(small_corpus), "--seed", "7", "--k", "3", "--repeats", "1",
            "--hidden", "8", "--epochs", "1"]
    assert cli.main(args + ["--out", str(tmp_path / "r1")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "r2")]) == 0
    assert (tmp_path / "r1").read_bytes() == (tmp_path / "r2").read_bytes()


def test_gen_corpus_command(tmp_path, capsys):
    assert cli.main(["gen-corpus", "--out", str(tmp_path / "g"), "--n-apps", "5", "--margin", "0", "--seed", "1"]) == 0
    spec = CorpusSpec.from_json((tmp_path / "g" / "corpus.json").read_text())
    assert (spec.seed, spec.n_apps, spec.margin) == (1, 5, 0.0)
    assert cli.main(["gen-corpus"]) == 1  # --out missing
