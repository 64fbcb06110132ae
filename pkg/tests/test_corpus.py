import json
import shutil

import pytest

from hwfix.corpus import (CweClass, SourceTag, Variation, default_manifest, dump_corpus, get_bug,
                          instructions_for, load_corpus, record_to_json)
from hwfix.errors import CorpusError, IncompleteVariations, MissingFile, SpanOutOfRange
from hwfix.hdl import LineSpan


@pytest.fixture
def manifest_copy(tmp_path):
    src = default_manifest().parent
    dst = tmp_path / "corpus"
    shutil.copytree(src, dst)
    return dst / "manifest.json"


def edit(manifest, fn):
    data = json.loads(manifest.read_text())
    fn(data)
    manifest.write_text(json.dumps(data))


def test_shipped_manifest(corpus):
    assert [b.id for b in corpus] == list(range(1, 11))
    bug3 = get_bug(corpus, 3)
    assert bug3.design_name == "Grant Access"
    assert bug3.cwe is CweClass.CWE1280
    assert bug3.bug_span == LineSpan(11, 12)


def test_every_bug_is_complete(corpus):
    for bug in corpus:
        assert bug.stop_keywords[0] == "endmodule"
        assert bug.buggy_file in bug.dut_files
        assert bug.gold_repair is not None
        for v in Variation:
            assert instructions_for(bug, v).fix_instruction[-1] == "// FIX:"
    tags = {b.id: b.source_tag for b in corpus}
    assert {tags[i] for i in (8, 9, 10)} == {SourceTag.HACKDAC}
    assert {get_bug(corpus, i).security_oracle.kind for i in (8, 9, 10)} == {"detector_rescan"}


def test_empty_manifest(tmp_path):
    path = tmp_path / "m.json"
    path.write_text('{"bugs": []}')
    assert load_corpus(path) == []


def test_missing_variation_e(manifest_copy):
    edit(manifest_copy, lambda d: d["bugs"][9]["instructions"].pop("e"))
    with pytest.raises(IncompleteVariations):
        load_corpus(manifest_copy)
    # a caller that only needs a..d still loads it
    bugs = load_corpus(manifest_copy, variations="abcd")
    with pytest.raises(IncompleteVariations):
        instructions_for(get_bug(bugs, 10), Variation.E)


def test_missing_file(manifest_copy):
    (manifest_copy.parent / "bug09_dma" / "dma.sv").unlink()
    with pytest.raises(MissingFile):
        load_corpus(manifest_copy)


def test_span_out_of_range(manifest_copy):
    edit(manifest_copy, lambda d: d["bugs"][0].update(bug_span=[8, 400]))
    with pytest.raises(SpanOutOfRange):
        load_corpus(manifest_copy)


def test_duplicate_ids(manifest_copy):
    edit(manifest_copy, lambda d: d["bugs"][1].update(id=1))
    with pytest.raises(CorpusError):
        load_corpus(manifest_copy)


def test_uncommented_instruction_rejected(manifest_copy):
    edit(manifest_copy, lambda d: d["bugs"][0]["instructions"]["b"].update(bug=["BUG: plain"]))
    with pytest.raises(CorpusError):
        load_corpus(manifest_copy)


def test_instructions_examples(corpus):
    bug3 = get_bug(corpus, 3)
    a = instructions_for(bug3, Variation.A)
    assert (a.bug_instruction, a.fix_instruction) == (("// BUG:",), ("// FIX:",))
    c = instructions_for(bug3, "c")
    assert " ".join(line.strip() for line in c.bug_instruction) == \
        "// BUG: Access Control Check Implemented after // asset is Accessed."
    assert c.fix_instruction == ("// Ensure that access is granted before data is ", "// accessed.", "// FIX:")
    d10 = instructions_for(get_bug(corpus, 10), Variation.D)
    assert any("Write a default case statement" in line for line in d10.fix_instruction)


def test_variation_a_shared(corpus):
    assert len({instructions_for(b, "a") for b in corpus}) == 1


def test_round_trip(manifest_copy):
    first = load_corpus(manifest_copy)
    out = manifest_copy.with_name("dumped.json")
    dump_corpus(first, out)
    again = load_corpus(out)
    assert again == first
    assert [record_to_json(b) for b in again] == [record_to_json(b) for b in first]


def test_variation_parse():
    assert Variation.parse("C") is Variation.C
    with pytest.raises(ValueError):
        Variation.parse("f")
