import json
from itertools import combinations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from citeintent.dataset_io import (
    CitationInstance,
    Dataset,
    LabelSchema,
    get_schema,
    load_dataset,
    parse_records,
    sample_few_shot,
    save_dataset,
)
from citeintent.errors import ConfigError, DataError


def write_jsonl(path, records):
    path.write_text("".join((r if isinstance(r, str) else json.dumps(r)) + "\n" for r in records))
    return path


def test_builtin_schemas():
    assert get_schema("acl_arc").labels == ("background", "motivation", "extends", "uses", "compare_contrast", "future")
    assert get_schema("ACL-ARC").name == "acl_arc"
    assert get_schema("scicite").labels == ("background", "method", "result")
    with pytest.raises(ConfigError):
        get_schema("imdb")


def test_schema_rejects_duplicates():
    with pytest.raises(DataError):
        LabelSchema("bad", ("a", "a"))


@pytest.mark.parametrize("raw,label", [
    ("CompareOrContrast", "compare_contrast"),
    ("Background", "background"),
    ("Extends", "extends"),
])
def test_acl_aliases(acl_arc, raw, label):
    assert acl_arc.canonical(raw) == label


def test_scicite_alias(scicite):
    assert scicite.canonical("resultComparison") == "result"


def test_load_single_record(tmp_path, scicite):
    path = write_jsonl(tmp_path / "d.jsonl", [{"string": "We follow [3].", "label": "background"}])
    ds = load_dataset(path, scicite, "train")
    assert len(ds) == 1
    assert ds.instances[0].text == "We follow [3]."
    assert ds.instances[0].label == "background"


def test_empty_file(tmp_path, scicite):
    (tmp_path / "e.jsonl").write_text("")
    assert len(load_dataset(tmp_path / "e.jsonl", scicite, "test")) == 0


def test_count_equals_line_count(data_dir, scicite):
    n_lines = sum(1 for _ in (data_dir / "fixture_test.jsonl").open())
    assert len(load_dataset(data_dir / "fixture_test.jsonl", scicite, "test")) == n_lines == 30


def test_malformed_line_reports_number(tmp_path, scicite):
    path = write_jsonl(tmp_path / "d.jsonl", [{"string": "a b", "label": "method"}, "{not json"])
    with pytest.raises(DataError, match=r":2: malformed"):
        load_dataset(path, scicite, "train")


def test_unknown_label(tmp_path, scicite):
    path = write_jsonl(tmp_path / "d.jsonl", [{"string": "a b", "label": "uses"}])
    with pytest.raises(DataError, match="unknown label"):
        load_dataset(path, scicite, "train")


@pytest.mark.parametrize("record,field", [({"label": "method"}, "string"), ({"string": "text"}, "label")])
def test_missing_field(tmp_path, scicite, record, field):
    path = write_jsonl(tmp_path / "d.jsonl", [record])
    with pytest.raises(DataError, match=f"missing required field '{field}'"):
        load_dataset(path, scicite, "train")


def test_acl_arc_release_field_names(tmp_path, acl_arc):
    path = write_jsonl(tmp_path / "d.jsonl", [{"text": "We extend [2].", "intent": "Extends", "extra": 1}])
    assert load_dataset(path, acl_arc, "train").instances[0].label == "extends"


def test_whitespace_normalised(tmp_path, scicite):
    path = write_jsonl(tmp_path / "d.jsonl", [{"string": "  We\tfollow \n [3]. ", "label": "method"}])
    assert load_dataset(path, scicite, "dev").instances[0].text == "We follow [3]."


def test_duplicate_ids(tmp_path, scicite):
    recs = [{"id": "x", "string": "a", "label": "method"}, {"id": "x", "string": "b", "label": "method"}]
    with pytest.raises(DataError, match="duplicate"):
        load_dataset(write_jsonl(tmp_path / "d.jsonl", recs), scicite, "train")


def test_unreadable_path(tmp_path, scicite):
    with pytest.raises(DataError):
        load_dataset(tmp_path / "missing.jsonl", scicite, "train")


def test_round_trip(tmp_path, data_dir, scicite):
    ds = load_dataset(data_dir / "fixture_test.jsonl", scicite, "test")
    save_dataset(ds, tmp_path / "out.jsonl")
    again = load_dataset(tmp_path / "out.jsonl", scicite, "test")
    assert again == ds
    save_dataset(again, tmp_path / "out2.jsonl")
    assert (tmp_path / "out.jsonl").read_bytes() == (tmp_path / "out2.jsonl").read_bytes()


def _dataset(schema, counts):
    instances = []
    for label, n in counts.items():
        for i in range(n):
            instances.append(CitationInstance(f"{label} sentence {i}", label, f"{label}-{i}"))
    return Dataset(schema, "train", tuple(instances))


def test_few_shot_five_per_label(scicite):
    ds = _dataset(scicite, {"background": 20, "method": 12, "result": 9})
    out = sample_few_shot(ds, 5, seed=3)
    assert len(out) == 15
    assert out.label_counts() == {"background": 5, "method": 5, "result": 5}


def test_few_shot_deterministic(scicite):
    ds = _dataset(scicite, {"background": 20, "method": 12, "result": 9})
    assert sample_few_shot(ds, 1, 11) == sample_few_shot(ds, 1, 11)


def test_few_shot_scarce_label_kept_whole(scicite):
    ds = _dataset(scicite, {"background": 20, "method": 3, "result": 9})
    out = sample_few_shot(ds, 10, 0)
    methods = {inst.instance_id for inst in out if inst.label == "method"}
    # enumerate every possible selection of min(10, 3) = 3 of the 3 instances: exactly one, the full set
    candidates = [set(c) for c in combinations(["method-0", "method-1", "method-2"], 3)]
    assert candidates == [methods]


def test_few_shot_errors(scicite):
    ds = _dataset(scicite, {"background": 2, "method": 2, "result": 2})
    with pytest.raises(ConfigError):
        sample_few_shot(ds, 0, 0)
    with pytest.raises(DataError, match="absent"):
        sample_few_shot(_dataset(scicite, {"background": 2, "method": 2}), 1, 0)
    with pytest.raises(DataError):
        sample_few_shot(Dataset(scicite, "test", ds.instances), 1, 0)


def test_few_shot_full_k_is_identity(scicite):
    ds = _dataset(scicite, {"background": 4, "method": 2, "result": 3})
    assert sample_few_shot(ds, 100, 5) == ds


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 12), min_size=3, max_size=3), st.integers(1, 15), st.integers(0, 10**6))
def test_few_shot_stratification_property(counts, k, seed):
    schema = get_schema("scicite")
    ds = _dataset(schema, dict(zip(schema.labels, counts)))
    out = sample_few_shot(ds, k, seed)
    assert out.label_counts() == {lab: min(k, n) for lab, n in zip(schema.labels, counts)}
    assert set(out.instances) <= set(ds.instances)
    assert out == sample_few_shot(ds, k, seed)


def test_parse_records_unlabelled(scicite):
    ds = parse_records(['{"string": "x y", "label": null}'], scicite, "test")
    assert ds.instances[0].label is None
