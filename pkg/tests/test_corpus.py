import dataclasses
import json

import pytest

from aumfilter.corpus import (
    Dataset,
    DatasetError,
    LabeledSample,
    LabelSpace,
    load_dataset,
    save_dataset,
)

from conftest import make_dataset, random_dataset


def test_label_space_requires_two_classes():
    with pytest.raises(DatasetError):
        LabelSpace(num_classes=1)


def test_fake_class_sits_at_highest_index():
    space = LabelSpace(num_classes=3).with_fake_class()
    assert space.effective_num_classes == 4
    assert space.fake_class_index == 3
    with pytest.raises(DatasetError):
        LabelSpace(num_classes=3).fake_class_index


def test_load_tsv_infers_binary_labels(tmp_path):
    path = tmp_path / "data.tsv"
    path.write_text("id\ttext\tlabel\na\thello world\t0\nb\tbye\t1\nc\tmore\t0\n")
    ds = load_dataset(path)
    assert len(ds) == 3
    assert ds.label_space.num_classes == 2
    assert [s.label for s in ds.samples] == [0, 1, 0]
    assert all(s.original_label == s.label for s in ds.samples)
    assert all(not s.flags for s in ds.samples)


def test_load_rejects_label_out_of_range(tmp_path):
    path = tmp_path / "data.tsv"
    path.write_text("id\ttext\tlabel\na\thello\t0\nb\tbye\t5\n")
    with pytest.raises(DatasetError, match="line 3"):
        load_dataset(path, num_classes=2)


def test_jsonl_and_tsv_encodings_load_equal(tmp_path):
    # Round-trip oracle: same records through both formats, field by field.
    tsv = tmp_path / "data.tsv"
    jsonl = tmp_path / "data.jsonl"
    tsv.write_text("id\ttext\tlabel\na\tone two\t0\nb\tthree\t1\n")
    jsonl.write_text(
        json.dumps({"id": "a", "text": "one two", "label": 0})
        + "\n"
        + json.dumps({"id": "b", "text": "three", "label": 1})
        + "\n"
    )
    ds_tsv = load_dataset(tsv)
    ds_jsonl = load_dataset(jsonl)
    assert len(ds_tsv) == len(ds_jsonl)
    for a, b in zip(ds_tsv.samples, ds_jsonl.samples):
        assert (a.id, a.text, a.label, a.original_label, a.flags) == (
            b.id,
            b.text,
            b.label,
            b.original_label,
            b.flags,
        )


def test_save_empty_dataset_is_header_only_tsv(tmp_path):
    ds = Dataset(samples=(), label_space=LabelSpace(2))
    path = tmp_path / "empty.tsv"
    save_dataset(ds, path)
    assert path.read_text() == "id\ttext\tlabel\n"
    assert len(load_dataset(path)) == 0


def test_jsonl_carries_flags(tmp_path):
    sample = LabeledSample(id="a", text="hi", label=0, original_label=1, flags=frozenset({"flipped"}))
    ds = Dataset(samples=(sample,), label_space=LabelSpace(2))
    path = tmp_path / "d.jsonl"
    save_dataset(ds, path)
    obj = json.loads(path.read_text())
    assert obj["flags"] == ["flipped"]
    assert obj["original_label"] == 1


def test_jsonl_round_trip_exact(tmp_path, rng):
    ds = random_dataset(rng, 40)
    samples = list(ds.samples)
    samples[3] = samples[3].with_label(1 - samples[3].label, "noise_injected")
    samples[7] = samples[7].with_flags("flipped")
    object.__setattr__(samples[9], "cluster_id", "k01")
    ds = ds.replace_samples(samples)
    path = tmp_path / "d.jsonl"
    save_dataset(ds, path)
    loaded = load_dataset(path)
    assert loaded.samples == ds.samples


def test_tsv_round_trip_drops_flags_with_warning(tmp_path):
    sample = LabeledSample(id="a", text="hi", label=0, original_label=1, flags=frozenset({"flipped"}))
    ds = Dataset(samples=(sample,), label_space=LabelSpace(2))
    path = tmp_path / "d.tsv"
    with pytest.warns(UserWarning, match="drops"):
        save_dataset(ds, path)
    loaded = load_dataset(path)
    assert loaded.samples[0].label == 0
    assert loaded.samples[0].original_label == 0
    assert not loaded.samples[0].flags


def test_save_twice_is_byte_stable(tmp_path, rng):
    ds = random_dataset(rng, 1000)
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_dataset(ds, a)
    save_dataset(ds, b)
    assert a.read_bytes() == b.read_bytes()


def test_load_rejects_duplicate_ids(tmp_path):
    path = tmp_path / "d.tsv"
    path.write_text("id\ttext\tlabel\na\tx\t0\na\ty\t1\n")
    with pytest.raises(DatasetError, match="duplicate id 'a'"):
        load_dataset(path)


def test_load_rejects_malformed_row_with_line_number(tmp_path):
    path = tmp_path / "d.tsv"
    path.write_text("id\ttext\tlabel\na\tok\t0\nb\ttoo\tmany\tfields\t1\n")
    with pytest.raises(DatasetError, match="line 3"):
        load_dataset(path)


def test_load_rejects_empty_file(tmp_path):
    path = tmp_path / "d.tsv"
    path.write_text("")
    with pytest.raises(DatasetError, match="empty"):
        load_dataset(path)
    path2 = tmp_path / "d.jsonl"
    path2.write_text("")
    with pytest.raises(DatasetError, match="empty"):
        load_dataset(path2)


def test_load_preserves_file_order(tmp_path, rng):
    ds = random_dataset(rng, 60)
    path = tmp_path / "d.jsonl"
    save_dataset(ds, path)
    loaded = load_dataset(path)
    assert [s.id for s in loaded.samples] == [s.id for s in ds.samples]


def test_tsv_rejects_embedded_tab_on_save(tmp_path):
    sample = LabeledSample(id="a", text="has\ttab", label=0, original_label=0)
    ds = Dataset(samples=(sample,), label_space=LabelSpace(2))
    with pytest.raises(DatasetError, match="tab"):
        save_dataset(ds, tmp_path / "d.tsv")


def test_jsonl_rejects_unknown_flags(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text(json.dumps({"id": "a", "text": "x", "label": 0, "flags": ["bogus"]}) + "\n")
    with pytest.raises(DatasetError, match="bogus"):
        load_dataset(path)


def test_jsonl_rejects_invalid_json_with_line_number(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text('{"id": "a", "text": "x", "label": 0}\n{oops\n')
    with pytest.raises(DatasetError, match="line 2"):
        load_dataset(path)


def test_validate_rejects_fake_label_at_rest():
    sample = LabeledSample(id="a", text="x", label=2, original_label=0)
    ds = Dataset(samples=(sample,), label_space=LabelSpace(2))
    with pytest.raises(DatasetError):
        ds.validate()


def test_make_dataset_helper_round_trips(tmp_path):
    ds = make_dataset([0, 1, 1, 0])
    path = tmp_path / "d.jsonl"
    save_dataset(ds, path)
    assert load_dataset(path).samples == ds.samples
