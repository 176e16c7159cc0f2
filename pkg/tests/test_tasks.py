import json

import numpy as np
import pytest

from vitarc.arcgrid import Grid
from vitarc.segmentation import bounding_boxes, connected_components
from vitarc.tasks import (
    TASK_IDS,
    BadSpec,
    Dataset,
    ParseError,
    Sample,
    TaskSpec,
    apply_rule,
    generate_dataset,
    generate_splits,
    make_sample,
    read_dataset,
    sample_to_json,
    write_dataset,
)


@pytest.mark.parametrize("task", TASK_IDS)
def test_generators_are_pure(task):
    spec = TaskSpec(task, max_size=5, seed=2)
    a = [sample_to_json(s) for s in generate_dataset(spec, 20)]
    b = [sample_to_json(s) for s in generate_dataset(spec, 20)]
    assert a == b
    # Each sample depends only on its own index.
    assert sample_to_json(make_sample(spec, 7)) == a[7]


@pytest.mark.parametrize("task", TASK_IDS)
def test_sizes_within_bounds(task):
    spec = TaskSpec(task, min_size=2, max_size=5, seed=1)
    for s in generate_dataset(spec, 30):
        assert 2 <= s.input.height <= 5 and 2 <= s.input.width <= 5
        assert s.output.height <= 5 and s.output.width <= 5


def test_identity_and_hflip_examples():
    arr = np.array([[1, 2]])
    assert apply_rule(TaskSpec("identity"), arr).tolist() == [[1, 2]]
    assert apply_rule(TaskSpec("hflip"), arr).tolist() == [[2, 1]]
    assert apply_rule(TaskSpec("vflip"), np.array([[1], [2]])).tolist() == [[2], [1]]


def test_crop_worked_example():
    arr = np.zeros((4, 6), dtype=int)
    arr[1:3, 3:5] = [[4, 0], [4, 4]]
    assert apply_rule(TaskSpec("crop_to_object"), arr).tolist() == [[4, 0], [4, 4]]


def test_crop_outputs_match_bounding_boxes():
    for s in generate_dataset(TaskSpec("crop_to_object", max_size=8, seed=5), 60):
        cl = connected_components(s.input, 8)
        assert cl.num_components == 1
        (box,) = bounding_boxes(cl)
        assert (s.output.height, s.output.width) == (box.height, box.width)


def test_crop_rejects_multiple_objects():
    with pytest.raises(BadSpec):
        apply_rule(TaskSpec("crop_to_object"), np.array([[1, 0, 1]]))


def test_color_map_is_an_invertible_non_identity_permutation():
    spec = TaskSpec("color_map", seed=3)
    perm = spec.color_permutation
    assert sorted(perm.values()) == list(spec.palette)
    assert any(k != v for k, v in perm.items())
    inverse = {v: k for k, v in perm.items()}
    for s in generate_dataset(spec, 25):
        back = np.vectorize(inverse.get)(s.output.to_array())
        assert np.array_equal(back, s.input.to_array())


def test_translate_shifts_and_drops():
    spec = TaskSpec("translate", shift=(1, 0))
    out = apply_rule(spec, np.array([[3, 0, 5], [0, 7, 0]]))
    assert out.tolist() == [[0, 3, 0], [0, 0, 7]]


def test_border_draw():
    out = apply_rule(TaskSpec("border_draw", color=5), np.zeros((3, 3), dtype=int))
    assert out.tolist() == [[5, 5, 5], [5, 0, 5], [5, 5, 5]]


def test_recolor_largest_object():
    arr = np.array([[1, 1, 0], [0, 0, 0], [0, 0, 2]])
    assert apply_rule(TaskSpec("recolor_largest_object", color=5), arr).tolist() == [[5, 5, 0], [0, 0, 0], [0, 0, 2]]
    for s in generate_dataset(TaskSpec("recolor_largest_object", max_size=6, seed=1), 20):
        assert (s.output.to_array() == 5).sum() >= 1


@pytest.mark.parametrize(
    "kwargs",
    [dict(task_id="nope"), dict(task_id="identity", min_size=4, max_size=3), dict(task_id="identity", palette=()),
     dict(task_id="crop_to_object", palette=(1, 2)), dict(task_id="recolor_largest_object", palette=(0, 5))],
)
def test_bad_specs(kwargs):
    with pytest.raises(BadSpec):
        TaskSpec(**kwargs)


def test_splits_use_disjoint_indices():
    spec = TaskSpec("identity", seed=4)
    ds = generate_splits(spec, 5, 2, 3)
    assert [s.split for s in ds] == ["train"] * 5 + ["val"] * 2 + ["test"] * 3
    assert ds.split("test")[0] == make_sample(spec, 7, "test")


def test_jsonl_round_trip(tmp_path):
    ds = generate_splits(TaskSpec("color_map", seed=0), 4, 1, 1)
    write_dataset(ds, tmp_path / "d.jsonl")
    back = read_dataset(tmp_path / "d.jsonl")
    assert back.samples == ds.samples
    line = json.loads((tmp_path / "d.jsonl").read_text().splitlines()[0])
    assert set(line) == {"input", "output", "split"}


def test_malformed_line_reports_number(tmp_path):
    good = sample_to_json(Sample(Grid.from_rows([[1]]), Grid.from_rows([[1]])))
    (tmp_path / "d.jsonl").write_text(good + "\n" + good + "\n{broken\n")
    with pytest.raises(ParseError) as info:
        read_dataset(tmp_path / "d.jsonl")
    assert info.value.line == 3 and "line 3" in str(info.value)


@pytest.mark.parametrize(
    "line",
    ['{"input": [[1]]}', '{"input": [[1, 2], [3]], "output": [[1]]}', '{"input": [[12]], "output": [[1]]}',
     '{"input": [[1]], "output": [[1]], "split": "dev"}', '[1, 2]'],
)
def test_invalid_records(tmp_path, line):
    (tmp_path / "d.jsonl").write_text(line + "\n")
    with pytest.raises(ParseError):
        read_dataset(tmp_path / "d.jsonl")


def test_empty_file(tmp_path):
    (tmp_path / "e.jsonl").write_text("")
    assert read_dataset(tmp_path / "e.jsonl") == Dataset()


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        read_dataset(tmp_path / "missing.jsonl")
