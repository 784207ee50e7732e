import copy
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fake_annotation
from fishlen.dataset_io import (
    TEST_GROUPS,
    VALIDATION_GROUPS,
    DatasetError,
    Prediction,
    Regime,
    SplitConfig,
    load_dataset,
    load_predictions,
    parse_dataset,
    parse_predictions,
    save_predictions,
    select,
    select_split,
)
from fishlen.maskops import BinaryMask, encode_rle, rasterize
from fishlen.synth import SynthCamera, SynthSceneSpec, generate_scene


@pytest.fixture(scope="module")
def full_index():
    return parse_dataset(fake_annotation())


def write(tmp_path, obj, name="a.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return p


# ---------------------------------------------------------------- loading


def test_empty_file(tmp_path):
    idx = load_dataset(write(tmp_path, {"images": [], "annotations": [], "categories": []}))
    assert (len(idx.images), len(idx.instances), idx.categories) == (0, 0, ())


def test_synthetic_counts_roundtrip(tmp_path):
    cam = SynthCamera.default()
    images, anns = [], []
    for i, n in enumerate((2, 2, 3)):
        spec = SynthSceneSpec(cam, n_fish=n, seed=i, image_id=i + 1, first_annotation_id=len(anns) + 1,
                              fish_ids=list(range(10 * i + 1, 10 * i + 1 + n)))
        s = generate_scene(spec)
        images += s.annotation["images"]
        anns += s.annotation["annotations"]
    data = {"images": images, "annotations": anns, "categories": s.annotation["categories"]}
    idx = load_dataset(write(tmp_path, data))
    assert (len(idx.images), len(idx.instances)) == (3, 7)


def test_full_layout_counts(full_index):
    assert len(full_index.images) == 1500
    assert sorted(full_index.groups) == list(range(1, 26))
    assert all(len(v) == 60 for v in full_index.groups.values())


def test_malformed_json_located(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"images": [\n  {"id": 1,,}]}')
    with pytest.raises(DatasetError, match="line 2"):
        load_dataset(p)


def mutate(fn):
    d = fake_annotation(groups=[1, 2], per_set=1)
    fn(d)
    return d


@pytest.mark.parametrize(
    "fn, msg",
    [
        (lambda d: d["annotations"][0].update(image_id=999), "unknown image id 999"),
        (lambda d: d["annotations"][0].update(category_id=9), "unknown category"),
        (lambda d: d["annotations"][0]["attributes"].update(length_mm=103), "multiple of 5"),
        (lambda d: d["annotations"][0]["attributes"].update(length_mm=0), "multiple of 5"),
        (lambda d: d["annotations"][0]["attributes"].pop("fish_id"), "annotations\\[0\\]"),
        (lambda d: d["images"][0]["attributes"].update(set="set3"), "set must be"),
        (lambda d: d["images"][1].update(id=1), "duplicate image id"),
        (lambda d: d["annotations"][-1]["attributes"].update(fish_id=1), "appears in groups"),
        (lambda d: d["annotations"][2]["attributes"].update(length_mm=500), "inconsistent"),
        (lambda d: d.update(images={}), "must be an array"),
    ],
)
def test_invariant_violations(fn, msg):
    with pytest.raises(DatasetError, match=msg):
        parse_dataset(mutate(fn))


def test_fish_id_shared_across_images_of_a_group(full_index):
    g1 = set(full_index.groups[1])
    ids = {(a.fish_id, a.image_id) for a in full_index.instances if a.image_id in g1}
    assert len({f for f, _ in ids}) == 2
    assert len(ids) == 120


def test_category_remap_merges():
    idx = parse_dataset(fake_annotation(groups=[1], per_set=1), category_map={"cod": "fish", "hake": "fish"})
    assert idx.categories == ((1, "fish"),)
    assert {a.category_id for a in idx.instances} == {1}


def test_custom_image_attributes():
    d = fake_annotation(groups=[4], per_set=1)
    for im in d["images"]:
        im.pop("attributes")

    def from_name(im):
        g, s, _ = im["file_name"].split("_")
        return int(g[1:]), s

    idx = parse_dataset(d, image_attributes=from_name)
    assert list(idx.groups) == [4]


# ---------------------------------------------------------------- predictions


def one_image_index():
    return parse_dataset(fake_annotation(groups=[1], per_set=1))


def test_single_prediction(tmp_path):
    idx = one_image_index()
    p = write(tmp_path, [{"image_id": 1, "category_id": 1, "segmentation": [[0, 0, 4, 0, 4, 4]], "score": 0.95}])
    preds = load_predictions(p, idx)
    assert len(preds) == 1 and preds[0].score == 0.95 and preds[0].length_mm is None
    assert preds[0].mask().width == 8


@pytest.mark.parametrize(
    "patch, msg",
    [
        ({"image_id": 77}, "unknown image id 77"),
        ({"category_id": 5}, "unknown category id 5"),
        ({"score": 1.5}, "outside"),
        ({"score": -0.1}, "outside"),
        ({"segmentation": [[0, 0, 0, 0, 0, 0]]}, "empty"),
    ],
)
def test_prediction_errors(patch, msg):
    base = {"image_id": 1, "category_id": 1, "segmentation": [[0, 0, 4, 0, 4, 4]], "score": 0.5}
    with pytest.raises(DatasetError, match=msg):
        parse_predictions([base | patch], one_image_index())


def test_predictions_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    idx = one_image_index()
    preds = []
    for k in range(25):
        a = rng.random((8, 8)) < 0.4
        a[0, 0] = True
        seg = encode_rle(BinaryMask.from_array(a))
        ln = None if k % 3 else float(rng.uniform(100, 500))
        preds.append(Prediction(1 + k % 3, 1 + k % 2, seg, round(float(rng.random()), 4), 8, 8, ln))
    save_predictions(preds, tmp_path / "p.json")
    back = load_predictions(tmp_path / "p.json", idx)

    def key(p):
        return (p.image_id, p.category_id, p.score, p.length_mm, p.mask().full().tobytes())

    assert sorted(map(key, back)) == sorted(map(key, preds))


def test_annotation_decode_reencode_identical(full_index):
    for a in full_index.instances[:20]:
        m = a.mask()
        assert rasterize(encode_rle(m), m.width, m.height) == m


# ---------------------------------------------------------------- selection


def test_combined_all_groups_is_identity(full_index):
    assert select(full_index, None, "combined") == full_index
    assert select(full_index, range(1, 26), Regime.COMBINED) == full_index


def test_test_split_counts(full_index):
    comb = select(full_index, TEST_GROUPS, "combined")
    sep = select(full_index, TEST_GROUPS, "separated")
    touch = select(full_index, TEST_GROUPS, "touching")
    assert len(comb.images) == 300
    assert len(sep.images) == 200
    assert len(touch.images) == 100
    assert select_split(full_index, SplitConfig()) == comb


def test_select_unknown_group(full_index):
    with pytest.raises(DatasetError, match="26"):
        select(full_index, [1, 26])


def test_split_config_defaults_disjoint():
    assert not TEST_GROUPS & VALIDATION_GROUPS
    with pytest.raises(ValueError):
        SplitConfig(frozenset({1, 2}), frozenset({2, 3}))
    avail = range(1, 26)
    train = SplitConfig().groups("train", avail)
    assert len(train) == 15 and not train & (TEST_GROUPS | VALIDATION_GROUPS)


@settings(max_examples=30, deadline=None)
@given(st.sets(st.integers(1, 25), min_size=1), st.sampled_from(list(Regime)))
def test_select_idempotent_and_partitioned(full_index, groups, regime):
    once = select(full_index, groups, regime)
    assert select(once, groups, regime) == once
    sep = select(full_index, groups, "separated")
    touch = select(full_index, groups, "touching")
    comb = select(full_index, groups, "combined")
    assert len(sep.images) + len(touch.images) == len(comb.images)
    assert len(sep.instances) + len(touch.instances) == len(comb.instances)
    assert {im.id for im in sep.images}.isdisjoint(im.id for im in touch.images)


def test_index_is_immutable(full_index):
    with pytest.raises(Exception):
        full_index.images = ()
    assert isinstance(copy.deepcopy(full_index), type(full_index))
