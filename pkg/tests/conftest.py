import numpy as np
import pytest

from fishlen.synth import generate_dataset, synthetic_predictions, write_dataset


def fake_annotation(groups=range(1, 26), per_set=20, fish_per_image=2) -> dict:
    """Metadata-only dataset: every image holds tiny square fish, 20 images per set."""
    images, anns, fish = [], [], 1
    for g in groups:
        ids = list(range(fish, fish + fish_per_image))
        fish += fish_per_image
        for s in ("set1", "set2", "all"):
            for _ in range(per_set):
                iid = len(images) + 1
                images.append({"id": iid, "width": 8, "height": 8, "file_name": f"g{g}_{s}_{iid}.png",
                               "attributes": {"group": g, "set": s}})
                for k, fid in enumerate(ids):
                    anns.append({
                        "id": len(anns) + 1, "image_id": iid, "category_id": 1 + k % 2,
                        "segmentation": [[k * 3, 0, k * 3 + 2, 0, k * 3 + 2, 2, k * 3, 2]],
                        "attributes": {"fish_id": fid, "length_mm": 100 + 5 * fid},
                    })
    return {"images": images, "annotations": anns, "categories": [{"id": 1, "name": "cod"}, {"id": 2, "name": "hake"}]}


@pytest.fixture(scope="session")
def synth_tree(tmp_path_factory):
    """Two-group synthetic dataset written to disk, with derived predictions."""
    out = tmp_path_factory.mktemp("synth")
    ds = generate_dataset(groups=(3, 7), fish_per_group=4, images_per_set=1, seed=5)
    preds = synthetic_predictions(ds.annotation, seed=5)
    write_dataset(ds, out, preds)
    return out, ds


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
